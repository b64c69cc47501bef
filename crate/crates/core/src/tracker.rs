//! Tracking-by-detection with learned affinities and Hungarian assignment.
//!
//! Each frame, live tracks are scored against the frame's detections by an
//! [`Affinity`] model; costs above the gate are forbidden and the rest are
//! matched with [`hungarian`]. Tracks start tentative, become confirmed after
//! `init_hits` consecutive matches, coast on their mean velocity while missed
//! and terminate after more than `max_age` misses.

use alloc::format;
use alloc::vec::Vec;

use crate::assignment::{hungarian, CostMatrix};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, BoxSize, Position};
use crate::metric::{euclidean, MetricNet, TrackQuery};
use crate::simulator::{Bundle, Detection, TripletInstance};
use crate::verification::VerificationNet;

/// Scores how well each detection continues each track (lower is better).
pub trait Affinity {
    /// Number of past positions the model consumes.
    fn window(&self) -> usize;

    /// Costs with one row per track and one column per detection.
    fn cost_rows(
        &self,
        tracks: &[TrackQuery<'_>],
        descriptors: &[&[f64]],
        positions: &[Position],
    ) -> Result<Vec<Vec<f64>>>;

    /// Cost between two bundles on the same scale as [`Affinity::cost_rows`].
    fn pair_cost(&self, left: &Bundle, right: &Bundle) -> Result<f64>;
}

impl Affinity for MetricNet {
    fn window(&self) -> usize {
        self.encoder.window()
    }

    fn cost_rows(
        &self,
        tracks: &[TrackQuery<'_>],
        descriptors: &[&[f64]],
        positions: &[Position],
    ) -> Result<Vec<Vec<f64>>> {
        MetricNet::cost_rows(self, tracks, descriptors, positions)
    }

    fn pair_cost(&self, left: &Bundle, right: &Bundle) -> Result<f64> {
        let e = self.embed_all(&[left, right])?;
        Ok(euclidean(&e[0], &e[1]))
    }
}

impl Affinity for VerificationNet {
    fn window(&self) -> usize {
        self.encoder.window()
    }

    fn cost_rows(
        &self,
        tracks: &[TrackQuery<'_>],
        descriptors: &[&[f64]],
        positions: &[Position],
    ) -> Result<Vec<Vec<f64>>> {
        VerificationNet::cost_rows(self, tracks, descriptors, positions)
    }

    fn pair_cost(&self, left: &Bundle, right: &Bundle) -> Result<f64> {
        Ok(1.0 - self.same_prob(left, right)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    /// Costs above the gate are never assigned.
    pub gate: f64,
    /// Misses tolerated before a confirmed track terminates.
    pub max_age: u32,
    /// Consecutive matches that confirm a new track.
    pub init_hits: u32,
    /// Position gate for tracks that are not yet confirmed.
    pub young_track_radius: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            gate: f64::INFINITY,
            max_age: 5,
            init_hits: 2,
            young_track_radius: 0.05,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gate.is_nan() || self.gate < 0.0 {
            return Err(Error::Config(format!(
                "tracker gate must be ≥ 0, got {}",
                self.gate
            )));
        }
        if self.init_hits == 0 {
            return Err(Error::Config("init_hits must be at least 1".into()));
        }
        if !(self.young_track_radius > 0.0) {
            return Err(Error::Config(format!(
                "young_track_radius must be positive, got {}",
                self.young_track_radius
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackState {
    Tentative,
    Confirmed,
    Terminated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    /// Creation-order serial; output ids are assigned afterwards.
    pub serial: u32,
    pub state: TrackState,
    /// One position per frame since birth, coasted frames included, clamped
    /// to the image.
    pub positions: Vec<Position>,
    pub descriptor: Vec<f64>,
    pub size: BoxSize,
    pub misses: u32,
    pub hits: u32,
    /// Matched `(frame, position, size)` observations.
    pub observations: Vec<(u32, Position, BoxSize)>,
    pub ever_confirmed: bool,
}

impl Track {
    fn spawn(serial: u32, det: &Detection, init_hits: u32) -> Self {
        let state = if init_hits <= 1 {
            TrackState::Confirmed
        } else {
            TrackState::Tentative
        };
        Self {
            serial,
            state,
            positions: alloc::vec![det.position.clamped()],
            descriptor: det.descriptor.clone(),
            size: det.size,
            misses: 0,
            hits: 1,
            observations: alloc::vec![(det.frame, det.position, det.size)],
            ever_confirmed: state == TrackState::Confirmed,
        }
    }

    pub fn last_position(&self) -> Position {
        *self
            .positions
            .last()
            .expect("tracks hold at least one position")
    }

    /// Mean displacement over the last (up to) three steps.
    pub fn velocity(&self) -> (f64, f64) {
        let n = self.positions.len();
        let steps = (n - 1).min(3);
        if steps == 0 {
            return (0.0, 0.0);
        }
        let (a, b) = (self.positions[n - 1 - steps], self.positions[n - 1]);
        ((b.x - a.x) / steps as f64, (b.y - a.y) / steps as f64)
    }

    fn query(&self) -> TrackQuery<'_> {
        TrackQuery {
            positions: &self.positions,
            descriptor: &self.descriptor,
        }
    }

    fn matched(&mut self, det: &Detection, init_hits: u32) {
        self.positions.push(det.position.clamped());
        self.descriptor.clone_from(&det.descriptor);
        self.size = det.size;
        self.misses = 0;
        self.hits += 1;
        self.observations.push((det.frame, det.position, det.size));
        if self.state == TrackState::Tentative && self.hits >= init_hits {
            self.state = TrackState::Confirmed;
            self.ever_confirmed = true;
        }
    }

    /// Returns false when the track dies.
    fn missed(&mut self, max_age: u32, coast: bool) -> bool {
        if self.state == TrackState::Tentative {
            self.state = TrackState::Terminated;
            return false;
        }
        self.misses += 1;
        let next = if coast {
            let (vx, vy) = self.velocity();
            let p = self.last_position();
            Position::new(p.x + vx, p.y + vy).clamped()
        } else {
            self.last_position()
        };
        self.positions.push(next);
        if self.misses > max_age {
            self.state = TrackState::Terminated;
            return false;
        }
        true
    }
}

/// One output box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedBox {
    pub frame: u32,
    /// 1-based, in order of track creation among reported tracks.
    pub id: u32,
    pub position: Position,
    pub size: BoxSize,
}

impl TrackedBox {
    pub fn bbox(&self) -> BBox {
        BBox::centered(self.position, self.size)
    }
}

/// Track lifecycle shared by the learned and the IoU trackers.
#[derive(Debug, Clone, Default)]
struct TrackBook {
    live: Vec<Track>,
    finished: Vec<Track>,
    next_serial: u32,
    last_frame: Option<u32>,
}

impl TrackBook {
    fn check_frame(&mut self, frame: u32) -> Result<u32> {
        let gap = match self.last_frame {
            Some(last) if frame <= last => return Err(Error::FrameOrder { last, got: frame }),
            Some(last) => frame - last - 1,
            None => 0,
        };
        self.last_frame = Some(frame);
        Ok(gap)
    }

    /// Applies an assignment: matched pairs, misses, and births.
    fn apply(
        &mut self,
        matches: &[(usize, usize)],
        detections: &[Detection],
        config: &TrackerConfig,
        coast: bool,
    ) {
        let mut det_used = alloc::vec![false; detections.len()];
        let mut track_matched = alloc::vec![None; self.live.len()];
        for &(t, d) in matches {
            track_matched[t] = Some(d);
            det_used[d] = true;
        }
        let mut survivors = Vec::with_capacity(self.live.len());
        for (mut track, m) in self.live.drain(..).zip(track_matched) {
            let alive = match m {
                Some(d) => {
                    track.matched(&detections[d], config.init_hits);
                    true
                }
                None => track.missed(config.max_age, coast),
            };
            if alive {
                survivors.push(track);
            } else {
                self.finished.push(track);
            }
        }
        self.live = survivors;
        for (d, det) in detections.iter().enumerate() {
            if !det_used[d] {
                self.live
                    .push(Track::spawn(self.next_serial, det, config.init_hits));
                self.next_serial += 1;
            }
        }
    }

    fn coast_gap(&mut self, gap: u32, config: &TrackerConfig, coast: bool) {
        for _ in 0..gap {
            self.apply(&[], &[], config, coast);
        }
    }

    fn finish(mut self) -> Vec<TrackedBox> {
        self.finished.append(&mut self.live);
        self.finished.sort_by_key(|t| t.serial);
        let mut out = Vec::new();
        let mut id = 0;
        for t in self.finished.iter().filter(|t| t.ever_confirmed) {
            id += 1;
            out.extend(
                t.observations
                    .iter()
                    .map(|&(frame, position, size)| TrackedBox {
                        frame,
                        id,
                        position,
                        size,
                    }),
            );
        }
        out.sort_by_key(|b| (b.frame, b.id));
        out
    }
}

/// Online tracker driven by a learned affinity.
pub struct Tracker<'a, A: Affinity + ?Sized> {
    affinity: &'a A,
    config: TrackerConfig,
    book: TrackBook,
}

impl<'a, A: Affinity + ?Sized> Tracker<'a, A> {
    pub fn new(affinity: &'a A, config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            affinity,
            config,
            book: TrackBook::default(),
        })
    }

    pub fn live_tracks(&self) -> &[Track] {
        &self.book.live
    }

    /// Gated cost matrix between live tracks and `detections`.
    pub fn cost_matrix(&self, detections: &[Detection]) -> Result<CostMatrix> {
        let tracks = &self.book.live;
        if tracks.is_empty() || detections.is_empty() {
            return Ok(CostMatrix::forbidden(tracks.len(), detections.len()));
        }
        let queries: Vec<TrackQuery<'_>> = tracks.iter().map(Track::query).collect();
        let descriptors: Vec<&[f64]> = detections.iter().map(|d| d.descriptor.as_slice()).collect();
        let positions: Vec<Position> = detections.iter().map(|d| d.position.clamped()).collect();
        let rows = self
            .affinity
            .cost_rows(&queries, &descriptors, &positions)?;
        let mut costs = CostMatrix::gated(&rows, self.config.gate)?;
        for (i, t) in tracks.iter().enumerate() {
            if t.state == TrackState::Confirmed {
                continue;
            }
            let p = t.last_position();
            for (j, q) in positions.iter().enumerate() {
                if p.distance(q) > self.config.young_track_radius {
                    costs.forbid(i, j);
                }
            }
        }
        Ok(costs)
    }

    /// Processes one frame; frames must arrive in increasing order.
    pub fn step(&mut self, frame: u32, detections: &[Detection]) -> Result<()> {
        let gap = self.book.check_frame(frame)?;
        self.book.coast_gap(gap, &self.config, true);
        let costs = self.cost_matrix(detections)?;
        let assignment = hungarian(&costs);
        self.book
            .apply(&assignment.matches, detections, &self.config, true);
        Ok(())
    }

    /// Boxes of every track that was ever confirmed, at its matched frames.
    pub fn finish(self) -> Vec<TrackedBox> {
        self.book.finish()
    }
}

/// Runs the learned tracker over frame-grouped detections (index = frame).
pub fn run_tracker<A: Affinity + ?Sized>(
    affinity: &A,
    config: &TrackerConfig,
    frames: &[Vec<Detection>],
) -> Result<Vec<TrackedBox>> {
    let mut tracker = Tracker::new(affinity, *config)?;
    for (f, dets) in frames.iter().enumerate() {
        tracker.step(f as u32, dets)?;
    }
    Ok(tracker.finish())
}

/// Baseline: greedy highest-IoU matching against each track's last box,
/// same lifecycle, no coasting.
#[derive(Debug, Clone)]
pub struct GreedyIouTracker {
    pub iou_threshold: f64,
    config: TrackerConfig,
    book: TrackBook,
}

impl GreedyIouTracker {
    pub const DEFAULT_THRESHOLD: f64 = 0.3;

    pub fn new(iou_threshold: f64, config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "IoU threshold must lie in (0, 1], got {iou_threshold}"
            )));
        }
        Ok(Self {
            iou_threshold,
            config,
            book: TrackBook::default(),
        })
    }

    pub fn step(&mut self, frame: u32, detections: &[Detection]) -> Result<()> {
        let gap = self.book.check_frame(frame)?;
        self.book.coast_gap(gap, &self.config, false);
        let mut candidates = Vec::new();
        for (t, track) in self.book.live.iter().enumerate() {
            let last = BBox::centered(track.last_position(), track.size);
            for (d, det) in detections.iter().enumerate() {
                let overlap = iou(&last, &BBox::centered(det.position, det.size))?;
                if overlap >= self.iou_threshold {
                    candidates.push((overlap, t, d));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut track_used = alloc::vec![false; self.book.live.len()];
        let mut det_used = alloc::vec![false; detections.len()];
        let mut matches = Vec::new();
        for (_, t, d) in candidates {
            if !track_used[t] && !det_used[d] {
                track_used[t] = true;
                det_used[d] = true;
                matches.push((t, d));
            }
        }
        self.book.apply(&matches, detections, &self.config, false);
        Ok(())
    }

    pub fn finish(self) -> Vec<TrackedBox> {
        self.book.finish()
    }
}

pub fn run_iou_tracker(
    iou_threshold: f64,
    config: &TrackerConfig,
    frames: &[Vec<Detection>],
) -> Result<Vec<TrackedBox>> {
    let mut tracker = GreedyIouTracker::new(iou_threshold, *config)?;
    for (f, dets) in frames.iter().enumerate() {
        tracker.step(f as u32, dets)?;
    }
    Ok(tracker.finish())
}

/// Costs between the anchor and positive of each triplet: same-identity
/// pairs at different timestamps.
pub fn intra_identity_costs<A: Affinity + ?Sized>(
    affinity: &A,
    triplets: &[TripletInstance],
) -> Result<Vec<f64>> {
    triplets
        .iter()
        .map(|t| affinity.pair_cost(&t.anchor, &t.positive))
        .collect()
}

/// Linear-interpolated quantile of `values` (`q` in `[0, 1]`).
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Position-and-descriptor distance; an exact stand-in for a learned model.
    struct Oracle;

    impl Affinity for Oracle {
        fn window(&self) -> usize {
            1
        }

        fn cost_rows(
            &self,
            tracks: &[TrackQuery<'_>],
            descriptors: &[&[f64]],
            positions: &[Position],
        ) -> Result<Vec<Vec<f64>>> {
            Ok(tracks
                .iter()
                .map(|t| {
                    let p = *t.positions.last().unwrap();
                    positions
                        .iter()
                        .zip(descriptors)
                        .map(|(q, d)| {
                            let app: f64 = t
                                .descriptor
                                .iter()
                                .zip(*d)
                                .map(|(a, b)| (a - b).abs())
                                .sum();
                            p.distance(q) + app
                        })
                        .collect()
                })
                .collect())
        }

        fn pair_cost(&self, left: &Bundle, right: &Bundle) -> Result<f64> {
            Ok(left
                .descriptor
                .iter()
                .zip(&right.descriptor)
                .map(|(a, b)| (a - b).abs())
                .sum())
        }
    }

    fn det(frame: u32, x: f64, y: f64, desc: f64) -> Detection {
        Detection {
            frame,
            position: Position::new(x, y),
            size: BoxSize {
                width: 0.04,
                height: 0.1,
            },
            descriptor: alloc::vec![desc],
            confidence: 1.0,
            truth: None,
        }
    }

    fn config() -> TrackerConfig {
        TrackerConfig {
            gate: 0.5,
            ..TrackerConfig::default()
        }
    }

    #[test]
    fn single_clean_track_keeps_one_id() {
        let frames: Vec<Vec<Detection>> = (0..20)
            .map(|f| alloc::vec![det(f, 0.01 * f as f64, 0.0, 1.0)])
            .collect();
        let out = run_tracker(&Oracle, &config(), &frames).unwrap();
        assert_eq!(out.len(), 20);
        assert!(out.iter().all(|b| b.id == 1));
    }

    #[test]
    fn detections_past_the_border_are_clamped_in_history_only() {
        let frames: Vec<Vec<Detection>> = (0..3)
            .map(|f| alloc::vec![det(f, 0.49 + 0.01 * f as f64, 0.0, 1.0)])
            .collect();
        let mut t = Tracker::new(&Oracle, config()).unwrap();
        for (f, dets) in frames.iter().enumerate() {
            t.step(f as u32, dets).unwrap();
        }
        assert!(t.live_tracks()[0].positions.iter().all(Position::in_bounds));
        let out = t.finish();
        assert_eq!(out.len(), 3);
        assert!((out[2].position.x - 0.51).abs() < 1e-12);
    }

    #[test]
    fn track_terminates_after_max_age_misses() {
        let mut t = Tracker::new(&Oracle, config()).unwrap();
        t.step(0, &[det(0, 0.0, 0.0, 1.0)]).unwrap();
        t.step(1, &[det(1, 0.01, 0.0, 1.0)]).unwrap();
        for f in 2..=6 {
            t.step(f, &[]).unwrap();
            assert_eq!(t.live_tracks().len(), 1, "frame {f}");
        }
        t.step(7, &[]).unwrap();
        assert!(t.live_tracks().is_empty());
    }

    #[test]
    fn missed_tracks_coast_on_velocity() {
        let mut t = Tracker::new(&Oracle, config()).unwrap();
        for f in 0..4 {
            t.step(f, &[det(f, 0.01 * f as f64, 0.0, 1.0)]).unwrap();
        }
        t.step(4, &[]).unwrap();
        let p = t.live_tracks()[0].last_position();
        assert!((p.x - 0.04).abs() < 1e-12 && p.y.abs() < 1e-12);
        t.step(5, &[det(5, 0.05, 0.0, 1.0)]).unwrap();
        let out = t.finish();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|b| b.id == 1));
    }

    #[test]
    fn tentative_tracks_without_a_second_hit_are_dropped() {
        let frames = alloc::vec![
            alloc::vec![det(0, 0.0, 0.0, 1.0)],
            alloc::vec![],
            alloc::vec![]
        ];
        assert!(run_tracker(&Oracle, &config(), &frames).unwrap().is_empty());
    }

    #[test]
    fn frames_must_increase() {
        let mut t = Tracker::new(&Oracle, config()).unwrap();
        t.step(3, &[]).unwrap();
        assert!(matches!(
            t.step(3, &[]),
            Err(Error::FrameOrder { last: 3, got: 3 })
        ));
    }

    #[test]
    fn zero_gate_matches_nothing() {
        let mut t = Tracker::new(
            &Oracle,
            TrackerConfig {
                gate: 0.0,
                ..config()
            },
        )
        .unwrap();
        t.step(0, &[det(0, 0.0, 0.0, 1.0)]).unwrap();
        let c = t
            .cost_matrix(&[det(1, 0.01, 0.0, 1.0), det(1, 0.3, 0.0, 2.0)])
            .unwrap();
        assert_eq!((c.rows(), c.cols(), c.allowed()), (1, 2, 0));
    }

    #[test]
    fn young_tracks_are_position_gated() {
        let mut t = Tracker::new(
            &Oracle,
            TrackerConfig {
                gate: 10.0,
                ..config()
            },
        )
        .unwrap();
        t.step(0, &[det(0, 0.0, 0.0, 1.0)]).unwrap();
        let c = t.cost_matrix(&[det(1, 0.2, 0.0, 1.0)]).unwrap();
        assert_eq!(c.allowed(), 0);
    }

    #[test]
    fn crossing_targets_keep_identities() {
        let frames: Vec<Vec<Detection>> = (0..30)
            .map(|f| {
                let x = -0.15 + 0.01 * f as f64;
                alloc::vec![det(f, x, 0.0, 1.0), det(f, -x, 0.0, 3.0)]
            })
            .collect();
        let out = run_tracker(&Oracle, &config(), &frames).unwrap();
        assert_eq!(out.len(), 60);
        for b in &out {
            let expected = if b.id == 1 {
                -0.15 + 0.01 * b.frame as f64
            } else {
                0.15 - 0.01 * b.frame as f64
            };
            assert!((b.position.x - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn iou_baseline_follows_overlapping_boxes() {
        let frames: Vec<Vec<Detection>> = (0..10)
            .map(|f| alloc::vec![det(f, 0.005 * f as f64, 0.0, 1.0)])
            .collect();
        let out = run_iou_tracker(0.3, &config(), &frames).unwrap();
        assert_eq!(out.len(), 10);
        assert!(out.iter().all(|b| b.id == 1));
    }

    #[test]
    fn quantiles_interpolate() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), Some(2.0));
        assert_eq!(quantile(&[0.0, 10.0], 0.95), Some(9.5));
        assert_eq!(quantile(&[], 0.5), None);
    }
}
