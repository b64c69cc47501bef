//! CLEAR-MOT evaluation.
//!
//! Per frame, ground-truth objects keep their previous hypothesis while the
//! overlap stays above the threshold; the rest are matched by Hungarian
//! assignment on `1 − IoU`. MOTP is reported as mean IoU of the matches.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::assignment::{hungarian, CostMatrix};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

/// Matched for at least this fraction of its lifespan: mostly tracked.
pub const MOSTLY_TRACKED: f64 = 0.8;
/// Matched for less than this fraction: mostly lost.
pub const MOSTLY_LOST: f64 = 0.2;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotRecord {
    pub frame: u32,
    pub id: u32,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameEvents {
    pub frame: u32,
    /// `(gt id, hypothesis id, IoU)`.
    pub matches: Vec<(u32, u32, f64)>,
    /// Ground-truth ids whose hypothesis changed in this frame.
    pub switches: Vec<u32>,
    pub misses: Vec<u32>,
    pub false_positives: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotReport {
    pub mota: f64,
    /// Mean IoU over all matches.
    pub motp: f64,
    /// Fraction of ground-truth trajectories mostly tracked.
    pub mt: f64,
    /// Fraction of ground-truth trajectories mostly lost.
    pub ml: f64,
    pub false_positives: usize,
    pub misses: usize,
    pub id_switches: usize,
    pub fragmentations: usize,
    pub matches: usize,
    pub gt_boxes: usize,
    pub hypothesis_boxes: usize,
    pub gt_trajectories: usize,
    pub events: Vec<FrameEvents>,
}

impl MotReport {
    /// `(name, value)` rows in a fixed order.
    pub fn summary(&self) -> [(&'static str, f64); 10] {
        let values = [
            self.mota,
            self.motp,
            self.mt,
            self.ml,
            self.false_positives as f64,
            self.misses as f64,
            self.id_switches as f64,
            self.fragmentations as f64,
            self.gt_boxes as f64,
            self.matches as f64,
        ];
        core::array::from_fn(|i| (SUMMARY_FIELDS[i], values[i]))
    }
}

/// Names of the [`MotReport::summary`] entries, in order.
pub const SUMMARY_FIELDS: [&str; 10] = [
    "MOTA", "MOTP", "MT", "ML", "FP", "FN", "IDS", "FM", "GT", "matches",
];

fn by_frame(records: &[MotRecord], what: &str) -> Result<BTreeMap<u32, Vec<MotRecord>>> {
    let mut out: BTreeMap<u32, Vec<MotRecord>> = BTreeMap::new();
    for r in records {
        r.bbox.validate()?;
        let slot = out.entry(r.frame).or_default();
        if slot.iter().any(|o| o.id == r.id) {
            log::debug!("duplicate {what} id {} in frame {}", r.id, r.frame);
            return Err(Error::DuplicateId {
                frame: r.frame,
                id: r.id,
            });
        }
        slot.push(*r);
    }
    for v in out.values_mut() {
        v.sort_by_key(|r| r.id);
    }
    Ok(out)
}

#[derive(Default)]
struct GtState {
    last_hypothesis: Option<u32>,
    lifespan: usize,
    matched: usize,
    was_matched: bool,
    interrupted: bool,
}

/// CLEAR-MOT metrics of `hypotheses` against `ground_truth`.
pub fn evaluate(
    ground_truth: &[MotRecord],
    hypotheses: &[MotRecord],
    iou_threshold: f64,
) -> Result<MotReport> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(Error::Config(alloc::format!(
            "IoU threshold must lie in (0, 1), got {iou_threshold}"
        )));
    }
    if ground_truth.is_empty() {
        return Err(Error::InsufficientData("ground truth is empty".into()));
    }
    let gt = by_frame(ground_truth, "ground-truth")?;
    let hyp = by_frame(hypotheses, "hypothesis")?;
    let frames: BTreeSet<u32> = gt.keys().chain(hyp.keys()).copied().collect();

    let mut state: BTreeMap<u32, GtState> = BTreeMap::new();
    let mut events = Vec::with_capacity(frames.len());
    let (mut fp, mut fn_, mut ids, mut fm, mut matches) = (0, 0, 0, 0, 0);
    let mut iou_sum = 0.0;
    let empty = Vec::new();
    for frame in frames {
        let g = gt.get(&frame).unwrap_or(&empty);
        let h = hyp.get(&frame).unwrap_or(&empty);
        let mut overlap = alloc::vec![alloc::vec![0.0; h.len()]; g.len()];
        for (i, a) in g.iter().enumerate() {
            for (j, b) in h.iter().enumerate() {
                overlap[i][j] = iou(&a.bbox, &b.bbox)?;
            }
        }

        let mut gt_match: Vec<Option<usize>> = alloc::vec![None; g.len()];
        let mut hyp_taken = alloc::vec![false; h.len()];
        for (i, a) in g.iter().enumerate() {
            let Some(prev) = state.get(&a.id).and_then(|s| s.last_hypothesis) else {
                continue;
            };
            if let Some(j) = h.iter().position(|b| b.id == prev) {
                if !hyp_taken[j] && overlap[i][j] >= iou_threshold {
                    gt_match[i] = Some(j);
                    hyp_taken[j] = true;
                }
            }
        }

        let free_g: Vec<usize> = (0..g.len()).filter(|&i| gt_match[i].is_none()).collect();
        let free_h: Vec<usize> = (0..h.len()).filter(|&j| !hyp_taken[j]).collect();
        let mut costs = CostMatrix::forbidden(free_g.len(), free_h.len());
        for (r, &i) in free_g.iter().enumerate() {
            for (c, &j) in free_h.iter().enumerate() {
                if overlap[i][j] >= iou_threshold {
                    costs.set(r, c, 1.0 - overlap[i][j])?;
                }
            }
        }
        for (r, c) in hungarian(&costs).matches {
            gt_match[free_g[r]] = Some(free_h[c]);
            hyp_taken[free_h[c]] = true;
        }

        let mut ev = FrameEvents {
            frame,
            ..FrameEvents::default()
        };
        for (i, a) in g.iter().enumerate() {
            let s = state.entry(a.id).or_default();
            s.lifespan += 1;
            match gt_match[i] {
                Some(j) => {
                    let hid = h[j].id;
                    if s.last_hypothesis.is_some_and(|prev| prev != hid) {
                        ids += 1;
                        ev.switches.push(a.id);
                    }
                    if s.interrupted {
                        fm += 1;
                        s.interrupted = false;
                    }
                    s.last_hypothesis = Some(hid);
                    s.matched += 1;
                    s.was_matched = true;
                    matches += 1;
                    iou_sum += overlap[i][j];
                    ev.matches.push((a.id, hid, overlap[i][j]));
                }
                None => {
                    fn_ += 1;
                    if s.was_matched {
                        s.interrupted = true;
                    }
                    ev.misses.push(a.id);
                }
            }
        }
        for (j, b) in h.iter().enumerate() {
            if !hyp_taken[j] {
                fp += 1;
                ev.false_positives.push(b.id);
            }
        }
        events.push(ev);
    }

    let gt_boxes = ground_truth.len();
    let trajectories = state.len();
    let ratio = |s: &GtState| s.matched as f64 / s.lifespan as f64;
    let mt = state
        .values()
        .filter(|s| ratio(s) >= MOSTLY_TRACKED)
        .count();
    let ml = state.values().filter(|s| ratio(s) < MOSTLY_LOST).count();
    Ok(MotReport {
        mota: 1.0 - (fp + fn_ + ids) as f64 / gt_boxes as f64,
        motp: if matches > 0 {
            iou_sum / matches as f64
        } else {
            0.0
        },
        mt: mt as f64 / trajectories as f64,
        ml: ml as f64 / trajectories as f64,
        false_positives: fp,
        misses: fn_,
        id_switches: ids,
        fragmentations: fm,
        matches,
        gt_boxes,
        hypothesis_boxes: hypotheses.len(),
        gt_trajectories: trajectories,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn rec(frame: u32, id: u32, left: f64) -> MotRecord {
        MotRecord {
            frame,
            id,
            bbox: BBox {
                left,
                top: 0.0,
                width: 1.0,
                height: 2.0,
            },
        }
    }

    fn line(id: u32, frames: core::ops::Range<u32>) -> Vec<MotRecord> {
        frames.map(|f| rec(f, id, f as f64 * 0.1)).collect()
    }

    #[test]
    fn perfect_tracker() {
        let gt = line(1, 0..10);
        let r = evaluate(&gt, &gt, 0.5).unwrap();
        assert_eq!(
            (r.mota, r.id_switches, r.false_positives, r.misses),
            (1.0, 0, 0, 0)
        );
        assert_eq!(r.motp, 1.0);
        assert_eq!((r.mt, r.ml), (1.0, 0.0));
    }

    #[test]
    fn empty_tracker() {
        let gt = line(1, 0..10);
        let r = evaluate(&gt, &[], 0.5).unwrap();
        assert_eq!((r.misses, r.false_positives, r.id_switches), (10, 0, 0));
        assert_eq!(r.mota, 0.0);
        assert_eq!((r.mt, r.ml), (0.0, 1.0));
    }

    #[test]
    fn single_switch() {
        let gt = line(1, 0..10);
        let hyp: Vec<MotRecord> = gt
            .iter()
            .map(|r| MotRecord {
                id: if r.frame < 5 { 7 } else { 8 },
                ..*r
            })
            .collect();
        let r = evaluate(&gt, &hyp, 0.5).unwrap();
        assert_eq!(r.id_switches, 1);
        assert!((r.mota - 0.9).abs() < 1e-12);
        assert_eq!(r.events[5].switches, vec![1]);
    }

    #[test]
    fn correspondence_persists_over_a_better_overlap() {
        // Hypothesis 5 follows GT 1; in frame 1 hypothesis 6 overlaps better
        // but 5 is still above threshold, so no switch.
        let gt = vec![rec(0, 1, 0.0), rec(1, 1, 0.0)];
        let hyp = vec![rec(0, 5, 0.0), rec(1, 5, 0.2), rec(1, 6, 0.0)];
        let r = evaluate(&gt, &hyp, 0.5).unwrap();
        assert_eq!((r.id_switches, r.false_positives, r.matches), (0, 1, 2));
        assert_eq!(r.events[1].matches[0].1, 5);
    }

    #[test]
    fn fragmentation_counts_resumes() {
        let gt = line(1, 0..6);
        let hyp: Vec<MotRecord> = gt
            .iter()
            .filter(|r| r.frame != 2 && r.frame != 4)
            .map(|r| MotRecord { id: 3, ..*r })
            .collect();
        let r = evaluate(&gt, &hyp, 0.5).unwrap();
        assert_eq!((r.fragmentations, r.misses, r.id_switches), (2, 2, 0));
    }

    #[test]
    fn input_errors() {
        let gt = vec![rec(0, 1, 0.0), rec(0, 1, 3.0)];
        assert!(matches!(
            evaluate(&gt, &[], 0.5),
            Err(Error::DuplicateId { frame: 0, id: 1 })
        ));
        assert!(evaluate(&line(1, 0..2), &[], 0.0).is_err());
        assert!(evaluate(&[], &[], 0.5).is_err());
    }

    fn random_scene(seed: u64) -> (Vec<MotRecord>, Vec<MotRecord>) {
        let mut rng = seeded(seed);
        let mut gt = Vec::new();
        let mut hyp = Vec::new();
        for id in 1..=4u32 {
            let start = rng.random_range(0..5);
            let x0: f64 = rng.random_range(0.0..6.0);
            for f in start..start + rng.random_range(3..10) {
                let left = x0 + 0.2 * f as f64;
                gt.push(rec(f, id, left));
                if rng.random_bool(0.8) {
                    let hid = 10 + id + if rng.random_bool(0.1) { 4 } else { 0 };
                    hyp.push(rec(f, hid, left + rng.random_range(-0.3..0.3)));
                }
            }
        }
        for f in 0..10 {
            if rng.random_bool(0.3) {
                hyp.push(rec(f, 99, rng.random_range(0.0..8.0)));
            }
        }
        (gt, hyp)
    }

    proptest! {
        #[test]
        fn hypothesis_relabeling_changes_nothing(seed in 0u64..5000) {
            let (gt, hyp) = random_scene(seed);
            let relabeled: Vec<MotRecord> = hyp.iter().map(|r| MotRecord { id: 1000 - r.id, ..*r }).collect();
            let a = evaluate(&gt, &hyp, 0.5).unwrap();
            let b = evaluate(&gt, &relabeled, 0.5).unwrap();
            prop_assert_eq!(a.summary(), b.summary());
        }

        #[test]
        fn box_counts_balance_every_frame(seed in 0u64..5000) {
            let (gt, hyp) = random_scene(seed);
            let r = evaluate(&gt, &hyp, 0.5).unwrap();
            for ev in &r.events {
                let g = gt.iter().filter(|x| x.frame == ev.frame).count();
                let h = hyp.iter().filter(|x| x.frame == ev.frame).count();
                prop_assert_eq!(ev.matches.len() + ev.misses.len(), g);
                prop_assert_eq!(ev.matches.len() + ev.false_positives.len(), h);
            }
            prop_assert!(r.mota <= 1.0);
            prop_assert!(r.mt + r.ml <= 1.0);
            let empty = evaluate(&gt, &[], 0.5).unwrap();
            prop_assert_eq!((empty.false_positives, empty.id_switches, empty.misses), (0, 0, gt.len()));
            prop_assert_eq!(empty.mota, 0.0);
        }
    }
}
