//! MOT-Challenge CSV files and the appearance-descriptor sidecar.
//!
//! Rows are `frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z` with
//! 1-based frames, pixel units and `x,y,z = -1`. Detections carry `id = -1`
//! and their descriptors live in a sidecar `frame,det_index,d0..d{D-1}`,
//! where `det_index` counts detection rows within a frame. Floats are written
//! in shortest round-trip form, so write -> read -> write is byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use tripletrack_core::geometry::{BBox, BoxSize, Position, HALF_EXTENT};
use tripletrack_core::metrics::MotRecord;
use tripletrack_core::simulator::{Detection, Scene};
use tripletrack_core::tracker::TrackedBox;

use crate::error::{Error, Result};

/// Image size used to convert normalized coordinates to pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageFrame {
    pub width: f64,
    pub height: f64,
}

impl ImageFrame {
    pub fn to_pixels(&self, b: &BBox) -> [f64; 4] {
        [
            (b.left + HALF_EXTENT) * self.width,
            (b.top + HALF_EXTENT) * self.height,
            b.width * self.width,
            b.height * self.height,
        ]
    }

    pub fn center(&self, row: &MotRow) -> Position {
        Position::new(
            (row.left + row.width / 2.0) / self.width - HALF_EXTENT,
            (row.top + row.height / 2.0) / self.height - HALF_EXTENT,
        )
    }

    pub fn size(&self, row: &MotRow) -> BoxSize {
        BoxSize {
            width: row.width / self.width,
            height: row.height / self.height,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotRow {
    /// 1-based frame number.
    pub frame: u32,
    pub id: i64,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub conf: f64,
}

impl MotRow {
    pub fn new(frame: u32, id: i64, pixels: [f64; 4], conf: f64) -> Self {
        let [left, top, width, height] = pixels;
        Self {
            frame,
            id,
            left,
            top,
            width,
            height,
            conf,
        }
    }

    pub fn bbox(&self) -> BBox {
        BBox {
            left: self.left,
            top: self.top,
            width: self.width,
            height: self.height,
        }
    }
}

pub fn format_rows(rows: &[MotRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},-1,-1,-1",
            r.frame, r.id, r.left, r.top, r.width, r.height, r.conf
        );
    }
    out
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("bad {name} `{s}`")))
}

pub fn parse_rows(text: &str, path: &Path) -> Result<Vec<MotRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(Error::parse(
                path,
                n,
                format!("expected 10 columns, found {}", f.len()),
            ));
        }
        let frame: u32 = field(path, n, "frame", f[0])?;
        if frame == 0 {
            return Err(Error::parse(path, n, "frames are 1-based"));
        }
        let row = MotRow {
            frame,
            id: field(path, n, "id", f[1])?,
            left: field(path, n, "bb_left", f[2])?,
            top: field(path, n, "bb_top", f[3])?,
            width: field(path, n, "bb_width", f[4])?,
            height: field(path, n, "bb_height", f[5])?,
            conf: field(path, n, "conf", f[6])?,
        };
        for (name, s) in [("x", f[7]), ("y", f[8]), ("z", f[9])] {
            field::<f64>(path, n, name, s)?;
        }
        if !(row.width > 0.0 && row.height > 0.0) {
            return Err(Error::parse(
                path,
                n,
                "box width and height must be positive",
            ));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_rows(path: &Path) -> Result<Vec<MotRow>> {
    parse_rows(&read_text(path)?, path)
}

/// Rows of an identity-labelled file as metric records (ids must be positive).
pub fn records(rows: &[MotRow], path: &Path) -> Result<Vec<MotRecord>> {
    rows.iter()
        .map(|r| {
            let id = u32::try_from(r.id)
                .ok()
                .filter(|&id| id > 0)
                .ok_or_else(|| {
                    Error::parse(
                        path,
                        0,
                        format!("frame {}: track id {} is not positive", r.frame, r.id),
                    )
                })?;
            Ok(MotRecord {
                frame: r.frame - 1,
                id,
                bbox: r.bbox(),
            })
        })
        .collect()
}

/// Ground-truth rows: every trajectory box at every frame it covers.
pub fn ground_truth_rows(scene: &Scene, image: &ImageFrame) -> Vec<MotRow> {
    let mut rows: Vec<MotRow> = scene
        .trajectories
        .iter()
        .flat_map(|t| {
            t.positions.iter().enumerate().map(move |(k, &p)| {
                MotRow::new(
                    t.start_frame + k as u32 + 1,
                    i64::from(t.identity) + 1,
                    image.to_pixels(&BBox::centered(p, t.size)),
                    1.0,
                )
            })
        })
        .collect();
    rows.sort_by_key(|r| (r.frame, r.id));
    rows
}

pub fn result_rows(boxes: &[TrackedBox], image: &ImageFrame) -> Vec<MotRow> {
    boxes
        .iter()
        .map(|b| {
            MotRow::new(
                b.frame + 1,
                i64::from(b.id),
                image.to_pixels(&b.bbox()),
                1.0,
            )
        })
        .collect()
}

pub fn detection_rows(detections: &[Detection], image: &ImageFrame) -> Vec<MotRow> {
    detections
        .iter()
        .map(|d| {
            MotRow::new(
                d.frame + 1,
                -1,
                image.to_pixels(&BBox::centered(d.position, d.size)),
                d.confidence,
            )
        })
        .collect()
}

/// Sidecar rows in detection order; `detections` must be sorted by frame.
pub fn format_descriptors(detections: &[Detection]) -> String {
    let mut out = String::new();
    let mut frame = None;
    let mut index = 0usize;
    for d in detections {
        if frame != Some(d.frame) {
            frame = Some(d.frame);
            index = 0;
        }
        let _ = write!(out, "{},{}", d.frame + 1, index);
        for v in &d.descriptor {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
        index += 1;
    }
    out
}

pub fn parse_descriptors(text: &str, path: &Path) -> Result<Vec<(u32, usize, Vec<f64>)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 3 {
            return Err(Error::parse(path, n, "expected frame,det_index,d0.."));
        }
        let values = f[2..]
            .iter()
            .map(|s| field(path, n, "descriptor value", s))
            .collect::<Result<Vec<f64>>>()?;
        out.push((
            field(path, n, "frame", f[0])?,
            field(path, n, "det_index", f[1])?,
            values,
        ));
    }
    Ok(out)
}

/// Joins a detection file with its sidecar into frame-indexed detections
/// (index = 0-based frame); at least `frames` frames are returned.
pub fn join_detections(
    rows: &[MotRow],
    descriptors: &[(u32, usize, Vec<f64>)],
    image: &ImageFrame,
    frames: u32,
    sidecar: &Path,
) -> Result<Vec<Vec<Detection>>> {
    if rows.len() != descriptors.len() {
        return Err(Error::parse(
            sidecar,
            0,
            format!(
                "{} descriptor rows for {} detections",
                descriptors.len(),
                rows.len()
            ),
        ));
    }
    let last = rows.iter().map(|r| r.frame).max().unwrap_or(0).max(frames);
    let mut out: Vec<Vec<Detection>> = (0..last).map(|_| Vec::new()).collect();
    let width = descriptors.first().map_or(0, |d| d.2.len());
    for (k, (row, (frame, index, desc))) in rows.iter().zip(descriptors).enumerate() {
        let slot = &mut out[(row.frame - 1) as usize];
        if *frame != row.frame || *index != slot.len() {
            return Err(Error::parse(
                sidecar,
                k + 1,
                format!(
                    "expected frame {} index {}, found {frame},{index}",
                    row.frame,
                    slot.len()
                ),
            ));
        }
        if desc.len() != width {
            return Err(Error::parse(
                sidecar,
                k + 1,
                format!("expected {width} values, found {}", desc.len()),
            ));
        }
        if k > 0 && rows[k - 1].frame > row.frame {
            return Err(Error::parse(
                sidecar,
                k + 1,
                "detections must be sorted by frame",
            ));
        }
        slot.push(Detection {
            frame: row.frame - 1,
            position: image.center(row),
            size: image.size(row),
            descriptor: desc.clone(),
            confidence: row.conf,
            truth: None,
        });
    }
    Ok(out)
}

pub fn read_detections(
    detections: &Path,
    sidecar: &Path,
    image: &ImageFrame,
    frames: u32,
) -> Result<Vec<Vec<Detection>>> {
    let rows = read_rows(detections)?;
    let desc = parse_descriptors(&read_text(sidecar)?, sidecar)?;
    join_detections(&rows, &desc, image, frames, sidecar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tripletrack_core::simulator::{generate_scene, SceneConfig};

    const HD: ImageFrame = ImageFrame {
        width: 1920.0,
        height: 1080.0,
    };

    fn scene() -> Scene {
        generate_scene(&SceneConfig {
            frames: 60,
            min_track_length: 20,
            ..SceneConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn rows_round_trip_bytewise() {
        let s = scene();
        for rows in [
            ground_truth_rows(&s, &HD),
            detection_rows(&s.detections, &HD),
        ] {
            let text = format_rows(&rows);
            let back = parse_rows(&text, Path::new("mem")).unwrap();
            assert_eq!(back, rows);
            assert_eq!(format_rows(&back), text);
        }
    }

    #[test]
    fn detections_and_sidecar_join() {
        let s = scene();
        let rows = detection_rows(&s.detections, &HD);
        let sidecar = format_descriptors(&s.detections);
        let desc = parse_descriptors(&sidecar, Path::new("mem")).unwrap();
        let frames = join_detections(&rows, &desc, &HD, s.config.frames, Path::new("mem")).unwrap();
        assert_eq!(frames.len(), s.config.frames as usize);
        let flat: Vec<&Detection> = frames.iter().flatten().collect();
        assert_eq!(flat.len(), s.detections.len());
        for (a, b) in flat.iter().zip(&s.detections) {
            assert_eq!(a.frame, b.frame);
            assert_eq!(a.descriptor, b.descriptor);
            assert!(a.position.distance(&b.position) < 1e-12);
            assert!((a.size.width - b.size.width).abs() < 1e-12);
        }
        assert_eq!(format_descriptors(&s.detections), sidecar);
    }

    #[test]
    fn pixel_conversion_covers_the_image() {
        let b = BBox::centered(
            Position::new(0.0, 0.0),
            BoxSize {
                width: 1.0,
                height: 1.0,
            },
        );
        assert_eq!(HD.to_pixels(&b), [0.0, 0.0, 1920.0, 1080.0]);
        let row = MotRow::new(1, 1, HD.to_pixels(&b), 1.0);
        assert_eq!(HD.center(&row), Position::new(0.0, 0.0));
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let err =
            parse_rows("1,1,0,0,10,10,1,-1,-1,-1\n1,2,0,0,10\n", Path::new("f.csv")).unwrap_err();
        assert!(err.to_string().contains("f.csv:2"), "{err}");
        assert!(parse_rows("0,1,0,0,10,10,1,-1,-1,-1\n", Path::new("f")).is_err());
        assert!(parse_rows("1,1,0,0,0,10,1,-1,-1,-1\n", Path::new("f")).is_err());
        assert!(parse_rows("1,x,0,0,10,10,1,-1,-1,-1\n", Path::new("f")).is_err());
        assert!(parse_rows("", Path::new("f")).unwrap().is_empty());
    }

    #[test]
    fn sidecar_mismatch_is_rejected() {
        let s = scene();
        let rows = detection_rows(&s.detections, &HD);
        let mut desc =
            parse_descriptors(&format_descriptors(&s.detections), Path::new("mem")).unwrap();
        desc.pop();
        assert!(join_detections(&rows, &desc, &HD, 60, Path::new("mem")).is_err());
        let mut desc =
            parse_descriptors(&format_descriptors(&s.detections), Path::new("mem")).unwrap();
        desc[0].1 = 5;
        assert!(join_detections(&rows, &desc, &HD, 60, Path::new("mem")).is_err());
    }

    #[test]
    fn records_require_positive_ids() {
        let rows = [MotRow::new(1, -1, [0.0, 0.0, 1.0, 1.0], 1.0)];
        assert!(records(&rows, Path::new("f")).is_err());
        let rows = [MotRow::new(3, 4, [0.0, 0.0, 1.0, 1.0], 1.0)];
        let r = records(&rows, Path::new("f")).unwrap();
        assert_eq!((r[0].frame, r[0].id), (2, 4));
    }
}
