//! On-disk sequence layout:
//!
//! ```text
//! seq/
//!   meta          key = value: intrinsics, depth range, frame rate, frame count
//!   poses.csv     timestamp, tx, ty, tz, r00..r22 (row-major rotation)
//!   depth/000000.png   16-bit grayscale
//!   det2d/000000.txt   optional; "u_min u_max v_min v_max label confidence"
//!   truth.jsonl   optional; one ground-truth frame per line
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthImage, Pose, Vec3};
use crate::madlift::Detection2D;
use crate::metrics::FrameOutput;
use crate::scenegen::GroundTruthFrame;
use crate::tracker::TrackOutput;

use super::Frame;

const META: &str = "meta";
const POSES: &str = "poses.csv";
const TRUTH: &str = "truth.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    #[serde(flatten)]
    pub intrinsics: CameraIntrinsics,
    pub frame_rate: f64,
    pub frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct PoseRow {
    timestamp: f64,
    tx: f64,
    ty: f64,
    tz: f64,
    r00: f64,
    r01: f64,
    r02: f64,
    r10: f64,
    r11: f64,
    r12: f64,
    r20: f64,
    r21: f64,
    r22: f64,
}

impl PoseRow {
    fn new(timestamp: f64, pose: &Pose) -> Self {
        let (t, r) = (pose.translation, pose.rotation);
        PoseRow {
            timestamp,
            tx: t.x,
            ty: t.y,
            tz: t.z,
            r00: r[(0, 0)],
            r01: r[(0, 1)],
            r02: r[(0, 2)],
            r10: r[(1, 0)],
            r11: r[(1, 1)],
            r12: r[(1, 2)],
            r20: r[(2, 0)],
            r21: r[(2, 1)],
            r22: r[(2, 2)],
        }
    }

    fn pose(&self) -> Result<Pose> {
        let r = Matrix3::new(
            self.r00, self.r01, self.r02, self.r10, self.r11, self.r12, self.r20, self.r21, self.r22,
        );
        Pose::new(Vec3::new(self.tx, self.ty, self.tz), r)
    }
}

fn frame_name(index: usize, ext: &str) -> String {
    format!("{index:06}.{ext}")
}

pub fn write_depth_png(path: &Path, depth: &DepthImage) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, depth.width, depth.height);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut writer = enc.write_header().map_err(|e| Error::format(path, e))?;
    let bytes: Vec<u8> = depth.data.iter().flat_map(|v| v.to_be_bytes()).collect();
    writer.write_image_data(&bytes).map_err(|e| Error::format(path, e))?;
    writer.finish().map_err(|e| Error::format(path, e))?;
    Ok(())
}

pub fn read_depth_png(path: &Path) -> Result<DepthImage> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder.read_info().map_err(|e| Error::format(path, e))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::format(path, "expected 16-bit grayscale"));
    }
    let (w, h) = (info.width, info.height);
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| Error::format(path, "image too large"))?];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e))?;
    let data = buf[..frame.buffer_size()]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    DepthImage::new(w, h, data)
}

pub fn write_detections(path: &Path, dets: &[Detection2D]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for d in dets {
        if d.label.is_empty() || d.label.contains(char::is_whitespace) {
            return Err(Error::input(format!("label `{}` must be a single non-empty word", d.label)));
        }
        writeln!(out, "{} {} {} {} {} {}", d.u_min, d.u_max, d.v_min, d.v_max, d.label, d.confidence)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection2D>> {
    let text = fs::read_to_string(path)?;
    let mut dets = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = |what: &str| Error::format(path, format!("line {}: {what}", n + 1));
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number `{s}`")));
        let d = Detection2D {
            u_min: num(f[0])?,
            u_max: num(f[1])?,
            v_min: num(f[2])?,
            v_max: num(f[3])?,
            label: f[4].to_string(),
            confidence: num(f[5])?,
        };
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(bad("confidence outside [0, 1]"));
        }
        dets.push(d);
    }
    Ok(dets)
}

/// Streams frames into a sequence directory.
pub struct SequenceWriter {
    dir: PathBuf,
    meta: SequenceMeta,
    poses: csv::Writer<File>,
    truth: Option<BufWriter<File>>,
    last_time: Option<f64>,
}

impl SequenceWriter {
    pub fn create(dir: &Path, intrinsics: CameraIntrinsics, frame_rate: f64) -> Result<Self> {
        intrinsics.validate()?;
        fs::create_dir_all(dir.join("depth"))?;
        let poses = csv::Writer::from_path(dir.join(POSES)).map_err(|e| Error::format(dir.join(POSES), e))?;
        Ok(SequenceWriter {
            dir: dir.to_path_buf(),
            meta: SequenceMeta {
                intrinsics,
                frame_rate,
                frames: 0,
            },
            poses,
            truth: None,
            last_time: None,
        })
    }

    pub fn push(&mut self, frame: &Frame, truth: Option<&GroundTruthFrame>) -> Result<()> {
        frame.depth.check_matches(&self.meta.intrinsics)?;
        if self.last_time.is_some_and(|t| frame.timestamp <= t) {
            return Err(Error::input("frame timestamps must increase"));
        }
        self.last_time = Some(frame.timestamp);
        let k = self.meta.frames;
        write_depth_png(&self.dir.join("depth").join(frame_name(k, "png")), &frame.depth)?;
        self.poses
            .serialize(PoseRow::new(frame.timestamp, &frame.pose))
            .map_err(|e| Error::format(self.dir.join(POSES), e))?;
        if let Some(dets) = &frame.detections2d {
            let dir = self.dir.join("det2d");
            fs::create_dir_all(&dir)?;
            write_detections(&dir.join(frame_name(k, "txt")), dets)?;
        }
        if let Some(gt) = truth {
            if self.truth.is_none() {
                self.truth = Some(BufWriter::new(File::create(self.dir.join(TRUTH))?));
            }
            let out = self.truth.as_mut().expect("opened above");
            serde_json::to_writer(&mut *out, gt).map_err(|e| Error::format(self.dir.join(TRUTH), e))?;
            out.write_all(b"\n")?;
        }
        self.meta.frames += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<SequenceMeta> {
        self.poses.flush()?;
        if let Some(t) = self.truth.as_mut() {
            t.flush()?;
        }
        let text = toml::to_string(&self.meta).map_err(|e| Error::input(e.to_string()))?;
        fs::write(self.dir.join(META), text)?;
        Ok(self.meta)
    }
}

/// Random-access reader over a sequence directory.
pub struct SequenceReader {
    dir: PathBuf,
    meta: SequenceMeta,
    poses: Vec<(f64, Pose)>,
}

impl SequenceReader {
    pub fn open(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META);
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::format(&meta_path, e))?;
        let meta: SequenceMeta = toml::from_str(&text).map_err(|e| Error::format(&meta_path, e))?;
        meta.intrinsics.validate()?;
        if !(meta.frame_rate > 0.0) {
            return Err(Error::format(&meta_path, "frame_rate must be positive"));
        }
        let poses_path = dir.join(POSES);
        let mut rdr = csv::Reader::from_path(&poses_path).map_err(|e| Error::format(&poses_path, e))?;
        let mut poses = Vec::new();
        for (n, row) in rdr.deserialize::<PoseRow>().enumerate() {
            let row = row.map_err(|e| Error::format(&poses_path, e))?;
            let pose = row
                .pose()
                .map_err(|e| Error::format(&poses_path, format!("row {}: {e}", n + 1)))?;
            if poses.last().is_some_and(|&(t, _)| row.timestamp <= t) {
                return Err(Error::format(&poses_path, format!("row {}: timestamps must increase", n + 1)));
            }
            poses.push((row.timestamp, pose));
        }
        if poses.len() != meta.frames {
            return Err(Error::format(
                &poses_path,
                format!("{} poses but meta declares {} frames", poses.len(), meta.frames),
            ));
        }
        Ok(SequenceReader {
            dir: dir.to_path_buf(),
            meta,
            poses,
        })
    }

    pub fn meta(&self) -> &SequenceMeta {
        &self.meta
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.meta.intrinsics
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn timestamp(&self, index: usize) -> f64 {
        self.poses[index].0
    }

    pub fn frame(&self, index: usize) -> Result<Frame> {
        let (timestamp, pose) = self.poses[index];
        let depth = read_depth_png(&self.dir.join("depth").join(frame_name(index, "png")))?;
        depth.check_matches(&self.meta.intrinsics)?;
        let det_path = self.dir.join("det2d").join(frame_name(index, "txt"));
        let detections2d = if det_path.exists() {
            Some(read_detections(&det_path)?)
        } else {
            None
        };
        Ok(Frame {
            timestamp,
            depth,
            pose,
            detections2d,
        })
    }

    pub fn truth(&self) -> Result<Option<Vec<GroundTruthFrame>>> {
        let path = self.dir.join(TRUTH);
        if !path.exists() {
            return Ok(None);
        }
        read_truth(&path).map(Some)
    }
}

pub fn read_truth(path: &Path) -> Result<Vec<GroundTruthFrame>> {
    let file = BufReader::new(File::open(path)?);
    let mut frames = Vec::new();
    for (n, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        frames.push(serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?);
    }
    Ok(frames)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrackRow {
    timestamp: f64,
    id: u64,
    class: crate::class::ObstacleClass,
    cx: f64,
    cy: f64,
    cz: f64,
    dx: f64,
    dy: f64,
    dz: f64,
    vx: f64,
    vy: f64,
}

/// One CSV row per (frame, track).
pub fn write_tracks_csv(path: &Path, outputs: &[FrameOutput]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
    for f in outputs {
        for t in &f.tracks {
            let (c, d) = (t.aabb.center, t.aabb.dims);
            w.serialize(TrackRow {
                timestamp: f.timestamp,
                id: t.id,
                class: t.class,
                cx: c.x,
                cy: c.y,
                cz: c.z,
                dx: d.x,
                dy: d.y,
                dz: d.z,
                vx: t.velocity[0],
                vy: t.velocity[1],
            })
            .map_err(|e| Error::format(path, e))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a track CSV back into one output per timestamp in `timestamps`;
/// frames without rows come back empty.
pub fn read_tracks_csv(path: &Path, timestamps: &[f64], tolerance: f64) -> Result<Vec<FrameOutput>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let mut outputs: Vec<FrameOutput> = timestamps
        .iter()
        .map(|&timestamp| FrameOutput {
            timestamp,
            tracks: Vec::new(),
        })
        .collect();
    for row in rdr.deserialize::<TrackRow>() {
        let r = row.map_err(|e| Error::format(path, e))?;
        let k = timestamps.partition_point(|&t| t < r.timestamp - tolerance);
        if k >= timestamps.len() || (timestamps[k] - r.timestamp).abs() > tolerance {
            return Err(Error::format(path, format!("row at t = {} matches no frame", r.timestamp)));
        }
        let aabb = crate::geometry::Aabb3::new(Vec3::new(r.cx, r.cy, r.cz), Vec3::new(r.dx, r.dy, r.dz))
            .map_err(|e| Error::format(path, e))?;
        outputs[k].tracks.push(TrackOutput {
            id: r.id,
            class: r.class,
            aabb,
            velocity: [r.vx, r.vy],
        });
    }
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let img = DepthImage::new(3, 2, vec![0, 1, 65535, 1234, 256, 7]).unwrap();
        write_depth_png(&path, &img).unwrap();
        assert_eq!(read_depth_png(&path).unwrap(), img);
    }

    #[test]
    fn detection_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.txt");
        let d = Detection2D {
            u_min: 1.5,
            u_max: 20.0,
            v_min: 3.0,
            v_max: 40.25,
            label: "person".into(),
            confidence: 0.9,
        };
        write_detections(&path, std::slice::from_ref(&d)).unwrap();
        assert_eq!(read_detections(&path).unwrap(), vec![d]);
        fs::write(&path, "1 2 3 person 0.5\n").unwrap();
        assert!(read_detections(&path).is_err());
        fs::write(&path, "1 2 3 4 person 1.5\n").unwrap();
        assert!(read_detections(&path).is_err());
    }
}
