//! Mixed text/binary demonstration files.
//!
//! Layout:
//!
//! ```text
//! GAZEBOT-DEMO 1
//! task <text>
//! seed <u64>
//! scenario <text>
//! frames <n>
//! acting_arms <arm>...
//! truth_subtasks <k>            ("truth_subtasks none" when absent)
//! truth_subtask <s> <e> <b>     (k lines)
//! truth_bezier <7 values>       (k lines)
//! end_header
//! frame <t>
//! left <px py pz qw qx qy qz g>
//! right <px py pz qw qx qy qz g>
//! gaze_pixel <u v>
//! gaze_3d <x y z>
//! action_left <7 values>
//! action_right <7 values>
//! cloud <n> labeled|unlabeled
//! <n * 12 bytes: little-endian f32 xyz><n bytes of labels if labeled>
//! ```
//!
//! Every frame's binary block is followed by a newline. Scalars are written
//! with the shortest representation that parses back to the same `f64`.

use std::io::Write;
use std::path::Path;

use nalgebra::{Vector2, Vector3};

use super::{Arm, DatasetError, DemoMeta, Demonstration, Frame, GroundTruth, SegmentAnnotation, SubtaskBounds};
use crate::geometry::{quaternion_from_wxyz, PointCloud, Pose7, PoseDelta7};

pub const DEMO_MAGIC: &str = "GAZEBOT-DEMO";
pub const ANNOTATION_MAGIC: &str = "GAZEBOT-ANN";
pub const FORMAT_VERSION: u32 = 1;

fn push_floats(out: &mut Vec<u8>, key: &str, values: &[f64]) {
    out.extend_from_slice(key.as_bytes());
    for v in values {
        write!(out, " {v:?}").expect("write to Vec");
    }
    out.push(b'\n');
}

fn pose_values(p: &Pose7) -> [f64; 8] {
    let q = p.orientation.quaternion();
    [p.position.x, p.position.y, p.position.z, q.w, q.i, q.j, q.k, p.gripper]
}

fn check_text(field: &str, value: &str) -> Result<(), DatasetError> {
    if value.contains('\n') || value.contains('\r') {
        return Err(DatasetError::Malformed {
            field: field.into(),
            line: 0,
            reason: "value must be a single line".into(),
        });
    }
    Ok(())
}

fn encode(demo: &Demonstration) -> Result<Vec<u8>, DatasetError> {
    demo.validate()?;
    check_text("task", &demo.meta.task)?;
    check_text("scenario", &demo.meta.scenario)?;
    let mut out = Vec::new();
    writeln!(out, "{DEMO_MAGIC} {FORMAT_VERSION}")?;
    writeln!(out, "task {}", demo.meta.task)?;
    writeln!(out, "seed {}", demo.meta.seed)?;
    writeln!(out, "scenario {}", demo.meta.scenario)?;
    writeln!(out, "frames {}", demo.frames.len())?;
    out.extend_from_slice(b"acting_arms");
    for a in &demo.meta.acting_arms {
        write!(out, " {a}")?;
    }
    out.push(b'\n');
    match &demo.meta.ground_truth {
        None => writeln!(out, "truth_subtasks none")?,
        Some(gt) => {
            writeln!(out, "truth_subtasks {}", gt.subtasks.len())?;
            for b in &gt.subtasks {
                writeln!(out, "truth_subtask {} {} {}", b.start, b.end, b.bottleneck)?;
            }
            writeln!(out, "truth_beziers {}", gt.bezier_vectors.len())?;
            for v in &gt.bezier_vectors {
                push_floats(&mut out, "truth_bezier", &v.to_array());
            }
        }
    }
    writeln!(out, "end_header")?;

    for f in &demo.frames {
        writeln!(out, "frame {}", f.t)?;
        push_floats(&mut out, "left", &pose_values(&f.left));
        push_floats(&mut out, "right", &pose_values(&f.right));
        push_floats(&mut out, "gaze_pixel", &[f.gaze_pixel.x, f.gaze_pixel.y]);
        push_floats(&mut out, "gaze_3d", f.gaze_3d.as_slice());
        push_floats(&mut out, "action_left", &f.expert_action[0].to_array());
        push_floats(&mut out, "action_right", &f.expert_action[1].to_array());
        let labeled = f.cloud.labels().is_some();
        writeln!(out, "cloud {} {}", f.cloud.len(), if labeled { "labeled" } else { "unlabeled" })?;
        for (i, p) in f.cloud.points().iter().enumerate() {
            for c in p.iter() {
                let x = *c as f32;
                if x as f64 != *c {
                    return Err(DatasetError::NotF32Representable(i));
                }
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        if let Some(labels) = f.cloud.labels() {
            out.extend_from_slice(labels);
        }
        out.push(b'\n');
    }
    Ok(out)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| DatasetError::Io(e.error))?;
    Ok(())
}

/// Writes one demonstration atomically (temporary file, then rename).
///
/// Point coordinates are stored as `f32`; clouds must already be quantized
/// (see [`PointCloud::quantized`]) so that loading reproduces them exactly.
pub fn save(demo: &Demonstration, path: &Path) -> Result<(), DatasetError> {
    let bytes = encode(demo)?;
    write_atomic(path, &bytes)
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    line: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0, line: 0 }
    }

    pub(crate) fn malformed(&self, field: &str, reason: impl Into<String>) -> DatasetError {
        DatasetError::Malformed { field: field.into(), line: self.line, reason: reason.into() }
    }

    pub(crate) fn next_line(&mut self) -> Result<&'a str, DatasetError> {
        let rest = &self.buf[self.pos..];
        let n = rest.iter().position(|&b| b == b'\n').ok_or(DatasetError::UnexpectedEof)?;
        self.pos += n + 1;
        self.line += 1;
        std::str::from_utf8(&rest[..n]).map_err(|_| self.malformed("line", "invalid UTF-8"))
    }

    /// Reads a line whose first token is `key` and returns the remainder.
    pub(crate) fn keyed(&mut self, key: &str) -> Result<&'a str, DatasetError> {
        let line = self.next_line()?;
        let (k, rest) = line.split_once(' ').unwrap_or((line, ""));
        if k != key {
            return Err(self.malformed(key, format!("expected `{key}`, found `{k}`")));
        }
        Ok(rest)
    }

    pub(crate) fn floats<const N: usize>(&mut self, key: &str) -> Result<[f64; N], DatasetError> {
        let rest = self.keyed(key)?;
        let mut out = [0.0; N];
        let mut it = rest.split(' ');
        for (i, slot) in out.iter_mut().enumerate() {
            let tok = it.next().ok_or_else(|| self.malformed(key, format!("expected {N} values, got {i}")))?;
            *slot = tok.parse::<f64>().map_err(|_| self.malformed(key, format!("`{tok}` is not a number")))?;
            if !slot.is_finite() {
                return Err(self.malformed(key, "non-finite value"));
            }
        }
        if it.next().is_some() {
            return Err(self.malformed(key, format!("more than {N} values")));
        }
        Ok(out)
    }

    pub(crate) fn integer<T: std::str::FromStr>(&self, key: &str, tok: &str) -> Result<T, DatasetError> {
        tok.parse::<T>().map_err(|_| self.malformed(key, format!("`{tok}` is not an integer")))
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        if self.buf.len() - self.pos < n {
            return Err(DatasetError::UnexpectedEof);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn header(&mut self, magic: &str) -> Result<(), DatasetError> {
        let line = self.next_line()?;
        let (m, v) = line.split_once(' ').unwrap_or((line, ""));
        if m != magic {
            return Err(self.malformed("magic", format!("expected `{magic}`")));
        }
        if v != FORMAT_VERSION.to_string() {
            return Err(DatasetError::VersionMismatch { found: v.to_string(), expected: FORMAT_VERSION });
        }
        Ok(())
    }
}

fn pose_from(v: [f64; 8]) -> Pose7 {
    Pose7::new(Vector3::new(v[0], v[1], v[2]), quaternion_from_wxyz(v[3], v[4], v[5], v[6]), v[7])
}

fn decode(buf: &[u8]) -> Result<Demonstration, DatasetError> {
    let mut r = Reader::new(buf);
    r.header(DEMO_MAGIC)?;
    let task = r.keyed("task")?.to_string();
    let seed_tok = r.keyed("seed")?;
    let seed: u64 = r.integer("seed", seed_tok)?;
    let scenario = r.keyed("scenario")?.to_string();
    let n_tok = r.keyed("frames")?;
    let n_frames: usize = r.integer("frames", n_tok)?;
    let arms_tok = r.keyed("acting_arms")?;
    let mut acting_arms = Vec::new();
    for tok in arms_tok.split(' ').filter(|s| !s.is_empty()) {
        acting_arms.push(Arm::parse(tok).ok_or_else(|| r.malformed("acting_arms", format!("unknown arm `{tok}`")))?);
    }
    let truth_tok = r.keyed("truth_subtasks")?;
    let ground_truth = if truth_tok == "none" {
        None
    } else {
        let k: usize = r.integer("truth_subtasks", truth_tok)?;
        let mut subtasks = Vec::with_capacity(k);
        for _ in 0..k {
            let rest = r.keyed("truth_subtask")?;
            let toks: Vec<&str> = rest.split(' ').collect();
            if toks.len() != 3 {
                return Err(r.malformed("truth_subtask", "expected 3 integers"));
            }
            subtasks.push(SubtaskBounds {
                start: r.integer("truth_subtask", toks[0])?,
                end: r.integer("truth_subtask", toks[1])?,
                bottleneck: r.integer("truth_subtask", toks[2])?,
            });
        }
        let nb_tok = r.keyed("truth_beziers")?;
        let nb: usize = r.integer("truth_beziers", nb_tok)?;
        let mut bezier_vectors = Vec::with_capacity(nb);
        for _ in 0..nb {
            bezier_vectors.push(PoseDelta7::from_slice(&r.floats::<7>("truth_bezier")?));
        }
        Some(GroundTruth { subtasks, bezier_vectors })
    };
    r.keyed("end_header")?;

    let mut frames = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let t_tok = r.keyed("frame")?;
        let t: usize = r.integer("frame", t_tok)?;
        if t != i {
            return Err(r.malformed("frame", format!("expected step {i}, found {t}")));
        }
        let left = pose_from(r.floats::<8>("left")?);
        let right = pose_from(r.floats::<8>("right")?);
        let gp = r.floats::<2>("gaze_pixel")?;
        let g3 = r.floats::<3>("gaze_3d")?;
        let al = PoseDelta7::from_slice(&r.floats::<7>("action_left")?);
        let ar = PoseDelta7::from_slice(&r.floats::<7>("action_right")?);
        let cloud_tok = r.keyed("cloud")?;
        let (count_tok, kind) =
            cloud_tok.split_once(' ').ok_or_else(|| r.malformed("cloud", "expected `<count> labeled|unlabeled`"))?;
        let count: usize = r.integer("cloud", count_tok)?;
        let labeled = match kind {
            "labeled" => true,
            "unlabeled" => false,
            other => return Err(r.malformed("cloud", format!("unknown cloud kind `{other}`"))),
        };
        let raw = r.bytes(count.checked_mul(12).ok_or(DatasetError::UnexpectedEof)?)?;
        let points: Vec<Vector3<f64>> = raw
            .chunks_exact(12)
            .map(|c| {
                let f = |o: usize| f32::from_le_bytes([c[o], c[o + 1], c[o + 2], c[o + 3]]) as f64;
                Vector3::new(f(0), f(4), f(8))
            })
            .collect();
        let mut cloud = PointCloud::new(points).map_err(|e| r.malformed("cloud", e.to_string()))?;
        if labeled {
            let labels = r.bytes(count)?.to_vec();
            cloud = cloud.with_labels(labels).map_err(|e| r.malformed("cloud", e.to_string()))?;
        }
        let nl = r.bytes(1)?;
        if nl != b"\n" {
            return Err(r.malformed("cloud", "missing terminator after binary block"));
        }
        frames.push(Frame {
            t,
            cloud,
            left,
            right,
            gaze_pixel: Vector2::new(gp[0], gp[1]),
            gaze_3d: Vector3::from(g3),
            expert_action: [al, ar],
        });
    }
    Demonstration::new(frames, DemoMeta { task, seed, scenario, acting_arms, ground_truth })
}

/// Reads a demonstration written by [`save`].
pub fn load(path: &Path) -> Result<Demonstration, DatasetError> {
    let buf = std::fs::read(path)?;
    decode(&buf)
}

/// Parses a demonstration from an in-memory buffer.
pub fn decode_bytes(buf: &[u8]) -> Result<Demonstration, DatasetError> {
    decode(buf)
}

/// Serializes a demonstration to bytes.
pub fn encode_bytes(demo: &Demonstration) -> Result<Vec<u8>, DatasetError> {
    encode(demo)
}

/// Writes a segmentation annotation for a demonstration ending at step `last`.
pub fn save_annotation(ann: &SegmentAnnotation, last: usize, path: &Path) -> Result<(), DatasetError> {
    ann.validate(last)?;
    let mut out = Vec::new();
    writeln!(out, "{ANNOTATION_MAGIC} {FORMAT_VERSION}")?;
    writeln!(out, "last_step {last}")?;
    writeln!(out, "subtasks {}", ann.subtasks.len())?;
    for b in &ann.subtasks {
        writeln!(out, "subtask {} {} {}", b.start, b.end, b.bottleneck)?;
    }
    write_atomic(path, &out)
}

/// Reads an annotation and checks its partition invariants.
pub fn load_annotation(path: &Path) -> Result<(SegmentAnnotation, usize), DatasetError> {
    let buf = std::fs::read(path)?;
    let mut r = Reader::new(&buf);
    r.header(ANNOTATION_MAGIC)?;
    let tok = r.keyed("last_step")?;
    let last: usize = r.integer("last_step", tok)?;
    let tok = r.keyed("subtasks")?;
    let k: usize = r.integer("subtasks", tok)?;
    let mut subtasks = Vec::with_capacity(k);
    for _ in 0..k {
        let rest = r.keyed("subtask")?;
        let toks: Vec<&str> = rest.split(' ').collect();
        if toks.len() != 3 {
            return Err(r.malformed("subtask", "expected 3 integers"));
        }
        subtasks.push(SubtaskBounds {
            start: r.integer("subtask", toks[0])?,
            end: r.integer("subtask", toks[1])?,
            bottleneck: r.integer("subtask", toks[2])?,
        });
    }
    let ann = SegmentAnnotation::new(subtasks);
    ann.validate(last)?;
    Ok((ann, last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::toy_demo;

    #[test]
    fn round_trip_two_frames() {
        let mut demo = toy_demo(2);
        demo.frames[1].cloud = demo.frames[1].cloud.clone().with_labels(vec![3, 7]).unwrap();
        demo.meta.ground_truth = Some(GroundTruth {
            subtasks: vec![SubtaskBounds { start: 0, end: 1, bottleneck: 1 }],
            bezier_vectors: vec![PoseDelta7::from_slice(&[0.1, -0.0, 1e-17, 0.3, 0.2, 0.1, -0.05])],
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.demo");
        save(&demo, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back, demo);
        for (a, b) in back.frames.iter().zip(&demo.frames) {
            assert_eq!(a.left.orientation.coords.map(f64::to_bits), b.left.orientation.coords.map(f64::to_bits));
        }
    }

    #[test]
    fn truncated_file_reports_eof() {
        let demo = toy_demo(3);
        let bytes = encode(&demo).unwrap();
        for cut in [bytes.len() - 1, bytes.len() - 10, bytes.len() / 2, 20] {
            let err = decode(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, DatasetError::UnexpectedEof), "cut {cut}: {err}");
            assert_eq!(err.to_string(), "unexpected end of input");
        }
    }

    #[test]
    fn malformed_field_is_named() {
        let demo = toy_demo(2);
        let text = String::from_utf8_lossy(&encode(&demo).unwrap()).into_owned();
        let broken = text.replacen("gaze_3d 0.1", "gaze_3d zz", 1);
        match decode(broken.as_bytes()) {
            Err(DatasetError::Malformed { field, .. }) => assert_eq!(field, "gaze_3d"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let demo = toy_demo(2);
        let mut bytes = encode(&demo).unwrap();
        let header = format!("{DEMO_MAGIC} 1");
        bytes.splice(0..header.len(), format!("{DEMO_MAGIC} 9").bytes());
        assert!(matches!(decode(&bytes), Err(DatasetError::VersionMismatch { .. })));
    }

    #[test]
    fn unquantized_cloud_is_rejected() {
        let mut demo = toy_demo(2);
        demo.frames[0].cloud = PointCloud::new(vec![Vector3::new(0.1, 0.0, 0.0)]).unwrap();
        assert!(matches!(encode(&demo), Err(DatasetError::NotF32Representable(0))));
    }

    #[test]
    fn annotation_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ann");
        let ann = SegmentAnnotation::new(vec![
            SubtaskBounds { start: 0, end: 4, bottleneck: 2 },
            SubtaskBounds { start: 5, end: 9, bottleneck: 9 },
        ]);
        save_annotation(&ann, 9, &path).unwrap();
        assert_eq!(load_annotation(&path).unwrap(), (ann.clone(), 9));
        std::fs::write(&path, format!("{ANNOTATION_MAGIC} 1\nlast_step 9\nsubtasks 1\nsubtask 0 8 3\n")).unwrap();
        assert!(matches!(load_annotation(&path), Err(DatasetError::InvalidAnnotation(_))));
    }
}
