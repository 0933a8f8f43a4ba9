//! Fitted policies in the model container: a versioned header, one line of
//! hyperparameters, then the gaze predictor and per-sub-task head blocks.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::dataset::format::{write_atomic, Reader, FORMAT_VERSION};
use crate::dataset::{Arm, DatasetError};
use crate::predictors::model_io::{read_gaze_predictor, read_head, write_gaze_predictor, write_head, MODEL_MAGIC};
use crate::predictors::{PlanarCrop, SceneGrid};

use super::{Policy, PolicyError, PolicyParams, Preset, SubtaskHeads};

const PARAM_COUNT: usize = 30;

fn params_line(p: &PolicyParams) -> String {
    let mut v: Vec<String> = vec![
        format!("{:?}", p.crop_side),
        p.resolution.to_string(),
        p.k.to_string(),
        format!("{:?}", p.lambda),
        format!("{:?}", p.bezier_lambda),
        format!("{:?}", p.reach_speed),
        format!("{:?}", p.eps_position),
        format!("{:?}", p.eps_rotation),
        format!("{:?}", p.progress_threshold),
        p.progress_window.to_string(),
        p.horizon.to_string(),
        format!("{:?}", p.planar.half_window),
        p.planar.bins.to_string(),
    ];
    for vec in [&p.scene_grid.min, &p.scene_grid.max] {
        v.extend(vec.iter().map(|x| format!("{x:?}")));
    }
    v.extend(p.scene_grid.dims.iter().map(|d| d.to_string()));
    for vec in [&p.gaze_min, &p.gaze_max] {
        v.extend(vec.iter().map(|x| format!("{x:?}")));
    }
    v.push(p.gaze_stride.to_string());
    v.push(format!("{:?}", p.direct_gaze_weight));
    v.join(" ")
}

fn parse_params(r: &Reader<'_>, rest: &str) -> Result<PolicyParams, DatasetError> {
    let t: Vec<&str> = rest.split(' ').collect();
    if t.len() != PARAM_COUNT {
        return Err(r.malformed("params", format!("expected {PARAM_COUNT} values, got {}", t.len())));
    }
    let f = |i: usize| -> Result<f64, DatasetError> {
        t[i].parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| r.malformed("params", format!("`{}` is not a number", t[i])))
    };
    let u = |i: usize| -> Result<usize, DatasetError> { r.integer("params", t[i]) };
    let v3 = |i: usize| -> Result<Vector3<f64>, DatasetError> { Ok(Vector3::new(f(i)?, f(i + 1)?, f(i + 2)?)) };
    Ok(PolicyParams {
        crop_side: f(0)?,
        resolution: u(1)?,
        k: u(2)?,
        lambda: f(3)?,
        bezier_lambda: f(4)?,
        reach_speed: f(5)?,
        eps_position: f(6)?,
        eps_rotation: f(7)?,
        progress_threshold: f(8)?,
        progress_window: u(9)?,
        horizon: u(10)?,
        planar: PlanarCrop { half_window: f(11)?, bins: u(12)? },
        scene_grid: SceneGrid { min: v3(13)?, max: v3(16)?, dims: [u(19)?, u(20)?, u(21)?] },
        gaze_min: v3(22)?,
        gaze_max: v3(25)?,
        gaze_stride: u(28)?,
        direct_gaze_weight: f(29)?,
    })
}

impl Policy {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        writeln!(out, "{MODEL_MAGIC} {FORMAT_VERSION}").expect("write to Vec");
        writeln!(out, "preset {}", self.preset).expect("write to Vec");
        writeln!(out, "params {}", params_line(&self.params)).expect("write to Vec");
        write_gaze_predictor(&mut out, &self.gaze);
        writeln!(out, "subtasks {}", self.subtasks.len()).expect("write to Vec");
        for (k, s) in self.subtasks.iter().enumerate() {
            writeln!(out, "subtask {k} {}", s.arm.as_str()).expect("write to Vec");
            write_head(&mut out, "bottleneck", &s.bottleneck);
            write_head(&mut out, "bezier", &s.bezier);
            write_head(&mut out, "action", &s.action);
            write_head(&mut out, "progress", &s.progress);
            for (name, h) in [("reach", &s.reach), ("phase", &s.phase)] {
                writeln!(out, "optional {name} {}", u8::from(h.is_some())).expect("write to Vec");
                if let Some(h) = h {
                    write_head(&mut out, name, h);
                }
            }
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Policy, PolicyError> {
        let mut r = Reader::new(buf);
        r.header(MODEL_MAGIC)?;
        let preset = Preset::parse(r.keyed("preset")?)?;
        let rest = r.keyed("params")?;
        let params = parse_params(&r, rest)?;
        let gaze = read_gaze_predictor(&mut r)?;
        let rest = r.keyed("subtasks")?;
        let n: usize = r.integer("subtasks", rest)?;
        let mut subtasks = Vec::with_capacity(n.min(64));
        for k in 0..n {
            let rest = r.keyed("subtask")?;
            let (idx, arm) = rest.split_once(' ').ok_or_else(|| r.malformed("subtask", "expected index and arm"))?;
            if r.integer::<usize>("subtask", idx)? != k {
                return Err(r.malformed("subtask", "sub-tasks out of order").into());
            }
            let arm = Arm::parse(arm).ok_or_else(|| r.malformed("subtask", format!("unknown arm `{arm}`")))?;
            let bottleneck = read_head(&mut r, "bottleneck")?;
            let bezier = read_head(&mut r, "bezier")?;
            let action = read_head(&mut r, "action")?;
            let progress = read_head(&mut r, "progress")?;
            let mut optional = [None, None];
            for (slot, name) in optional.iter_mut().zip(["reach", "phase"]) {
                let rest = r.keyed("optional")?;
                *slot = match rest.split_once(' ') {
                    Some((n, "1")) if n == name => Some(read_head(&mut r, name)?),
                    Some((n, "0")) if n == name => None,
                    _ => return Err(r.malformed("optional", format!("expected `{name} 0|1`")).into()),
                };
            }
            let [reach, phase] = optional;
            subtasks.push(SubtaskHeads { arm, bottleneck, bezier, action, progress, reach, phase });
        }
        if r.next_line().is_ok() {
            return Err(r.malformed("end", "trailing data after the last sub-task").into());
        }
        Ok(Policy { preset, variant: preset.variant(), params, gaze, subtasks })
    }

    /// Writes the policy atomically.
    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        Ok(write_atomic(path, &self.encode())?)
    }

    pub fn load(path: &Path) -> Result<Policy, PolicyError> {
        let buf = std::fs::read(path).map_err(DatasetError::Io)?;
        Policy::decode(&buf)
    }
}
