//! Binary weight blocks for fitted heads, framed like the demonstration files.

use std::io::Write;

use nalgebra::DMatrix;

use super::gaze::{BlobParams, GazeModel, GazePredictor};
use super::regress::{Head, KnnRegressor, RidgeRegressor};
use crate::dataset::format::Reader;
use crate::dataset::DatasetError;

pub const MODEL_MAGIC: &str = "GAZEBOT-MODEL";

/// `block <name> <rows> <cols>` followed by `rows * cols` little-endian f64 and a newline.
pub fn write_block(out: &mut Vec<u8>, name: &str, rows: usize, cols: usize, data: &[f64]) {
    debug_assert_eq!(rows * cols, data.len());
    writeln!(out, "block {name} {rows} {cols}").expect("write to Vec");
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(b'\n');
}

pub(crate) fn read_block(r: &mut Reader<'_>, name: &str) -> Result<(usize, usize, Vec<f64>), DatasetError> {
    let rest = r.keyed("block")?;
    let toks: Vec<&str> = rest.split(' ').collect();
    if toks.len() != 3 || toks[0] != name {
        return Err(r.malformed("block", format!("expected block `{name}`")));
    }
    let rows: usize = r.integer("block", toks[1])?;
    let cols: usize = r.integer("block", toks[2])?;
    let n =
        rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| r.malformed("block", "size overflow"))?;
    let raw = r.bytes(n)?;
    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    if r.bytes(1)? != b"\n" {
        return Err(r.malformed("block", "missing terminator"));
    }
    Ok((rows, cols, data))
}

fn write_knn(out: &mut Vec<u8>, h: &KnnRegressor) {
    let n = h.len();
    write_block(out, "inputs", n, h.input_dim(), h.inputs());
    write_block(out, "targets", n, h.output_dim(), h.targets());
}

fn read_knn(r: &mut Reader<'_>, k: usize) -> Result<KnnRegressor, DatasetError> {
    let (n, d, inputs) = read_block(r, "inputs")?;
    let (n2, m, targets) = read_block(r, "targets")?;
    if n != n2 {
        return Err(r.malformed("block", "input and target row counts differ"));
    }
    Ok(KnnRegressor::from_parts(k, d, m, inputs, targets))
}

pub fn write_head(out: &mut Vec<u8>, name: &str, head: &Head) {
    match head {
        Head::Knn(h) => {
            writeln!(out, "head {name} knn {}", h.k).expect("write to Vec");
            write_knn(out, h);
        }
        Head::Ridge(h) => {
            writeln!(out, "head {name} ridge {:?}", h.lambda).expect("write to Vec");
            let w = h.weights().cloned().unwrap_or_else(|| DMatrix::zeros(0, 0));
            // row-major
            let data: Vec<f64> = w.transpose().iter().copied().collect();
            write_block(out, "weights", w.nrows(), w.ncols(), &data);
            write_block(out, "bias", 1, h.bias().len(), h.bias());
        }
    }
}

pub(crate) fn read_head(r: &mut Reader<'_>, name: &str) -> Result<Head, DatasetError> {
    let rest = r.keyed("head")?;
    let toks: Vec<&str> = rest.split(' ').collect();
    if toks.len() != 3 || toks[0] != name {
        return Err(r.malformed("head", format!("expected head `{name}`")));
    }
    match toks[1] {
        "knn" => {
            let k: usize = r.integer("head", toks[2])?;
            Ok(Head::Knn(read_knn(r, k)?))
        }
        "ridge" => {
            let lambda: f64 = toks[2].parse().map_err(|_| r.malformed("head", "bad lambda"))?;
            let (d, m, data) = read_block(r, "weights")?;
            let (_, mb, bias) = read_block(r, "bias")?;
            if mb != m {
                return Err(r.malformed("head", "bias length differs from weight columns"));
            }
            let w = DMatrix::from_row_slice(d, m, &data);
            Ok(Head::Ridge(RidgeRegressor::from_parts(lambda, w, bias)))
        }
        other => Err(r.malformed("head", format!("unknown head kind `{other}`"))),
    }
}

pub fn write_gaze_predictor(out: &mut Vec<u8>, gp: &GazePredictor) {
    let p = &gp.params;
    writeln!(
        out,
        "gaze_predictor {} {:?} {:?} {:?} {}",
        gp.models.len(),
        p.table_z,
        p.min_height,
        p.link,
        p.min_points
    )
    .expect("write to Vec");
    for m in &gp.models {
        writeln!(out, "gaze_model {} {}", m.scorer.k, m.offset.k).expect("write to Vec");
        write_knn(out, &m.scorer);
        write_knn(out, &m.offset);
    }
}

pub(crate) fn read_gaze_predictor(r: &mut Reader<'_>) -> Result<GazePredictor, DatasetError> {
    let rest = r.keyed("gaze_predictor")?;
    let toks: Vec<&str> = rest.split(' ').collect();
    if toks.len() != 5 {
        return Err(r.malformed("gaze_predictor", "expected 5 values"));
    }
    let n: usize = r.integer("gaze_predictor", toks[0])?;
    let f = |i: usize| -> Result<f64, DatasetError> {
        toks[i].parse().map_err(|_| r.malformed("gaze_predictor", "bad number"))
    };
    let params = BlobParams {
        table_z: f(1)?,
        min_height: f(2)?,
        link: f(3)?,
        min_points: r.integer("gaze_predictor", toks[4])?,
    };
    let mut models = Vec::with_capacity(n);
    for _ in 0..n {
        let rest = r.keyed("gaze_model")?;
        let (a, b) = rest.split_once(' ').ok_or_else(|| r.malformed("gaze_model", "expected two k values"))?;
        let ks: usize = r.integer("gaze_model", a)?;
        let ko: usize = r.integer("gaze_model", b)?;
        let scorer = read_knn(r, ks)?;
        let offset = read_knn(r, ko)?;
        models.push(GazeModel { scorer, offset });
    }
    Ok(GazePredictor { params, models })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::regress::{HeadSpec, Regressor};

    #[test]
    fn heads_round_trip_bit_exact() {
        let x = vec![vec![0.1, 0.2], vec![0.3, -0.1], vec![-0.7, 0.05], vec![0.0, 1.0 / 3.0]];
        let y = vec![vec![1.0, 2.0, 3.0], vec![0.5, 0.1, 0.2], vec![-1.0, 0.0, 0.3], vec![0.0, 0.0, 1e-300]];
        let mut out = Vec::new();
        let heads = [
            Head::fitted(HeadSpec::Knn { k: 2 }, &x, &y).unwrap(),
            Head::fitted(HeadSpec::Ridge { lambda: 0.01 }, &x, &y).unwrap(),
        ];
        write_head(&mut out, "a", &heads[0]);
        write_head(&mut out, "b", &heads[1]);
        let mut r = Reader::new(&out);
        let a = read_head(&mut r, "a").unwrap();
        let b = read_head(&mut r, "b").unwrap();
        assert_eq!(a, heads[0]);
        assert_eq!(b, heads[1]);
        assert_eq!(b.predict(&[0.2, 0.2]).unwrap(), heads[1].predict(&[0.2, 0.2]).unwrap());
        let mut r = Reader::new(&out[..out.len() - 5]);
        read_head(&mut r, "a").unwrap();
        assert!(matches!(read_head(&mut r, "b"), Err(DatasetError::UnexpectedEof)));
    }
}
