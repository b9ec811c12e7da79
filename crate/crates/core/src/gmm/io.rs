//! JSON model files. Numbers are written with 17 significant digits so that a
//! save/load cycle reproduces every `f64` exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::{GmmModel, JointMatrix, JointVector, DIM_IN, DIM_OUT, JOINT_DIM};
use crate::control::PseudoInverse;
use crate::error::{Error, Result};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    k: usize,
    dim_in: usize,
    dim_out: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
    lambda: f64,
    lhat_pinv: Vec<Vec<f64>>,
    seed: u64,
}

fn num(out: &mut String, x: f64) {
    // {:e} would print the shortest form; the file format fixes 17 digits
    write!(out, "{:.16e}", x).expect("write to string");
}

fn row(out: &mut String, xs: impl IntoIterator<Item = f64>) {
    out.push('[');
    for (i, x) in xs.into_iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        num(out, x);
    }
    out.push(']');
}

pub(crate) fn to_json(model: &GmmModel) -> String {
    let mut s = String::new();
    s.push_str("{\n");
    let _ = writeln!(s, "  \"k\": {},", model.k());
    let _ = writeln!(s, "  \"dim_in\": {DIM_IN},");
    let _ = writeln!(s, "  \"dim_out\": {DIM_OUT},");
    s.push_str("  \"weights\": ");
    row(&mut s, model.weights().iter().copied());
    s.push_str(",\n  \"means\": [\n");
    for (i, m) in model.means().iter().enumerate() {
        s.push_str("    ");
        row(&mut s, m.iter().copied());
        s.push_str(if i + 1 < model.k() { ",\n" } else { "\n" });
    }
    s.push_str("  ],\n  \"covariances\": [\n");
    for (i, c) in model.covariances().iter().enumerate() {
        s.push_str("    [\n");
        for r in 0..JOINT_DIM {
            s.push_str("      ");
            row(&mut s, c.row(r).iter().copied());
            s.push_str(if r + 1 < JOINT_DIM { ",\n" } else { "\n" });
        }
        s.push_str(if i + 1 < model.k() {
            "    ],\n"
        } else {
            "    ]\n"
        });
    }
    s.push_str("  ],\n  \"lambda\": ");
    num(&mut s, model.lambda);
    s.push_str(",\n  \"lhat_pinv\": [\n");
    for r in 0..6 {
        s.push_str("    ");
        row(&mut s, model.lhat_pinv.0.row(r).iter().copied());
        s.push_str(if r + 1 < 6 { ",\n" } else { "\n" });
    }
    let _ = write!(s, "  ],\n  \"seed\": {}\n}}\n", model.seed);
    s
}

pub(crate) fn from_json(text: &str, path: &Path) -> Result<GmmModel> {
    let f: ModelFile = serde_json::from_str(text).map_err(|e| Error::malformed(path, e))?;
    let bad = |why: String| Error::malformed(path, why);
    if f.dim_in != DIM_IN || f.dim_out != DIM_OUT {
        return Err(bad(format!(
            "expected dims {DIM_IN}/{DIM_OUT}, got {}/{}",
            f.dim_in, f.dim_out
        )));
    }
    if f.weights.len() != f.k || f.means.len() != f.k || f.covariances.len() != f.k {
        return Err(bad(format!("arrays do not match k = {}", f.k)));
    }
    let mut means = Vec::with_capacity(f.k);
    for m in &f.means {
        if m.len() != JOINT_DIM {
            return Err(bad(format!(
                "mean of length {} (want {JOINT_DIM})",
                m.len()
            )));
        }
        means.push(JointVector::from_column_slice(m));
    }
    let mut covs = Vec::with_capacity(f.k);
    for c in &f.covariances {
        if c.len() != JOINT_DIM || c.iter().any(|r| r.len() != JOINT_DIM) {
            return Err(bad(format!("covariance is not {JOINT_DIM}x{JOINT_DIM}")));
        }
        covs.push(JointMatrix::from_fn(|r, col| c[r][col]));
    }
    let pinv = PseudoInverse::from_rows(&f.lhat_pinv).map_err(|e| bad(e.to_string()))?;
    GmmModel::new(f.weights, means, covs, f.lambda, pinv, f.seed)
}

pub fn save_model(model: &GmmModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json(model)).map_err(|e| Error::io(path, e))
}

/// Reads a model file and re-validates every model invariant.
pub fn load_model(path: impl AsRef<Path>) -> Result<GmmModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{SMatrix, Vector6};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(rng: &mut ChaCha8Rng) -> GmmModel {
        let k = 3;
        let mut w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        super::super::normalize(&mut w);
        let means = (0..k)
            .map(|_| JointVector::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let covs = (0..k)
            .map(|_| {
                let a = JointMatrix::from_fn(|_, _| rng.random_range(-1.0..1.0));
                a * a.transpose() + JointMatrix::identity() * 0.1
            })
            .collect();
        let pinv = PseudoInverse(SMatrix::from_fn(|_, _| rng.random_range(-1.0..1.0)));
        GmmModel::new(w, means, covs, 2.0, pinv, 42).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = model(&mut rng);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.json");
        save_model(&m, &p).unwrap();
        let back = load_model(&p).unwrap();
        assert_eq!(back, m);
        for _ in 0..100 {
            let eps = Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0));
            assert_eq!(
                m.gmr_predict(&eps).unwrap(),
                back.gmr_predict(&eps).unwrap()
            );
        }
        // the written form is also valid generic JSON
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(v["dim_in"], 6);
        assert_eq!(v["k"], 3);
    }

    #[test]
    fn truncated_file_is_malformed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let text = to_json(&model(&mut rng));
        let cut = &text[..text.len() / 2];
        assert!(matches!(
            from_json(cut, Path::new("m.json")),
            Err(Error::Malformed { .. })
        ));
    }

    #[test]
    fn bad_weights_fail_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = model(&mut rng);
        let mut v: serde_json::Value = serde_json::from_str(&to_json(&m)).unwrap();
        v["weights"][0] = serde_json::json!(0.9);
        let text = serde_json::to_string(&v).unwrap();
        assert!(matches!(
            from_json(&text, Path::new("m.json")),
            Err(Error::Invariant(_))
        ));
    }
}
