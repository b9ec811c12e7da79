//! Per-step episode logs and their CSV form.
//!
//! The main CSV has one row per control step with the header
//! `t,e0..e7,vx,vy,vz,wx,wy,wz,u0,v0,u1,v1,u2,v2,u3,v3,px,py,pz,qw,qx,qy,qz`.
//! Quantities that do not fit that schema (target pose, visibility, regressed
//! compensation) go to a companion `*_aux.csv`.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::se3::{PoseRecord, Twist};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    /// Visual error in normalized image units.
    pub error: [f64; 8],
    /// Commanded camera twist `(vx, vy, vz, wx, wy, wz)`.
    pub twist: [f64; 6],
    /// Corner pixels `(u0, v0, …, u3, v3)`.
    pub pixels: [f64; 8],
    pub camera: PoseRecord,
}

impl Sample {
    pub fn twist(&self) -> Twist {
        Twist::from_vector(&self.twist.into())
    }
}

/// Step data kept alongside [`Sample`] but outside the main CSV schema.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepAux {
    pub target: PoseRecord,
    pub in_view: bool,
    /// Regressed or supplied compensation twist, when the controller has one.
    pub rho: Option<[f64; 6]>,
    /// True feature drift `∂e/∂t` used by the oracle.
    pub feature_rate: Option<[f64; 8]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub dt: f64,
    pub samples: Vec<Sample>,
    /// Either empty or one entry per sample.
    pub aux: Vec<StepAux>,
}

pub const CSV_HEADER: [&str; 30] = [
    "t", "e0", "e1", "e2", "e3", "e4", "e5", "e6", "e7", "vx", "vy", "vz", "wx", "wy", "wz", "u0",
    "v0", "u1", "v1", "u2", "v2", "u3", "v3", "px", "py", "pz", "qw", "qx", "qy", "qz",
];

pub const AUX_HEADER: [&str; 15] = [
    "t", "tx", "ty", "tz", "tqw", "tqx", "tqy", "tqz", "in_view", "rho0", "rho1", "rho2", "rho3",
    "rho4", "rho5",
];

/// Companion file path: `dir/name.csv` → `dir/name_aux.csv`.
pub fn aux_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}_aux.csv"))
}

fn fmt(x: f64) -> String {
    // shortest representation that parses back to the same f64
    format!("{x:?}")
}

impl Trace {
    pub fn new(dt: f64) -> Self {
        Trace {
            dt,
            samples: Vec::new(),
            aux: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_aux(&self) -> bool {
        !self.aux.is_empty() && self.aux.len() == self.samples.len()
    }

    /// Keeps the first `n` samples.
    pub fn truncated(&self, n: usize) -> Trace {
        let n = n.min(self.len());
        Trace {
            dt: self.dt,
            samples: self.samples[..n].to_vec(),
            aux: if self.has_aux() {
                self.aux[..n].to_vec()
            } else {
                Vec::new()
            },
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::io("<csv>", std::io::Error::other(e));
        wr.write_record(CSV_HEADER).map_err(io)?;
        for s in &self.samples {
            let mut row: Vec<String> = Vec::with_capacity(30);
            row.push(fmt(s.t));
            row.extend(s.error.iter().map(|x| fmt(*x)));
            row.extend(s.twist.iter().map(|x| fmt(*x)));
            row.extend(s.pixels.iter().map(|x| fmt(*x)));
            row.extend(s.camera.translation.iter().map(|x| fmt(*x)));
            row.extend(s.camera.quaternion.iter().map(|x| fmt(*x)));
            wr.write_record(&row).map_err(io)?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn write_aux_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::io("<csv>", std::io::Error::other(e));
        wr.write_record(AUX_HEADER).map_err(io)?;
        for (s, a) in self.samples.iter().zip(&self.aux) {
            let mut row: Vec<String> = Vec::with_capacity(15);
            row.push(fmt(s.t));
            row.extend(a.target.translation.iter().map(|x| fmt(*x)));
            row.extend(a.target.quaternion.iter().map(|x| fmt(*x)));
            row.push(if a.in_view { "1" } else { "0" }.to_string());
            match a.rho {
                Some(r) => row.extend(r.iter().map(|x| fmt(*x))),
                None => row.extend(std::iter::repeat_n(String::new(), 6)),
            }
            wr.write_record(&row).map_err(io)?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Writes `path` and, when aux data is present, its companion file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
            .map_err(|e| relabel(e, path))?;
        if self.has_aux() {
            let ap = aux_path(path);
            let f = std::fs::File::create(&ap).map_err(|e| Error::io(&ap, e))?;
            self.write_aux_csv(std::io::BufWriter::new(f))
                .map_err(|e| relabel(e, &ap))?;
        }
        Ok(())
    }

    /// Parses a trace CSV. `dt` is taken from the first two rows and every
    /// step must match it.
    pub fn read_csv<R: std::io::Read>(r: R, path: &Path) -> Result<Trace> {
        let mut rd = csv::Reader::from_reader(r);
        let hdr = rd.headers().map_err(|e| Error::malformed(path, e))?.clone();
        if hdr.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(Error::malformed(path, "unexpected CSV header"));
        }
        let mut samples = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| Error::malformed(path, e))?;
            let v: Vec<f64> = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::malformed(path, format!("row {}: {e}", line + 1)))?;
            if v.len() != 30 {
                return Err(Error::malformed(
                    path,
                    format!("row {} has {} fields", line + 1, v.len()),
                ));
            }
            let arr = |a: usize, b: usize| v[a..b].to_vec();
            samples.push(Sample {
                t: v[0],
                error: arr(1, 9).try_into().expect("8"),
                twist: arr(9, 15).try_into().expect("6"),
                pixels: arr(15, 23).try_into().expect("8"),
                camera: PoseRecord {
                    translation: arr(23, 26).try_into().expect("3"),
                    quaternion: arr(26, 30).try_into().expect("4"),
                },
            });
        }
        let dt = infer_dt(&samples).map_err(|why| Error::malformed(path, why))?;
        Ok(Trace {
            dt,
            samples,
            aux: Vec::new(),
        })
    }

    pub fn read_aux_csv<R: std::io::Read>(&mut self, r: R, path: &Path) -> Result<()> {
        let mut rd = csv::Reader::from_reader(r);
        let hdr = rd.headers().map_err(|e| Error::malformed(path, e))?.clone();
        if hdr.iter().collect::<Vec<_>>() != AUX_HEADER {
            return Err(Error::malformed(path, "unexpected aux CSV header"));
        }
        let mut aux = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| Error::malformed(path, e))?;
            let f: Vec<&str> = rec.iter().collect();
            if f.len() != 15 {
                return Err(Error::malformed(
                    path,
                    format!("aux row {} has {} fields", line + 1, f.len()),
                ));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::malformed(path, format!("aux row {}: {e}", line + 1)))
            };
            let mut vals = [0.0; 7];
            for (i, v) in vals.iter_mut().enumerate() {
                *v = num(f[i + 1])?;
            }
            let rho = if f[9..15].iter().all(|s| s.is_empty()) {
                None
            } else {
                let mut r = [0.0; 6];
                for (i, v) in r.iter_mut().enumerate() {
                    *v = num(f[9 + i])?;
                }
                Some(r)
            };
            aux.push(StepAux {
                target: PoseRecord {
                    translation: [vals[0], vals[1], vals[2]],
                    quaternion: [vals[3], vals[4], vals[5], vals[6]],
                },
                in_view: f[8] == "1",
                rho,
                feature_rate: None,
            });
        }
        if aux.len() != self.samples.len() {
            return Err(Error::malformed(
                path,
                format!(
                    "aux has {} rows, trace has {}",
                    aux.len(),
                    self.samples.len()
                ),
            ));
        }
        self.aux = aux;
        Ok(())
    }

    /// Loads a trace and, if it exists, its companion aux file.
    pub fn load(path: impl AsRef<Path>) -> Result<Trace> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut trace = Trace::read_csv(std::io::BufReader::new(f), path)?;
        let ap = aux_path(path);
        if ap.exists() {
            let f = std::fs::File::open(&ap).map_err(|e| Error::io(&ap, e))?;
            trace.read_aux_csv(std::io::BufReader::new(f), &ap)?;
        }
        Ok(trace)
    }
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

fn infer_dt(samples: &[Sample]) -> std::result::Result<f64, String> {
    if samples.len() < 2 {
        return Ok(0.0);
    }
    let dt = samples[1].t - samples[0].t;
    if !(dt > 0.0) {
        return Err("timestamps are not strictly increasing".into());
    }
    for (n, w) in samples.windows(2).enumerate() {
        if ((w[1].t - w[0].t) - dt).abs() > 1e-9 {
            return Err(format!("non-constant time step at row {}", n + 2));
        }
    }
    Ok(dt)
}
