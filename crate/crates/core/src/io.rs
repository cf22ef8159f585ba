//! Factor files, tensor fixtures, trace CSV and atomic artifact writes.
//!
//! Factor file layout:
//!
//! ```json
//! {"dims":[P,Q,S], "rank":R, "scalar":"float"|"rational",
//!  "A":[[...],...], "B":[[...],...], "C":[[...],...]}
//! ```
//!
//! Matrices are arrays of rows. Rational entries are strings `"num/den"`.
//! Solver results add `phi`, `status`, `seed` and `c`.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::cp::FactorTriple;
use crate::error::{Error, Result};
use crate::lm::TraceRow;
use crate::matrix::Matrix;
use crate::scalar::{parse_rational, rational_to_string};
use crate::tensor::MatMulDims;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    Float,
    Rational,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Number(f64),
    Text(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorFile {
    pub dims: MatMulDims,
    pub rank: usize,
    pub scalar: ScalarKind,
    #[serde(rename = "A")]
    pub a: Vec<Vec<Entry>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<Entry>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<Entry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Squared sphere radius used by the solver run that produced the factors.
    #[serde(rename = "c", default, skip_serializing_if = "Option::is_none")]
    pub c_radius: Option<f64>,
}

impl FactorFile {
    pub fn from_float(dims: MatMulDims, f: &FactorTriple<f64>) -> Self {
        let rows = |m: &Matrix<f64>| -> Vec<Vec<Entry>> {
            m.to_rows()
                .into_iter()
                .map(|r| r.into_iter().map(Entry::Number).collect())
                .collect()
        };
        Self {
            dims,
            rank: f.rank(),
            scalar: ScalarKind::Float,
            a: rows(f.a()),
            b: rows(f.b()),
            c: rows(f.c()),
            phi: None,
            status: None,
            seed: None,
            c_radius: None,
        }
    }

    pub fn from_exact(dims: MatMulDims, f: &FactorTriple<BigRational>) -> Self {
        let rows = |m: &Matrix<BigRational>| -> Vec<Vec<Entry>> {
            m.to_rows()
                .into_iter()
                .map(|r| r.iter().map(|v| Entry::Text(rational_to_string(v))).collect())
                .collect()
        };
        Self {
            dims,
            rank: f.rank(),
            scalar: ScalarKind::Rational,
            a: rows(f.a()),
            b: rows(f.b()),
            c: rows(f.c()),
            phi: None,
            status: None,
            seed: None,
            c_radius: None,
        }
    }

    fn check_shapes(&self) -> Result<()> {
        let sizes = self.dims.mode_sizes();
        for (name, m, n) in [("A", &self.a, sizes[0]), ("B", &self.b, sizes[1]), ("C", &self.c, sizes[2])] {
            if m.len() != n {
                return Err(Error::Parse(format!(
                    "{name} has {} rows, dims {} need {n}",
                    m.len(),
                    self.dims
                )));
            }
            if let Some((i, row)) = m.iter().enumerate().find(|(_, r)| r.len() != self.rank) {
                return Err(Error::Parse(format!(
                    "{name} row {} has {} entries but rank is {}",
                    i + 1,
                    row.len(),
                    self.rank
                )));
            }
        }
        Ok(())
    }

    pub fn to_float(&self) -> Result<FactorTriple<f64>> {
        self.check_shapes()?;
        let conv = |rows: &Vec<Vec<Entry>>| -> Result<Matrix<f64>> {
            let rows = rows
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|e| match e {
                            Entry::Number(v) => Ok(*v),
                            Entry::Text(s) => parse_rational(s)
                                .map(|q| crate::scalar::Scalar::to_f64_lossy(&q))
                                .ok_or_else(|| Error::Parse(format!("bad entry {s:?}"))),
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            matrix_from_rows(&rows, self.rank)
        };
        FactorTriple::new(conv(&self.a)?, conv(&self.b)?, conv(&self.c)?)
    }

    /// Exact factors. Float entries are converted to the rational they represent exactly.
    pub fn to_exact(&self) -> Result<FactorTriple<BigRational>> {
        self.check_shapes()?;
        let conv = |rows: &Vec<Vec<Entry>>| -> Result<Matrix<BigRational>> {
            let rows = rows
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|e| match e {
                            Entry::Number(v) => BigRational::from_float(*v)
                                .ok_or_else(|| Error::Parse(format!("non-finite entry {v}"))),
                            Entry::Text(s) => parse_rational(s)
                                .ok_or_else(|| Error::Parse(format!("bad rational {s:?}"))),
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            matrix_from_rows(&rows, self.rank)
        };
        FactorTriple::new(conv(&self.a)?, conv(&self.b)?, conv(&self.c)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: Self =
            serde_json::from_str(s).map_err(|e| Error::Parse(format!("factor file: {e}")))?;
        f.check_shapes()?;
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn matrix_from_rows<T: crate::scalar::Scalar>(rows: &[Vec<T>], cols: usize) -> Result<Matrix<T>> {
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, cols));
    }
    Matrix::from_rows(rows)
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Trace CSV with columns `restart,iter,phi,mu,step_norm,accepted`.
pub fn trace_csv<'a>(traces: impl IntoIterator<Item = (usize, &'a [TraceRow])>) -> String {
    let mut out = String::from("restart,iter,phi,mu,step_norm,accepted\n");
    for (restart, rows) in traces {
        for r in rows {
            let _ = writeln!(
                out,
                "{restart},{},{:e},{:e},{:e},{}",
                r.iter, r.phi, r.mu, r.step_norm, r.accepted
            );
        }
    }
    out
}
