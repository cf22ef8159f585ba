//! Bilinear multiplication programs read off verified decompositions.
//!
//! Product `r` multiplies the linear form of `E` given by column `r` of `A`
//! with the form of `F` given by column `r` of `B`. Entry `k` of `vec(G)`
//! (column-major) is row `k` of `C` applied to the products.
//!
//! For the shipped rank-15 `T_332` triple, expanding row 1 of `C` gives
//! `g11 = m3 - m4 + m6 + m8 + m15`. Displays of this algorithm that list
//! `m12` in place of `m15` there do not multiply correctly; the factor
//! matrices, which are certified exactly, are taken as ground truth.

use std::fmt::Write as _;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::cp::FactorTriple;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rationalize::{verify_exact, Verification};
use crate::scalar::{parse_rational, rational_to_string, Scalar};
use crate::tensor::MatMulDims;
use crate::BigRational;

/// Nonzero coefficient of a sparse rational vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    /// 0-based position in the vector.
    pub index: usize,
    #[serde(with = "rational_str")]
    pub coeff: BigRational,
}

mod rational_str {
    use super::*;
    use serde::{de::Error as _, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigRational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&rational_to_string(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigRational, D::Error> {
        let s = String::deserialize(d)?;
        parse_rational(&s).ok_or_else(|| D::Error::custom(format!("bad rational {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Product {
    /// Coefficients over `vec(Eᵀ)`, i.e. `E` scanned row by row.
    pub e_coeffs: Vec<Term>,
    /// Coefficients over `vec(Fᵀ)`.
    pub f_coeffs: Vec<Term>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BilinearProgram {
    pub dims: MatMulDims,
    pub products: Vec<Product>,
    /// One combination of products per entry of `vec(G)`, column-major.
    pub outputs: Vec<Vec<Term>>,
}

fn sparse(values: impl IntoIterator<Item = BigRational>) -> Vec<Term> {
    values
        .into_iter()
        .enumerate()
        .filter(|(_, c)| !c.is_zero())
        .map(|(index, coeff)| Term { index, coeff })
        .collect()
}

/// Builds the program for a triple that passes [`verify_exact`].
pub fn export_bilinear(f: &FactorTriple<BigRational>, dims: MatMulDims) -> Result<BilinearProgram> {
    if let Verification::Counterexample { index, .. } = verify_exact(f, dims)? {
        return Err(Error::Unverified { index });
    }
    if f.rank() == 0 {
        return Err(Error::InvalidArgument("empty decomposition".into()));
    }
    let products = (0..f.rank())
        .map(|r| Product {
            e_coeffs: sparse(f.a().column(r)),
            f_coeffs: sparse(f.b().column(r)),
        })
        .collect();
    let outputs = (0..f.c().rows()).map(|k| sparse(f.c().row(k).iter().cloned())).collect();
    Ok(BilinearProgram { dims, products, outputs })
}

/// Result of evaluating a program.
#[derive(Clone, Debug, PartialEq)]
pub struct BilinearRun<T> {
    pub g: Matrix<T>,
    /// Multiplications of an `E` form by an `F` form.
    pub products: usize,
}

fn apply_form<T: Scalar>(terms: &[Term], values: &[T]) -> Result<T> {
    let mut acc = T::zero();
    for t in terms {
        let c = T::from_rational(&t.coeff)
            .ok_or_else(|| Error::InvalidArgument(format!("coefficient {} not representable", t.coeff)))?;
        let v = values
            .get(t.index)
            .ok_or_else(|| Error::Shape(format!("coefficient index {} out of range", t.index)))?;
        acc = acc + c * v.clone();
    }
    Ok(acc)
}

/// Evaluates the program on `E (P×Q)` and `F (Q×S)`.
pub fn run_bilinear<T: Scalar>(prog: &BilinearProgram, e: &Matrix<T>, f: &Matrix<T>) -> Result<BilinearRun<T>> {
    let (p, q, s) = (prog.dims.p(), prog.dims.q(), prog.dims.s());
    if e.shape() != (p, q) || f.shape() != (q, s) {
        return Err(Error::Shape(format!(
            "operands {:?} and {:?} for dims {}",
            e.shape(),
            f.shape(),
            prog.dims
        )));
    }
    let ev = e.vec_row_major();
    let fv = f.vec_row_major();
    let mut m = Vec::with_capacity(prog.products.len());
    for prod in &prog.products {
        m.push(apply_form(&prod.e_coeffs, &ev)? * apply_form(&prod.f_coeffs, &fv)?);
    }
    let mut g = Matrix::zeros(p, s);
    for (k, out) in prog.outputs.iter().enumerate() {
        g[(k % p, k / p)] = apply_form(out, &m)?;
    }
    Ok(BilinearRun { g, products: m.len() })
}

fn var(prefix: char, row: usize, col: usize) -> String {
    format!("{prefix}{}{}", row + 1, col + 1)
}

/// Renders `Σ cᵢ·namesᵢ` as `a + b - 2c`.
fn render_sum(terms: &[Term], name: impl Fn(usize) -> String) -> String {
    let mut out = String::new();
    for (pos, t) in terms.iter().enumerate() {
        let neg = t.coeff.is_negative();
        let mag = t.coeff.abs();
        match (pos, neg) {
            (0, true) => out.push('-'),
            (0, false) => {}
            (_, true) => out.push_str(" - "),
            (_, false) => out.push_str(" + "),
        }
        if !mag.is_one() {
            if mag.is_integer() {
                out.push_str(&mag.numer().to_string());
            } else {
                out.push_str(&rational_to_string(&mag));
            }
            out.push('*');
        }
        out.push_str(&name(t.index));
    }
    if out.is_empty() {
        out.push('0');
    }
    out
}

/// Negates the form when most of its coefficients are negative; returns whether it did.
fn factor_sign(terms: &[Term]) -> (Vec<Term>, bool) {
    let negatives = terms.iter().filter(|t| t.coeff.is_negative()).count();
    if 2 * negatives > terms.len() {
        let flipped = terms
            .iter()
            .map(|t| Term {
                index: t.index,
                coeff: -t.coeff.clone(),
            })
            .collect();
        (flipped, true)
    } else {
        (terms.to_vec(), false)
    }
}

impl BilinearProgram {
    pub fn rank(&self) -> usize {
        self.products.len()
    }

    fn e_name(&self, i: usize) -> String {
        let q = self.dims.q();
        var('e', i / q, i % q)
    }

    fn f_name(&self, j: usize) -> String {
        let s = self.dims.s();
        var('f', j / s, j % s)
    }

    fn g_name(&self, k: usize) -> String {
        let p = self.dims.p();
        var('g', k % p, k / p)
    }

    /// Product line such as `m1 = -(e11 + e12 - e31)(f11 - f12)`.
    pub fn product_text(&self, r: usize) -> String {
        let prod = &self.products[r];
        let (e, ne) = factor_sign(&prod.e_coeffs);
        let (f, nf) = factor_sign(&prod.f_coeffs);
        let sign = if ne != nf { "-" } else { "" };
        format!(
            "m{} = {sign}({})({})",
            r + 1,
            render_sum(&e, |i| self.e_name(i)),
            render_sum(&f, |j| self.f_name(j))
        )
    }

    pub fn output_text(&self, k: usize) -> String {
        format!("{} = {}", self.g_name(k), render_sum(&self.outputs[k], |r| format!("m{}", r + 1)))
    }

    /// Product lines followed by the entries of `G` row by row.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rank() {
            let _ = writeln!(out, "{}", self.product_text(r));
        }
        out.push('\n');
        let (p, s) = (self.dims.p(), self.dims.s());
        for row in 0..p {
            for col in 0..s {
                let _ = writeln!(out, "{}", self.output_text(col * p + row));
            }
        }
        out
    }

    /// Operation counts of the straight-line form.
    pub fn counts(&self) -> OpCounts {
        let forms = self
            .products
            .iter()
            .flat_map(|p| [&p.e_coeffs, &p.f_coeffs])
            .chain(self.outputs.iter());
        let mut c = OpCounts {
            multiplications: self.rank(),
            additions: 0,
            scalings: 0,
        };
        for terms in forms {
            c.additions += terms.len().saturating_sub(1);
            c.scalings += terms.iter().filter(|t| !t.coeff.abs().is_one()).count();
        }
        c
    }

    /// Straight-line code: one line per linear form, product and output.
    pub fn to_pseudocode(&self) -> String {
        let c = self.counts();
        let mut out = format!(
            "# {} multiplications, {} additions, {} scalings\n",
            c.multiplications, c.additions, c.scalings
        );
        for (r, prod) in self.products.iter().enumerate() {
            let _ = writeln!(out, "u{} = {}", r + 1, render_sum(&prod.e_coeffs, |i| self.e_name(i)));
            let _ = writeln!(out, "v{} = {}", r + 1, render_sum(&prod.f_coeffs, |j| self.f_name(j)));
            let _ = writeln!(out, "m{0} = u{0} * v{0}", r + 1);
        }
        for k in 0..self.outputs.len() {
            let _ = writeln!(out, "{}", self.output_text(k));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub multiplications: usize,
    pub additions: usize,
    pub scalings: usize,
}
