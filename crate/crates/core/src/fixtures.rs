//! Shipped reference data: Strassen's decomposition of `T_222`, a rank-15
//! decomposition of `T_332`, the `T_222` ones list, and the table of known
//! rank / border-rank upper bounds for small cases.

use num_rational::BigRational;
use serde::Deserialize;

use crate::cp::FactorTriple;
use crate::error::Result;
use crate::io::FactorFile;
use crate::tensor::{MatMulDims, TensorFixture};

pub const STRASSEN_JSON: &str = include_str!("../fixtures/strassen.json");
pub const T332_R15_JSON: &str = include_str!("../fixtures/t332_r15.json");
pub const T222_ONES_JSON: &str = include_str!("../fixtures/t222_ones.json");
pub const REFERENCE_RANKS_JSON: &str = include_str!("../fixtures/reference_ranks.json");

pub fn strassen() -> FactorTriple<BigRational> {
    FactorFile::from_json(STRASSEN_JSON)
        .and_then(|f| f.to_exact())
        .expect("shipped fixture parses")
}

pub fn t332_rank15() -> FactorTriple<BigRational> {
    FactorFile::from_json(T332_R15_JSON)
        .and_then(|f| f.to_exact())
        .expect("shipped fixture parses")
}

pub fn t222_ones() -> TensorFixture {
    serde_json::from_str(T222_ONES_JSON).expect("shipped fixture parses")
}

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
pub struct ReferenceCase {
    pub label: String,
    pub dims: MatMulDims,
    pub ones: usize,
    pub rank: usize,
    pub border_rank: usize,
    /// Too large for routine desk-scale runs.
    pub extended: bool,
}

pub fn reference_table() -> Vec<ReferenceCase> {
    serde_json::from_str(REFERENCE_RANKS_JSON).expect("shipped table parses")
}

pub fn reference_case(dims: MatMulDims) -> Option<ReferenceCase> {
    reference_table().into_iter().find(|c| c.dims == dims)
}

/// Loads a factor file shipped with the crate by name (`strassen`, `t332_r15`).
pub fn shipped_factor_file(name: &str) -> Result<FactorFile> {
    let src = match name {
        "strassen" | "strassen.json" => STRASSEN_JSON,
        "t332_r15" | "t332_r15.json" => T332_R15_JSON,
        other => {
            return Err(crate::Error::InvalidArgument(format!(
                "no shipped fixture named {other:?}"
            )))
        }
    };
    FactorFile::from_json(src)
}
