//! Online dictionary learning on raw signals and on hidden codes, scored
//! against task designs by Pearson correlation.

mod dictionary;
mod validate;

pub use dictionary::{
    code_signal, dict_update, lasso_objective, odl_fit, sparse_code, surrogate_objective,
    Accumulators, Dictionary, OdlConfig, OdlFit, SparseCodes, Sparsity,
};
pub use validate::{
    match_designs, pearson_corr, run_validation, EventMatch, Projection, ValidationConfig,
    ValidationReport,
};
