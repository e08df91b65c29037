//! Representation similarity: linear CKA, PCA-whitened CCA and the
//! original-space energy of highly correlated canonical directions.

mod cca;
mod cka;

pub use cca::{
    aligned_energy, cca, cca_mean_at_k, permutation_null_ceiling, AlignedEnergyReport, CcaResult,
    Side,
};
pub use cka::{linear_cka, linear_cka_values};
