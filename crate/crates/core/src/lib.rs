//! Covariance structure of related populations from SNP allele-frequency panels.
//!
//! The crate provides the estimator family `Σ̂, Ŵ, D̂, V̂, Ŝ`, the operators `W`, `D`, `V`
//! relating them on symmetric matrices, sampling-bias corrections, cross-chromosome SNP
//! pairing, least-squares fits under linear hypotheses, root-partition search, and a drift
//! simulator on trees.

pub mod biascorr;
pub mod cli;

pub mod error;
pub mod estimators;
pub mod io;
pub mod lsfit;
pub mod pairing;
pub mod rootsplit;
pub mod symcore;
pub mod treesim;

pub use biascorr::{bias_moment, bias_s, corrected_estimates, BiasForm, Corrected, SampleSizes};
pub use error::{Error, Result};
pub use estimators::{
    d_hat, estimate_all, moment_matrix, s_hat, sigma_hat, v_hat, w_hat, Estimates, FreqPanel,
    KnownMeans, PairedPanel,
};
pub use lsfit::{ls_pair, project, w_invariance_check, LsPair, MatrixSubspace, Projection};
pub use pairing::{pair_snps, pairing_feasible, ChromCounts, PairingMethod, PairingOutcome};
pub use rootsplit::{find_root_split, split_report, RootPartition, SearchMode, Statistic};
pub use symcore::{
    apply, apply_d, apply_v, apply_w, frobenius_inner, kernel_basis, kernel_dim, operator_norm,
    OperatorKind, SymMat,
};
pub use treesim::{
    binomial_sample, expected_sigma, expected_sigma1, scenario_tree, simulate_panel,
    theoretical_sigma, RootFreqLaw, ScenarioParams, SimConfig, TreeModel,
};
