//! Indefinite kernel logistic regression trained by concave-inexact-convex
//! procedures, with spectrum-repair baselines.

pub mod data;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod solver;
pub mod spectral;

pub use data::{fit_normalizer, kfold, load_dataset, split, Dataset, NormParams};
pub use error::{Error, Result};
pub use kernel::{cross_matrix, gram_matrix, KernelMatrix, KernelSpec};
pub use model::{accuracy, classify, load_model, predict_scores, save_model, train_model, Method, Model};
pub use objective::ProblemInstance;
pub use solver::{ccicp_train, cccp_train, klr_train, SolveResult, SolverConfig};
pub use spectral::{decompose, eigh, spectrum_modify, EigenDecomposition, PositiveDecomposition, SpectrumMode};
