//! Topological hidden Markov models: HMMs whose observations are sample
//! paths of stochastic processes, scored with Onsager-Machlup emission
//! functionals.
//!
//! Observations live on a uniform grid over `[0, 1]` ([`path_grid`]).
//! Each emission family in [`emissions`] knows how to score a path and how
//! to reestimate its parameters from posterior weights; [`hmm_engine`]
//! provides forward-backward, Baum-Welch and Viterbi on top of that.
//! [`simulate`] generates synthetic datasets, [`init`] and [`fit`] choose
//! starting points and run restarts, and [`evaluate`] scores decoded
//! states against ground truth.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod emissions;
pub mod error;
pub mod evaluate;
pub mod fit;
pub mod hmm_engine;
pub mod init;
pub mod path_grid;
pub mod simulate;

pub use emissions::{EmissionModel, Family, Observations, Precision};
pub use error::{Result, ThmmError};
pub use evaluate::{adjusted_rand_index, align_labels, confusion_matrix, Labeling};
pub use fit::{fit, FitConfig, FitOutcome, InitStrategy, ModelSpec};
pub use hmm_engine::{baum_welch, viterbi, FitOptions, FitReport, MarkovChain, ThmmModel};
pub use path_grid::{Grid, Path, SobolevOrder};
pub use simulate::Seed;
