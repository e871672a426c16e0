//! Synthetic ocean ensemble: generation, storage, pairing, normalization.

pub mod dataset;
pub mod gen;
pub mod storage;

pub use dataset::{make_pairs, split_sims, Normalizer, PairIndex, PairedDataset, Split, Subset, DEFAULT_RATIOS};
pub use gen::{basin_mask, generate_ensemble, simulate, GenConfig, SimulationEnsemble, Solver, CHANNEL_NAMES};
pub use storage::{load_ensemble, save_ensemble};
