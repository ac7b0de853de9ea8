//! Supervised pixelwise texture classification with multilevel structured
//! dictionaries.
//!
//! One discriminative multilevel dictionary is learnt per texture class from
//! image patches. Each pixel of a test image is scored by the normalized
//! sparse-reconstruction error of its patch over every class dictionary, and
//! the resulting label image is refined with Potts-model alpha-expansion
//! graph cuts followed by an erosion pass.
//!
//! The numeric core is generic over the scalar type (see [`Real`]); the
//! concrete aliases below fix `f64`, which is what the CLI and the file
//! formats use.

pub mod classify;
pub mod config;
pub mod dictlearn;
pub mod error;
pub mod imageio;
pub mod linalg;
pub mod model;
pub mod patches;
pub mod rng;
pub mod scalar;
pub mod smoothing;
pub mod sparse;

pub use error::Error;
pub use scalar::Real;

/// `f64` dense matrix.
pub type Mat = linalg::DenseMatrix<f64>;
/// `f64` unit-norm vector.
pub type Unit = linalg::UnitVector<f64>;
/// `f64` flat dictionary.
pub type Dict = sparse::FlatDictionary<f64>;
/// `f64` multilevel dictionary.
pub type Structure = sparse::MultilevelDictionary<f64>;
/// `f64` patch set.
pub type Patches = patches::PatchSet<f64>;
/// `f64` per-pixel, per-class cost volume.
pub type Costs = smoothing::CostVolume<f64>;
/// `f64` trained classifier.
pub type Model = classify::ClassifierModel<f64>;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
