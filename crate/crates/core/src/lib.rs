//! Pharmacokinetic parameter estimation for DCE-MRI: tracer-kinetic
//! physics, population AIFs, classical least-squares fitting, digital
//! phantoms and image-quality metrics.

pub mod aif;
pub mod error;
pub mod fitting;
pub mod metrics;
pub mod phantom;
pub mod physics;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    per_min_to_per_s, per_s_to_per_min, validate_units, AcqParams, AuxMaps, DceSeries, PkMap,
    PlasmaCurve, TkModel, VoxelParams, DEFAULT_HEMATOCRIT, GADOBUTROL_R1,
};
