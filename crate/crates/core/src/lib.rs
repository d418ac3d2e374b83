//! Dyadic matrix-weighted harmonic analysis: adapted Haar systems, band
//! operators on a truncated dyadic tree, two-weight T1 certification and
//! Carleson embedding checks.

pub mod band;
pub mod carleson;
pub mod certify;
pub mod cli;
pub mod dyadic;
pub mod error;
pub mod haar;
pub mod linalg;
pub mod suite;
pub mod weight;

pub use band::{generate_operator, BandOperator, OperatorKind, WellLocReport};
pub use carleson::{build_stopping_tree, CarlesonInstance, StoppingTree};
pub use certify::{certify, CertificationReport, CertifyOptions, TestingConstants};
pub use dyadic::{DyadicInterval, TreeConfig};
pub use error::{Error, Result};
pub use haar::{CoeffVector, HaarSystem, WeightedFunction};
pub use suite::{run_sweep, Preset, SweepReport};
pub use weight::{generate_weight, Characteristics, WeightGrid, WeightKind};
