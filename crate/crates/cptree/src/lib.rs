//! Behavioural portfolio analysis on finite scenario trees.
//!
//! The crate evaluates distorted (gain/loss) objectives exactly on finite
//! discrete laws, constructs an equivalent martingale measure with bounded
//! density by dual utility maximisation, classifies preference parameters
//! as well- or ill-posed, probes objectives along leverage rays, searches
//! for optimal predictable strategies with moment diagnostics, stress-tests
//! the distorted-moment inequalities behind the well-posedness results, and
//! extracts independent innovations from positive joint densities via
//! conditional-CDF transforms.
//!
//! Start with the `examples/` directory: one runnable example per
//! capability. A thin `cptree` binary exposes the same operations as
//! subcommands producing reproducible run directories.

pub mod cpt;
pub mod dual;
pub mod error;
pub mod fixtures;
pub mod gate;
pub mod innovations;
pub mod lemmas;
pub mod market;
pub mod optimize;
pub mod runner;

mod numerics;

pub use error::{Error, Result};
