//! Trajectory design toolkit for low-thrust, multi-gravity-assist missions to
//! the Jovian moons.
//!
//! The crate is organised bottom-up:
//!
//! - [`bodies`]: body catalog and analytic ephemerides.
//! - [`twobody`]: Kepler propagation, Lambert arcs, linked-conic swing-bys.
//! - [`phasing`]: integer phasing search for planetary swing-by dates.
//! - [`sot`]: minimum-time synchronous orbit tours of a single moon.
//! - [`impulsive`]: multi-impulse linked-conic trajectories with deep-space
//!   manoeuvres and their optimization.
//! - [`sep`]: solar-electric power and thrust model.
//! - [`capture`]: single-swing-by capture analysis at Jupiter.
//! - [`dfet`]: finite-elements-in-time transcription of low-thrust phases.
//! - [`nlp`]: the dense constrained optimizer shared by the above.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bodies;
pub mod capture;
pub mod dfet;
pub mod impulsive;
pub mod nlp;
pub mod phasing;
pub mod roots;
pub mod sep;
pub mod sot;
pub mod time;
pub mod twobody;

pub use bodies::{Body, BodyCatalog, MeanElements};
pub use twobody::CartesianState;

/// Astronomical unit in km.
pub const AU_KM: f64 = 149_597_870.7;
/// Standard gravity in m/s².
pub const G0: f64 = 9.806_65;
/// Library version.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
