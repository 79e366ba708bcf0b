//! Two-body kernels: universal-variable Kepler propagation, Lambert arcs,
//! linked-conic swing-by geometry and Hohmann timing.

mod kepler;
mod lambert;
mod swingby;

use nalgebra::Vector3;
use thiserror::Error;

pub use kepler::{kepler_propagate, stumpff_c, stumpff_s};
pub(crate) use kepler::propagate_rv;
pub use lambert::{lambert, lambert_in_plane, lambert_max_revolutions, Branch, LambertArc};
pub use swingby::{
    hohmann_time, periapsis_for_deflection, swingby_apply, swingby_deflection, SwingBy,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TwoBodyError {
    #[error("Kepler propagation did not converge after {iterations} iterations (residual {residual:e} s)")]
    KeplerNotConverged { iterations: usize, residual: f64 },
    #[error("degenerate state: {0}")]
    Degenerate(&'static str),
    #[error("no Lambert solution with {nrev} revolutions for tof = {tof} s (at most {max_revs} fit)")]
    NoSolution { nrev: u32, tof: f64, max_revs: u32 },
    #[error("Lambert iteration did not converge (residual {0:e})")]
    LambertNotConverged(f64),
    #[error("pericentre radius {r_p} km is below the floor {floor} km for `{body}`")]
    BelowFloor { body: String, r_p: f64, floor: f64 },
}

/// Position/velocity pair about a named central body.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianState {
    /// km
    pub r: Vector3<f64>,
    /// km/s
    pub v: Vector3<f64>,
    /// MJD2000 days
    pub t: f64,
    pub center: String,
}

impl CartesianState {
    pub fn new(r: Vector3<f64>, v: Vector3<f64>, t: f64, center: impl Into<String>) -> Self {
        Self {
            r,
            v,
            t,
            center: center.into(),
        }
    }

    pub fn specific_energy(&self, mu: f64) -> f64 {
        0.5 * self.v.norm_squared() - mu / self.r.norm()
    }

    pub fn angular_momentum(&self) -> Vector3<f64> {
        self.r.cross(&self.v)
    }
}

/// Pericentre and apocentre radii of the conic through `(r, v)`.
/// The apocentre is infinite for unbound states.
pub fn apsides(r: &Vector3<f64>, v: &Vector3<f64>, mu: f64) -> (f64, f64) {
    let h = r.cross(v).norm();
    let energy = 0.5 * v.norm_squared() - mu / r.norm();
    let p = h * h / mu;
    let e = (1.0 + 2.0 * energy * h * h / (mu * mu)).max(0.0).sqrt();
    let rp = p / (1.0 + e);
    let ra = if e < 1.0 { p / (1.0 - e) } else { f64::INFINITY };
    (rp, ra)
}
