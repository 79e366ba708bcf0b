//! Capture at Jupiter with a single moon flyby.
//!
//! The spacecraft crosses the sphere of influence with speed `v_SOI`, falls
//! to the moon's orbit and meets the moon with its velocity at angle `γ` from
//! the moon's velocity. The flyby rotates the relative velocity by `β`; the
//! resulting jovicentric energy decides whether the spacecraft is captured.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bodies::{BodyCatalog, CatalogError};
use crate::roots::{brent, golden_max};

/// Default radius of Jupiter's sphere of influence, km.
pub const JUPITER_SOI_KM: f64 = 4.82e7;

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("speed {v_soi} km/s at {r_soi} km cannot reach the moon's orbit")]
    SubEscape { v_soi: f64, r_soi: f64 },
    #[error("no capture possible at gamma = {gamma} rad in [{lo}, {hi}] km/s")]
    NoCapture { gamma: f64, lo: f64, hi: f64 },
    #[error("invalid query: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureQuery {
    pub moon: String,
    /// Speed at the sphere of influence, km/s.
    pub v_soi: f64,
    /// Angle between the incoming velocity and the moon velocity, rad.
    pub gamma: f64,
    /// Flyby altitude, km.
    pub h_p: f64,
    /// Sphere-of-influence radius, km.
    pub r_soi: f64,
}

impl CaptureQuery {
    pub fn new(moon: impl Into<String>, v_soi: f64, gamma: f64, h_p: f64) -> Self {
        Self {
            moon: moon.into(),
            v_soi,
            gamma,
            h_p,
            r_soi: JUPITER_SOI_KM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureOutcome {
    /// Speed at the moon before the flyby, km/s.
    pub v_in: f64,
    /// Deflection, rad.
    pub beta: f64,
    /// Jovicentric energy after the flyby, km²/s².
    pub energy: f64,
    /// Period after the flyby, s. `None` when unbound.
    pub period: Option<f64>,
}

struct Geometry {
    v_m: f64,
    mu_moon: f64,
    mu_parent: f64,
    r_p: f64,
}

fn geometry(q: &CaptureQuery, catalog: &BodyCatalog) -> Result<Geometry, CaptureError> {
    let moon = catalog.resolve(&q.moon)?;
    let parent = catalog.parent_of(moon)?;
    let a = moon.elements()?.a;
    if !(q.v_soi >= 0.0) || !(0.0..=PI).contains(&q.gamma) || !(q.r_soi > a) {
        return Err(CaptureError::Invalid(
            "need v_soi >= 0, gamma in [0, pi], r_soi beyond the moon".into(),
        ));
    }
    if q.h_p < moon.min_flyby_altitude {
        return Err(CaptureError::Invalid(format!(
            "altitude {} km is below the {} km floor of `{}`",
            q.h_p, moon.min_flyby_altitude, moon.id
        )));
    }
    Ok(Geometry {
        v_m: (parent.mu / a).sqrt(),
        mu_moon: moon.mu,
        mu_parent: parent.mu,
        r_p: moon.radius + q.h_p,
    })
}

/// Speed on arrival at the moon's orbit, km/s.
pub fn incoming_speed(q: &CaptureQuery, catalog: &BodyCatalog) -> Result<f64, CaptureError> {
    let g = geometry(q, catalog)?;
    speed_at_moon(q, &g)
}

fn speed_at_moon(q: &CaptureQuery, g: &Geometry) -> Result<f64, CaptureError> {
    let v2 = q.v_soi * q.v_soi + 2.0 * g.v_m * g.v_m - 2.0 * g.mu_parent / q.r_soi;
    if v2 < 0.0 {
        return Err(CaptureError::SubEscape {
            v_soi: q.v_soi,
            r_soi: q.r_soi,
        });
    }
    Ok(v2.sqrt())
}

/// Energy and period of the orbit after the flyby.
pub fn post_capture_energy_and_period(
    q: &CaptureQuery,
    catalog: &BodyCatalog,
) -> Result<CaptureOutcome, CaptureError> {
    let g = geometry(q, catalog)?;
    outcome(q, &g)
}

fn outcome(q: &CaptureQuery, g: &Geometry) -> Result<CaptureOutcome, CaptureError> {
    let v = speed_at_moon(q, g)?;
    let vm = g.v_m;
    let cg = q.gamma.cos();
    let v_rel2 = v * v + vm * vm - 2.0 * vm * v * cg;
    let beta = 2.0 * (g.mu_moon / (g.mu_moon + g.r_p * v_rel2)).asin();
    let energy = 0.5 * v * v - vm * (v * cg + vm * beta.cos()) + vm * v * (q.gamma + beta).cos();
    let period = (energy < 0.0).then(|| TAU * g.mu_parent * (-2.0 * energy).powf(-1.5));
    Ok(CaptureOutcome {
        v_in: v,
        beta,
        energy,
        period,
    })
}

/// Largest `v_SOI` that still ends bound after the flyby at angle `gamma`.
pub fn parabolic_limit(
    gamma: f64,
    moon: &str,
    h_p: f64,
    r_soi: f64,
    catalog: &BodyCatalog,
) -> Result<f64, CaptureError> {
    let mut q = CaptureQuery::new(moon, 0.0, gamma, h_p);
    q.r_soi = r_soi;
    let g = geometry(&q, catalog)?;
    let (lo, hi) = (0.0, 50.0);
    let energy = |v: f64| {
        let mut qq = q.clone();
        qq.v_soi = v;
        outcome(&qq, &g).map_or(f64::NAN, |o| o.energy)
    };
    let (e_lo, e_hi) = (energy(lo), energy(hi));
    if !(e_lo < 0.0 && e_hi > 0.0) {
        return Err(CaptureError::NoCapture { gamma, lo, hi });
    }
    brent(energy, lo, hi, 1e-9).map_err(|_| CaptureError::NoCapture { gamma, lo, hi })
}

/// Angle that maximises [`parabolic_limit`] over `[0, π/2]`: `(γ, v_SOI_max)`.
pub fn best_parabolic_limit(
    moon: &str,
    h_p: f64,
    r_soi: f64,
    catalog: &BodyCatalog,
) -> Result<(f64, f64), CaptureError> {
    let f = |g: f64| parabolic_limit(g, moon, h_p, r_soi, catalog).unwrap_or(f64::NEG_INFINITY);
    let grid: Vec<f64> = (0..=90).map(|i| (i as f64).to_radians()).collect();
    let (i_best, _) = grid
        .iter()
        .map(|&g| f(g))
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let lo = grid[i_best.saturating_sub(1)];
    let hi = grid[(i_best + 1).min(grid.len() - 1)];
    let (g, v) = golden_max(f, lo, hi, 1e-7);
    if !v.is_finite() {
        return Err(CaptureError::NoCapture {
            gamma: g,
            lo: 0.0,
            hi: 50.0,
        });
    }
    Ok((g, v))
}

/// One cell of a `(γ, v_SOI)` capture map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureCell {
    pub gamma: f64,
    pub v_soi: f64,
    pub energy: f64,
    /// Post-flyby period, days. `None` when unbound.
    pub period_days: Option<f64>,
}

/// Evaluates every `(γ, v_SOI)` pair, row-major in `gammas`.
pub fn capture_grid(
    moon: &str,
    h_p: f64,
    r_soi: f64,
    gammas: &[f64],
    v_sois: &[f64],
    catalog: &BodyCatalog,
) -> Result<Vec<CaptureCell>, CaptureError> {
    let mut q = CaptureQuery::new(moon, 0.0, 0.0, h_p);
    q.r_soi = r_soi;
    let g = geometry(&q, catalog)?;
    let pairs: Vec<(f64, f64)> = gammas
        .iter()
        .flat_map(|&gm| v_sois.iter().map(move |&v| (gm, v)))
        .collect();
    pairs
        .par_iter()
        .map(|&(gamma, v_soi)| {
            let mut qq = q.clone();
            qq.gamma = gamma;
            qq.v_soi = v_soi;
            let o = outcome(&qq, &g)?;
            Ok(CaptureCell {
                gamma,
                v_soi,
                energy: o.energy,
                period_days: o.period.map(|t| t / crate::time::SECONDS_PER_DAY),
            })
        })
        .collect()
}
