//! Synchronous orbit tours: chains of resonant flybys of a single moon that
//! pump the orbit down to a target velocity in the minimum number of moon
//! revolutions, plus the tangent moon-to-moon transfer.
//!
//! The geometry is planar. At every encounter the spacecraft velocity is the
//! moon velocity `v_M` plus a relative velocity of constant modulus `ṽ` at an
//! angle `α` from the moon's direction of motion; each flyby increases `α` by
//! its deflection `β`.

use std::cmp::Ordering;
use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bodies::{BodyCatalog, CatalogError};
use crate::twobody::swingby_deflection;

#[derive(Debug, Error)]
pub enum SotError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("relative speed {v_rel} km/s cannot produce orbit speed {v} km/s at the moon")]
    Infeasible { v: f64, v_rel: f64 },
    #[error("transfer orbit does not reach the orbit of `{0}`")]
    NoIntersection(String),
    #[error("no tour reaches {v_target} km/s within {max_depth} resonances (lowest reachable speed {best_v_min} km/s at depth {depth})")]
    NoSolution {
        v_target: f64,
        max_depth: usize,
        best_v_min: f64,
        depth: usize,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Circular orbit of a moon about its primary.
#[derive(Debug, Clone, PartialEq)]
pub struct SotMoon {
    pub id: String,
    /// Orbit radius, km.
    pub a: f64,
    pub mu: f64,
    pub mu_parent: f64,
    /// Body radius, km.
    pub radius: f64,
}

impl SotMoon {
    pub fn from_catalog(catalog: &BodyCatalog, id: &str) -> Result<Self, SotError> {
        let body = catalog.resolve(id)?;
        let parent = catalog.parent_of(body)?;
        Ok(Self {
            id: body.id.clone(),
            a: body.elements()?.a,
            mu: body.mu,
            mu_parent: parent.mu,
            radius: body.radius,
        })
    }

    /// Circular speed, km/s.
    pub fn speed(&self) -> f64 {
        (self.mu_parent / self.a).sqrt()
    }

    /// Orbital period, s.
    pub fn period(&self) -> f64 {
        TAU * (self.a.powi(3) / self.mu_parent).sqrt()
    }

    /// Largest deflection at relative speed `v_rel` with pericentre altitude `h_p`.
    pub fn beta_max(&self, v_rel: f64, h_p: f64) -> f64 {
        swingby_deflection(v_rel, self.radius + h_p, self.mu)
    }

    /// Spacecraft speed for relative velocity `v_rel` at angle `alpha`.
    /// Angles beyond π are clamped to π.
    pub fn speed_at(&self, v_rel: f64, alpha: f64) -> f64 {
        let vm = self.speed();
        (vm * vm + v_rel * v_rel + 2.0 * vm * v_rel * alpha.min(PI).cos())
            .max(0.0)
            .sqrt()
    }

    /// Period ratio of the orbit through the moon with speed `v`; infinite
    /// when unbound.
    pub fn rho_of_speed(&self, v: f64) -> f64 {
        let vm = self.speed();
        let x = 2.0 - v * v / (vm * vm);
        if x <= 0.0 {
            f64::INFINITY
        } else {
            x.powf(-1.5)
        }
    }

    /// Speed at the moon on the orbit with period ratio `rho`.
    pub fn speed_of_rho(&self, rho: f64) -> f64 {
        self.speed() * (2.0 - rho.powf(-2.0 / 3.0)).max(0.0).sqrt()
    }

    /// Angle `α` at which relative speed `v_rel` yields period ratio `rho`.
    pub fn alpha_of_rho(&self, rho: f64, v_rel: f64) -> Result<f64, SotError> {
        self.alpha_of_speed(self.speed_of_rho(rho), v_rel)
    }

    pub fn alpha_of_speed(&self, v: f64, v_rel: f64) -> Result<f64, SotError> {
        let vm = self.speed();
        let c = (v * v - vm * vm - v_rel * v_rel) / (2.0 * vm * v_rel);
        if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&c) || v_rel <= 0.0 {
            return Err(SotError::Infeasible { v, v_rel });
        }
        Ok(c.clamp(-1.0, 1.0).acos())
    }
}

/// Semi-major axis of the `rho` resonant orbit, km.
pub fn resonance_sma(rho: f64, a_m: f64) -> f64 {
    rho.powf(2.0 / 3.0) * a_m
}

/// Deflection efficiency `β / β_max`, clamped to `[0, 1]`.
pub fn efficiency(beta: f64, beta_max: f64) -> f64 {
    (beta / beta_max).clamp(0.0, 1.0)
}

/// `n` moon revolutions per `m` spacecraft revolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resonance {
    pub n: u32,
    pub m: u32,
}

impl Resonance {
    pub fn ratio(&self) -> f64 {
        self.n as f64 / self.m as f64
    }
}

impl std::fmt::Display for Resonance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.n, self.m)
    }
}

/// Tour state just before a flyby.
#[derive(Debug, Clone, PartialEq)]
pub struct SotState {
    pub moon: String,
    /// Relative speed, km/s; conserved through the tour.
    pub v_rel: f64,
    /// Angle between the initial relative velocity and the moon velocity, rad.
    pub alpha0: f64,
    /// Current spacecraft speed at the moon, km/s.
    pub v_plus: f64,
    /// Period ratio of the current orbit; infinite for the unbound arrival orbit.
    pub rho_prev: f64,
    /// Sum of deflections so far, rad.
    pub accumulated_beta: f64,
}

impl SotState {
    pub fn new(moon: &SotMoon, v_rel: f64, alpha0: f64) -> Self {
        let v_plus = moon.speed_at(v_rel, alpha0);
        Self {
            moon: moon.id.clone(),
            v_rel,
            alpha0,
            v_plus,
            rho_prev: moon.rho_of_speed(v_plus),
            accumulated_beta: 0.0,
        }
    }

    /// State whose maximum-deflection flyby lands exactly on period ratio
    /// `rho_min`. Used to calibrate tours.
    pub fn with_first_rho_min(moon: &SotMoon, v_rel: f64, rho_min: f64, h_p_min: f64) -> Result<Self, SotError> {
        let alpha = moon.alpha_of_rho(rho_min, v_rel)?;
        let alpha0 = alpha - moon.beta_max(v_rel, h_p_min);
        if alpha0 < 0.0 {
            return Err(SotError::Invalid(format!(
                "period ratio {rho_min} needs a negative initial angle"
            )));
        }
        Ok(Self::new(moon, v_rel, alpha0))
    }

    pub fn alpha(&self) -> f64 {
        self.alpha0 + self.accumulated_beta
    }

    fn advance(&self, moon: &SotMoon, res: Resonance) -> Result<(Self, f64), SotError> {
        let alpha = moon.alpha_of_rho(res.ratio(), self.v_rel)?;
        let beta = alpha - self.alpha();
        Ok((
            Self {
                moon: self.moon.clone(),
                v_rel: self.v_rel,
                alpha0: self.alpha0,
                v_plus: moon.speed_at(self.v_rel, alpha),
                rho_prev: res.ratio(),
                accumulated_beta: self.accumulated_beta + beta,
            },
            beta,
        ))
    }
}

/// Range of outgoing speeds reachable from `state` with one flyby at
/// altitude no lower than `h_p_min`: `(v_min, v_max)`, km/s.
pub fn v_plus_bounds(state: &SotState, moon: &SotMoon, h_p_min: f64) -> (f64, f64) {
    let v_max = moon.speed_at(state.v_rel, state.alpha());
    if state.v_rel == 0.0 {
        return (v_max, v_max);
    }
    let beta_max = moon.beta_max(state.v_rel, h_p_min);
    (moon.speed_at(state.v_rel, state.alpha() + beta_max), v_max)
}

/// Range of period ratios reachable from `state`: `(rho_min, rho_max)`.
pub fn rho_bounds(state: &SotState, moon: &SotMoon, h_p_min: f64) -> Result<(f64, f64), SotError> {
    let vm = moon.speed();
    if (state.v_plus - vm).abs() > state.v_rel * (1.0 + 1e-12) + 1e-12 {
        return Err(SotError::Infeasible {
            v: state.v_plus,
            v_rel: state.v_rel,
        });
    }
    let (v_min, _) = v_plus_bounds(state, moon, h_p_min);
    Ok((moon.rho_of_speed(v_min), state.rho_prev))
}

/// Candidate resonances `n_min(m) : m` for `m = 1..=max_m` with
/// `rho_min < n/m < rho_max`, where `n_min(m)` is the smallest integer above
/// `m·rho_min`. Pairs with a common factor are skipped.
pub fn admissible_m(rho_min: f64, rho_max: f64, max_m: u32) -> Vec<Resonance> {
    if !rho_min.is_finite() {
        return Vec::new();
    }
    (1..=max_m)
        .filter_map(|m| {
            let n = (m as f64 * rho_min).floor() + 1.0;
            if n < 1.0 || n > u32::MAX as f64 {
                return None;
            }
            let res = Resonance { n: n as u32, m };
            (gcd(res.n, m) == 1 && res.ratio() < rho_max).then_some(res)
        })
        .collect()
}

/// Smallest `m` for which some integer `n` satisfies `rho_min < n/m <= rho_max`.
pub fn m_min(rho_min: f64, rho_max: f64, max_m: u32) -> Option<u32> {
    (1..=max_m).find(|&m| {
        let n = (m as f64 * rho_min).floor() + 1.0;
        n <= m as f64 * rho_max
    })
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SotConfig {
    /// Lowest flyby altitude, km.
    pub h_p_min: f64,
    pub max_depth: usize,
    pub max_m: u32,
}

impl Default for SotConfig {
    fn default() -> Self {
        Self {
            h_p_min: 200.0,
            max_depth: 8,
            max_m: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SotLeg {
    pub resonance: Resonance,
    /// Semi-major axis, km.
    pub a: f64,
    /// Deflection of the flyby entering this leg, rad.
    pub beta: f64,
    pub efficiency: f64,
    /// Leg duration, s.
    pub duration: f64,
    /// Spacecraft speed at the moon after the flyby, km/s.
    pub v_plus: f64,
    /// Pericentre and apocentre radii, km.
    pub r_p: f64,
    pub r_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SotSolution {
    pub moon: String,
    pub v_rel: f64,
    pub alpha0: f64,
    pub resonances: Vec<Resonance>,
    pub betas: Vec<f64>,
    pub efficiencies: Vec<f64>,
    pub total_moon_revs: u32,
    /// s
    pub total_time: f64,
    /// Deflection of the last flyby that reaches the target speed, rad.
    pub final_beta: f64,
    pub legs: Vec<SotLeg>,
}

impl SotSolution {
    /// Pericentre/apocentre pairs of every resonant orbit, km.
    pub fn tisserand_points(&self) -> Vec<(f64, f64)> {
        self.legs.iter().map(|l| (l.r_p, l.r_a)).collect()
    }
}

/// Ordering of equal-cost tours: larger spacecraft revolution counts first,
/// then smaller moon revolution counts.
fn tie_break(a: &[Resonance], b: &[Resonance]) -> Ordering {
    let ms = |s: &[Resonance]| s.iter().map(|r| -(r.m as i64)).collect::<Vec<_>>();
    let ns = |s: &[Resonance]| s.iter().map(|r| r.n).collect::<Vec<_>>();
    ms(a).cmp(&ms(b)).then_with(|| ns(a).cmp(&ns(b)))
}

#[derive(Debug, Clone)]
struct Best {
    sum: u32,
    seq: Vec<Resonance>,
}

impl Best {
    fn better(&self, other: &Best) -> bool {
        self.sum < other.sum
            || (self.sum == other.sum && tie_break(&self.seq, &other.seq) == Ordering::Less)
    }
}

#[derive(Debug, Clone, Copy)]
struct Deepest {
    v_min: f64,
    depth: usize,
}

struct Search<'a> {
    moon: &'a SotMoon,
    cfg: &'a SotConfig,
    v_target: f64,
    prune: bool,
    best: Option<Best>,
    deepest: Deepest,
}

impl Search<'_> {
    fn visit(&mut self, state: &SotState, seq: &mut Vec<Resonance>, sum: u32) {
        let (v_min, _) = v_plus_bounds(state, self.moon, self.cfg.h_p_min);
        if v_min < self.deepest.v_min {
            self.deepest = Deepest {
                v_min,
                depth: seq.len(),
            };
        }
        if v_min <= self.v_target {
            let cand = Best {
                sum,
                seq: seq.clone(),
            };
            if self.best.as_ref().is_none_or(|b| cand.better(b)) {
                self.best = Some(cand);
            }
            return;
        }
        if seq.len() >= self.cfg.max_depth {
            return;
        }
        if self.prune {
            if let Some(b) = &self.best {
                if sum + 1 > b.sum {
                    return;
                }
            }
        }
        let Ok((rho_min, rho_max)) = rho_bounds(state, self.moon, self.cfg.h_p_min) else {
            return;
        };
        for res in admissible_m(rho_min, rho_max, self.cfg.max_m) {
            if self.prune {
                if let Some(b) = &self.best {
                    if sum + res.n > b.sum {
                        continue;
                    }
                }
            }
            let Ok((next, _)) = state.advance(self.moon, res) else {
                continue;
            };
            seq.push(res);
            self.visit(&next, seq, sum + res.n);
            seq.pop();
        }
    }
}

fn run_search(
    initial: &SotState,
    moon: &SotMoon,
    v_target: f64,
    cfg: &SotConfig,
    prune: bool,
) -> Result<SotSolution, SotError> {
    if initial.moon != moon.id {
        return Err(SotError::Invalid(format!(
            "state belongs to `{}`, not `{}`",
            initial.moon, moon.id
        )));
    }
    if !(initial.v_rel > 0.0) || !v_target.is_finite() {
        return Err(SotError::Invalid("relative speed and target must be positive".into()));
    }
    let fresh = || Search {
        moon,
        cfg,
        v_target,
        prune,
        best: None,
        deepest: Deepest {
            v_min: f64::INFINITY,
            depth: 0,
        },
    };
    let mut root = fresh();
    let (v_min, _) = v_plus_bounds(initial, moon, cfg.h_p_min);
    let (best, deepest) = if v_min <= v_target || cfg.max_depth == 0 {
        root.visit(initial, &mut Vec::new(), 0);
        (root.best, root.deepest)
    } else {
        let branches = rho_bounds(initial, moon, cfg.h_p_min)
            .map(|(lo, hi)| admissible_m(lo, hi, cfg.max_m))
            .unwrap_or_default();
        let results: Vec<(Option<Best>, Deepest)> = branches
            .par_iter()
            .map(|&res| {
                let mut s = fresh();
                s.deepest = Deepest { v_min, depth: 0 };
                if let Ok((next, _)) = initial.advance(moon, res) {
                    let mut seq = vec![res];
                    s.visit(&next, &mut seq, res.n);
                }
                (s.best, s.deepest)
            })
            .collect();
        let mut best: Option<Best> = None;
        let mut deepest = Deepest { v_min, depth: 0 };
        for (b, d) in results {
            if let Some(b) = b {
                if best.as_ref().is_none_or(|cur| b.better(cur)) {
                    best = Some(b);
                }
            }
            if d.v_min < deepest.v_min {
                deepest = d;
            }
        }
        (best, deepest)
    };
    match best {
        Some(b) => build_solution(initial, moon, v_target, cfg, &b.seq),
        None => Err(SotError::NoSolution {
            v_target,
            max_depth: cfg.max_depth,
            best_v_min: deepest.v_min,
            depth: deepest.depth,
        }),
    }
}

/// Minimum-time tour from `initial` down to spacecraft speed `v_target`.
///
/// Every branch uses the smallest admissible `n` for its `m`. Among tours
/// with equal total moon revolutions the one with larger spacecraft
/// revolution counts (stronger deflections) earlier in the tour is returned.
pub fn sot_search(
    initial: &SotState,
    moon: &SotMoon,
    v_target: f64,
    cfg: &SotConfig,
) -> Result<SotSolution, SotError> {
    run_search(initial, moon, v_target, cfg, true)
}

/// Same result as [`sot_search`] without pruning. Reference implementation.
pub fn sot_enumerate(
    initial: &SotState,
    moon: &SotMoon,
    v_target: f64,
    cfg: &SotConfig,
) -> Result<SotSolution, SotError> {
    run_search(initial, moon, v_target, cfg, false)
}

/// Evaluates the tour `seq` from `initial`.
pub fn build_solution(
    initial: &SotState,
    moon: &SotMoon,
    v_target: f64,
    cfg: &SotConfig,
    seq: &[Resonance],
) -> Result<SotSolution, SotError> {
    let beta_max = moon.beta_max(initial.v_rel, cfg.h_p_min);
    let t_m = moon.period();
    let mut state = initial.clone();
    let mut legs = Vec::with_capacity(seq.len());
    for &res in seq {
        let (next, beta) = state.advance(moon, res)?;
        let (r_p, r_a) = apsides_at_moon(moon, next.v_rel, next.alpha());
        legs.push(SotLeg {
            resonance: res,
            a: resonance_sma(res.ratio(), moon.a),
            beta,
            efficiency: efficiency(beta, beta_max),
            duration: res.n as f64 * t_m,
            v_plus: next.v_plus,
            r_p,
            r_a,
        });
        state = next;
    }
    let final_beta = if v_target >= state.v_plus {
        0.0
    } else {
        (moon.alpha_of_speed(v_target, state.v_rel)? - state.alpha()).max(0.0)
    };
    let total: u32 = seq.iter().map(|r| r.n).sum();
    Ok(SotSolution {
        moon: moon.id.clone(),
        v_rel: initial.v_rel,
        alpha0: initial.alpha0,
        resonances: seq.to_vec(),
        betas: legs.iter().map(|l| l.beta).collect(),
        efficiencies: legs.iter().map(|l| l.efficiency).collect(),
        total_moon_revs: total,
        total_time: total as f64 * t_m,
        final_beta,
        legs,
    })
}

/// Pericentre and apocentre of the orbit leaving the moon with relative
/// velocity `v_rel` at angle `alpha`.
pub fn apsides_at_moon(moon: &SotMoon, v_rel: f64, alpha: f64) -> (f64, f64) {
    let vm = moon.speed();
    let a = alpha.min(PI);
    let vt = vm + v_rel * a.cos();
    let vr = v_rel * a.sin();
    crate::twobody::apsides(
        &nalgebra::Vector3::new(moon.a, 0.0, 0.0),
        &nalgebra::Vector3::new(vr, vt, 0.0),
        moon.mu_parent,
    )
}

/// Coefficients `(k1, k2)` of `ṽ_B² = k1 − k2·cos α` for a ballistic
/// transfer leaving moon A with relative speed `v_rel_a` at angle `α`.
pub fn moon_transfer_coefficients(v_rel_a: f64, moon_a: &SotMoon, moon_b: &SotMoon) -> (f64, f64) {
    let mu = moon_a.mu_parent;
    let (ra, rb) = (moon_a.a, moon_b.a);
    let vma = moon_a.speed();
    let x = (ra / rb).powf(1.5);
    let k1 = v_rel_a * v_rel_a + 3.0 * mu / rb - mu / ra - 2.0 * vma * vma * x;
    let k2 = 2.0 * vma * v_rel_a * (x - 1.0);
    (k1, k2)
}

/// Relative speed at moon B after a ballistic transfer from moon A, km/s.
pub fn moon_transfer_vrel(v_rel_a: f64, alpha: f64, moon_a: &SotMoon, moon_b: &SotMoon) -> Result<f64, SotError> {
    if moon_a.mu_parent != moon_b.mu_parent {
        return Err(SotError::Invalid("moons orbit different primaries".into()));
    }
    let mu = moon_a.mu_parent;
    let (ra, rb) = (moon_a.a, moon_b.a);
    let vma = moon_a.speed();
    let v_theta_a = vma + v_rel_a * alpha.cos();
    let v2_a = vma * vma + v_rel_a * v_rel_a + 2.0 * vma * v_rel_a * alpha.cos();
    let v2_b = v2_a + 2.0 * mu * (1.0 / rb - 1.0 / ra);
    let v_theta_b = v_theta_a * ra / rb;
    let radial2 = v2_b - v_theta_b * v_theta_b;
    if v2_b < 0.0 || radial2 < -1e-9 * v2_b.max(1.0) {
        return Err(SotError::NoIntersection(moon_b.id.clone()));
    }
    let (k1, k2) = moon_transfer_coefficients(v_rel_a, moon_a, moon_b);
    Ok((k1 - k2 * alpha.cos()).max(0.0).sqrt())
}
