//! Multi-impulse linked-conic trajectories with one deep-space manoeuvre
//! (DSM) per leg, and their local optimisation.
//!
//! Each leg splits into two Lambert subarcs joined at the DSM. Flybys are
//! unpowered: the incoming and outgoing relative speeds must match and the
//! turn angle must equal the deflection produced at the stored pericentre.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bodies::{Body, BodyCatalog, CatalogError};
use crate::nlp::{self, NlpError, NlpOptions, NlpProblem, NlpReport, NlpSpec};
use crate::phasing::PhasingCandidate;
use crate::time::SECONDS_PER_DAY;
use crate::twobody::{
    lambert, lambert_max_revolutions, periapsis_for_deflection, swingby_deflection, Branch,
    LambertArc, TwoBodyError,
};
use crate::AU_KM;

/// Half-width of the smoothing applied to each DSM magnitude inside the
/// optimiser, km/s.
const DV_SMOOTHING: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ImpulsiveError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("leg {leg} is infeasible: {source}")]
    LegInfeasible {
        leg: usize,
        #[source]
        source: TwoBodyError,
    },
    #[error("leg {leg} violates t_P < t_DSM < t_P(next)")]
    Ordering { leg: usize },
    #[error("decision vector has {got} entries, expected {expected}")]
    Sizing { expected: usize, got: usize },
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    Nlp(#[from] NlpError),
}

/// Optimisation variables for an `N`-body sequence (`6N − 6` scalars).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVector {
    /// Encounter epochs, MJD2000 days. Length `N`.
    pub t_p: Vec<f64>,
    /// DSM epochs, MJD2000 days. Length `N − 1`.
    pub t_dsm: Vec<f64>,
    /// DSM positions, km. Length `N − 1`.
    pub r_dsm: Vec<Vector3<f64>>,
    /// Flyby pericentre radii, km. Length `N − 2`.
    pub r_p: Vec<f64>,
}

impl DecisionVector {
    pub fn len_for(n_bodies: usize) -> usize {
        6 * n_bodies - 6
    }

    pub fn n_bodies(&self) -> usize {
        self.t_p.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::len_for(self.n_bodies()));
        out.extend(&self.t_p);
        out.extend(&self.t_dsm);
        for r in &self.r_dsm {
            out.extend(r.iter());
        }
        out.extend(&self.r_p);
        out
    }

    pub fn from_slice(n_bodies: usize, x: &[f64]) -> Result<Self, ImpulsiveError> {
        if n_bodies < 2 {
            return Err(ImpulsiveError::Invalid("a sequence needs at least two bodies".into()));
        }
        let expected = Self::len_for(n_bodies);
        if x.len() != expected {
            return Err(ImpulsiveError::Sizing {
                expected,
                got: x.len(),
            });
        }
        let legs = n_bodies - 1;
        let (t_p, rest) = x.split_at(n_bodies);
        let (t_dsm, rest) = rest.split_at(legs);
        let (r, r_p) = rest.split_at(3 * legs);
        Ok(Self {
            t_p: t_p.to_vec(),
            t_dsm: t_dsm.to_vec(),
            r_dsm: r.chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect(),
            r_p: r_p.to_vec(),
        })
    }
}

/// Revolution count and branch of one Lambert subarc.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubarcChoice {
    pub nrev: u32,
    pub branch: Branch,
}

impl Default for SubarcChoice {
    fn default() -> Self {
        Self {
            nrev: 0,
            branch: Branch::Right,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegChoice {
    pub first: SubarcChoice,
    pub second: SubarcChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bs3Problem {
    pub sequence: Vec<String>,
    /// Departure relative speed ceiling, km/s.
    pub v_dep_max: Option<f64>,
    /// Arrival relative speed ceiling, km/s.
    pub v_arr_max: Option<f64>,
    /// Encounter epochs may move this far from the first guess, days.
    pub time_window: f64,
    /// Shortest subarc, days.
    pub min_subarc: f64,
    /// Largest pericentre radius, in body radii.
    pub rp_max_radii: f64,
    /// Per-leg Lambert selections. Missing legs use zero revolutions.
    pub choices: Vec<LegChoice>,
    pub nlp: NlpOptions,
}

impl Default for Bs3Problem {
    fn default() -> Self {
        Self {
            sequence: Vec::new(),
            v_dep_max: Some(3.16f64.sqrt()),
            v_arr_max: None,
            time_window: 60.0,
            min_subarc: 1.0,
            rp_max_radii: 100.0,
            choices: Vec::new(),
            nlp: NlpOptions {
                feasibility_tol: 1e-9,
                stationarity_tol: 1e-4,
                fd_step: 1e-7,
                ..NlpOptions::default()
            },
        }
    }
}

impl Bs3Problem {
    pub fn new(sequence: Vec<String>) -> Self {
        Self {
            sequence,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ImpulsiveError> {
        if self.sequence.len() < 2 {
            return Err(ImpulsiveError::Invalid("a sequence needs at least two bodies".into()));
        }
        for (name, v) in [("v_dep_max", self.v_dep_max), ("v_arr_max", self.v_arr_max)] {
            if v.is_some_and(|v| !(v > 0.0)) {
                return Err(ImpulsiveError::Invalid(format!("{name} must be positive")));
            }
        }
        if !(self.time_window >= 0.0 && self.min_subarc > 0.0 && self.rp_max_radii > 1.0) {
            return Err(ImpulsiveError::Invalid(
                "need time_window >= 0, min_subarc > 0 and rp_max_radii > 1".into(),
            ));
        }
        Ok(())
    }

    fn choice(&self, leg: usize) -> LegChoice {
        self.choices.get(leg).copied().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulsiveLeg {
    pub from: String,
    pub to: String,
    pub t_depart: f64,
    pub t_dsm: f64,
    pub t_arrive: f64,
    pub first: LambertArc,
    pub second: LambertArc,
    /// DSM velocity change, km/s.
    pub dv: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlybyReport {
    pub body: String,
    /// MJD2000 days
    pub t: f64,
    /// Relative velocities before and after, km/s.
    pub v_in_rel: Vector3<f64>,
    pub v_out_rel: Vector3<f64>,
    /// Heliocentric speed on arrival, km/s.
    pub v_in_abs: f64,
    pub v_out_abs: f64,
    /// Angle between the relative velocities, rad.
    pub turn: f64,
    /// Deflection produced at `r_p`, rad.
    pub beta: f64,
    /// km
    pub r_p: f64,
    /// km
    pub altitude: f64,
    /// `(|ṽ⁺| − |ṽ⁻|) / |ṽ⁻|`
    pub modulus_residual: f64,
    /// `turn − beta`, rad
    pub cone_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulsiveTrajectory {
    pub legs: Vec<ImpulsiveLeg>,
    pub flybys: Vec<FlybyReport>,
    /// Relative velocity leaving the first body, km/s.
    pub v_dep: Vector3<f64>,
    /// Relative velocity reaching the last body, km/s.
    pub v_arr: Vector3<f64>,
}

impl ImpulsiveTrajectory {
    /// Sum of DSM magnitudes, km/s.
    pub fn total_dv(&self) -> f64 {
        self.legs.iter().map(|l| l.dv.norm()).sum()
    }

    /// `(modulus, cone)` residual of every flyby.
    pub fn flyby_residuals(&self) -> Vec<(f64, f64)> {
        self.flybys
            .iter()
            .map(|f| (f.modulus_residual, f.cone_residual))
            .collect()
    }
}

struct Context<'a> {
    bodies: Vec<&'a Body>,
    mu: f64,
}

fn context<'a>(problem: &Bs3Problem, catalog: &'a BodyCatalog) -> Result<Context<'a>, ImpulsiveError> {
    problem.validate()?;
    let bodies = problem
        .sequence
        .iter()
        .map(|s| catalog.resolve(s))
        .collect::<Result<Vec<_>, _>>()?;
    let parent = &bodies[0].parent;
    if let Some(b) = bodies.iter().find(|b| &b.parent != parent) {
        return Err(ImpulsiveError::Invalid(format!(
            "`{}` does not orbit `{parent}` like the rest of the sequence",
            b.id
        )));
    }
    let mu = catalog.parent_of(bodies[0])?.mu;
    Ok(Context { bodies, mu })
}

fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Reconstructs the trajectory described by `x`.
pub fn build_trajectory(
    x: &DecisionVector,
    problem: &Bs3Problem,
    catalog: &BodyCatalog,
) -> Result<ImpulsiveTrajectory, ImpulsiveError> {
    let ctx = context(problem, catalog)?;
    build_with(&ctx, x, problem, catalog)
}

fn build_with(
    ctx: &Context,
    x: &DecisionVector,
    problem: &Bs3Problem,
    catalog: &BodyCatalog,
) -> Result<ImpulsiveTrajectory, ImpulsiveError> {
    let n = ctx.bodies.len();
    let sizes_ok = x.t_p.len() == n
        && x.t_dsm.len() == n - 1
        && x.r_dsm.len() == n - 1
        && x.r_p.len() == n - 2;
    if !sizes_ok {
        return Err(ImpulsiveError::Sizing {
            expected: DecisionVector::len_for(n),
            got: x.t_p.len() + x.t_dsm.len() + 3 * x.r_dsm.len() + x.r_p.len(),
        });
    }
    let states = ctx
        .bodies
        .iter()
        .zip(&x.t_p)
        .map(|(b, &t)| catalog.state_3d(b, t))
        .collect::<Result<Vec<_>, _>>()?;
    let mut legs = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        if !(x.t_p[i] < x.t_dsm[i] && x.t_dsm[i] < x.t_p[i + 1]) {
            return Err(ImpulsiveError::Ordering { leg: i });
        }
        let c = problem.choice(i);
        let infeasible = |source| ImpulsiveError::LegInfeasible { leg: i, source };
        let tof1 = (x.t_dsm[i] - x.t_p[i]) * SECONDS_PER_DAY;
        let tof2 = (x.t_p[i + 1] - x.t_dsm[i]) * SECONDS_PER_DAY;
        let first = lambert(&states[i].r, &x.r_dsm[i], tof1, ctx.mu, c.first.nrev, c.first.branch)
            .map_err(infeasible)?;
        let second = lambert(&x.r_dsm[i], &states[i + 1].r, tof2, ctx.mu, c.second.nrev, c.second.branch)
            .map_err(infeasible)?;
        legs.push(ImpulsiveLeg {
            from: ctx.bodies[i].id.clone(),
            to: ctx.bodies[i + 1].id.clone(),
            t_depart: x.t_p[i],
            t_dsm: x.t_dsm[i],
            t_arrive: x.t_p[i + 1],
            dv: second.v1 - first.v2,
            first,
            second,
        });
    }
    let flybys = (1..n - 1)
        .map(|j| {
            let body = ctx.bodies[j];
            let v_in_abs = legs[j - 1].second.v2;
            let v_out_abs = legs[j].first.v1;
            let v_in_rel = v_in_abs - states[j].v;
            let v_out_rel = v_out_abs - states[j].v;
            let r_p = x.r_p[j - 1];
            let speed = v_in_rel.norm();
            let beta = swingby_deflection(speed, r_p, body.mu);
            let turn = angle_between(&v_in_rel, &v_out_rel);
            FlybyReport {
                body: body.id.clone(),
                t: x.t_p[j],
                v_in_rel,
                v_out_rel,
                v_in_abs: v_in_abs.norm(),
                v_out_abs: v_out_abs.norm(),
                turn,
                beta,
                r_p,
                altitude: r_p - body.radius,
                modulus_residual: (v_out_rel.norm() - speed) / speed,
                cone_residual: turn - beta,
            }
        })
        .collect();
    Ok(ImpulsiveTrajectory {
        v_dep: legs[0].first.v1 - states[0].v,
        v_arr: legs[n - 2].second.v2 - states[n - 1].v,
        legs,
        flybys,
    })
}

/// Sum of DSM magnitudes, km/s.
pub fn objective(x: &DecisionVector, problem: &Bs3Problem, catalog: &BodyCatalog) -> Result<f64, ImpulsiveError> {
    Ok(build_trajectory(x, problem, catalog)?.total_dv())
}

/// Completed revolutions of the conic through `(r, v)` in `dt` seconds.
fn revolutions_in(r: &Vector3<f64>, v: &Vector3<f64>, dt: f64, mu: f64) -> u32 {
    let energy = 0.5 * v.norm_squared() - mu / r.norm();
    if energy >= 0.0 {
        return 0;
    }
    let a = -mu / (2.0 * energy);
    let period = 2.0 * PI * (a * a * a / mu).sqrt();
    (dt / period).floor() as u32
}

fn propagate(r: &Vector3<f64>, v: &Vector3<f64>, dt: f64, mu: f64, leg: usize) -> Result<(Vector3<f64>, Vector3<f64>), ImpulsiveError> {
    crate::twobody::propagate_rv(r, v, dt, mu).map_err(|source| ImpulsiveError::LegInfeasible { leg, source })
}

fn branches(nrev: u32) -> &'static [Branch] {
    if nrev == 0 {
        &[Branch::Right]
    } else {
        &[Branch::Left, Branch::Right]
    }
}

/// Lambert arc closest to `target` (matched at the start when `at_start`).
fn closest_arc(
    r1: &Vector3<f64>,
    r2: &Vector3<f64>,
    tof: f64,
    mu: f64,
    nrevs: impl IntoIterator<Item = u32>,
    target: &Vector3<f64>,
    at_start: bool,
) -> Option<LambertArc> {
    let max = lambert_max_revolutions(r1, r2, tof, mu).ok()?;
    nrevs
        .into_iter()
        .filter(|&m| m <= max)
        .flat_map(|m| branches(m).iter().filter_map(move |&b| lambert(r1, r2, tof, mu, m, b).ok()))
        .min_by(|a, b| {
            let da = if at_start { a.v1 - target } else { a.v2 - target };
            let db = if at_start { b.v1 - target } else { b.v2 - target };
            da.norm().total_cmp(&db.norm())
        })
}

/// A feasible starting point built from a phasing candidate, and the
/// Lambert selections it implies.
///
/// Each leg leaves along the direction of the candidate's ballistic leg: the
/// departure speed is capped at `v_dep_max`, and each flyby turns the
/// incoming relative velocity toward that direction by the deflection at its
/// pericentre. The coast is propagated to mid-leg to place the DSM.
pub fn initial_guess(
    fgs: &PhasingCandidate,
    problem: &Bs3Problem,
    catalog: &BodyCatalog,
) -> Result<(DecisionVector, Vec<LegChoice>), ImpulsiveError> {
    let ctx = context(problem, catalog)?;
    let n = ctx.bodies.len();
    if fgs.sequence.len() != n || fgs.revolutions.len() != n - 1 {
        return Err(ImpulsiveError::Invalid("candidate does not match the problem sequence".into()));
    }
    let t_p = fgs.encounter_epochs();
    let states = ctx
        .bodies
        .iter()
        .zip(&t_p)
        .map(|(b, &t)| catalog.state_3d(b, t))
        .collect::<Result<Vec<_>, _>>()?;
    let mut t_dsm = Vec::with_capacity(n - 1);
    let mut r_dsm = Vec::with_capacity(n - 1);
    let mut r_p = Vec::with_capacity(n.saturating_sub(2));
    let mut choices = Vec::with_capacity(n - 1);
    let mut v_in_rel: Option<Vector3<f64>> = None;
    for i in 0..n - 1 {
        let (r0, vb) = (states[i].r, states[i].v);
        let r1 = states[i + 1].r;
        let tof = (t_p[i + 1] - t_p[i]) * SECONDS_PER_DAY;
        let m = fgs.revolutions[i];
        let target = v_in_rel.map_or(vb, |v| vb + v);
        let reference = closest_arc(&r0, &r1, tof, ctx.mu, [m], &target, true)
            .or_else(|| closest_arc(&r0, &r1, tof, ctx.mu, 0..=m, &target, true))
            .ok_or(ImpulsiveError::LegInfeasible {
                leg: i,
                source: TwoBodyError::NoSolution {
                    nrev: m,
                    tof,
                    max_revs: lambert_max_revolutions(&r0, &r1, tof, ctx.mu).unwrap_or(0),
                },
            })?;
        let desired = reference.v1 - vb;
        let v_out = match v_in_rel {
            None => {
                let cap = problem.v_dep_max.unwrap_or(f64::INFINITY);
                desired * (cap / desired.norm()).min(1.0)
            }
            Some(v_in) => {
                let body = ctx.bodies[i];
                let speed = v_in.norm();
                let phi = angle_between(&v_in, &desired);
                let rp_max = problem.rp_max_radii * body.radius;
                let rp = periapsis_for_deflection(speed, phi, body.mu)
                    .max(body.min_periapsis() + 500.0)
                    .min(rp_max);
                r_p.push(rp);
                let beta = swingby_deflection(speed, rp, body.mu);
                let e1 = v_in / speed;
                let mut e2 = desired - e1 * desired.dot(&e1);
                if e2.norm() < 1e-12 * desired.norm() {
                    e2 = e1.cross(&Vector3::z());
                }
                let e2 = e2.normalize();
                (e1 * beta.cos() + e2 * beta.sin()) * speed
            }
        };
        let v0 = vb + v_out;
        let half = 0.5 * tof;
        let (rd, vd) = propagate(&r0, &v0, half, ctx.mu, i)?;
        let n1 = revolutions_in(&r0, &v0, half, ctx.mu);
        let first = closest_arc(&r0, &rd, half, ctx.mu, [n1], &v0, true).ok_or_else(|| {
            ImpulsiveError::Invalid(format!("leg {i}: coast arc has no matching Lambert solution"))
        })?;
        let n2 = revolutions_in(&rd, &vd, half, ctx.mu);
        let second = closest_arc(&rd, &r1, half, ctx.mu, n2.saturating_sub(1)..=n2 + 1, &vd, true)
            .ok_or(ImpulsiveError::LegInfeasible {
                leg: i,
                source: TwoBodyError::NoSolution {
                    nrev: n2,
                    tof: half,
                    max_revs: 0,
                },
            })?;
        choices.push(LegChoice {
            first: SubarcChoice {
                nrev: first.nrev,
                branch: first.branch,
            },
            second: SubarcChoice {
                nrev: second.nrev,
                branch: second.branch,
            },
        });
        t_dsm.push(0.5 * (t_p[i] + t_p[i + 1]));
        r_dsm.push(rd);
        v_in_rel = Some(second.v2 - states[i + 1].v);
    }
    Ok((
        DecisionVector {
            t_p,
            t_dsm,
            r_dsm,
            r_p,
        },
        choices,
    ))
}

/// Result of a BS3 optimisation.
#[derive(Debug, Clone)]
pub struct Bs3Solution {
    /// The problem with its frozen Lambert selections.
    pub problem: Bs3Problem,
    pub x0: DecisionVector,
    pub x: DecisionVector,
    pub f0: f64,
    pub f: f64,
    pub trajectory: ImpulsiveTrajectory,
    pub report: NlpReport,
}

/// The optimiser sees epochs as offsets from `t_ref` so that relative
/// difference steps stay small.
struct Bs3Nlp<'a> {
    ctx: Context<'a>,
    problem: &'a Bs3Problem,
    catalog: &'a BodyCatalog,
    n: usize,
    t_ref: f64,
}

impl Bs3Nlp<'_> {
    fn n_epochs(&self) -> usize {
        2 * self.n - 1
    }

    fn to_nlp(&self, x: &DecisionVector) -> Vec<f64> {
        let mut v = x.to_vec();
        v[..self.n_epochs()].iter_mut().for_each(|t| *t -= self.t_ref);
        v
    }

    fn decode(&self, v: &[f64]) -> Result<DecisionVector, ImpulsiveError> {
        let mut v = v.to_vec();
        if v.len() >= self.n_epochs() {
            v[..self.n_epochs()].iter_mut().for_each(|t| *t += self.t_ref);
        }
        DecisionVector::from_slice(self.n, &v)
    }

    fn n_time_ineq(&self) -> usize {
        2 * (self.n - 1)
    }

    fn n_speed_ineq(&self) -> usize {
        usize::from(self.problem.v_dep_max.is_some()) + usize::from(self.problem.v_arr_max.is_some())
    }
}

impl NlpProblem for Bs3Nlp<'_> {
    fn dim(&self) -> usize {
        DecisionVector::len_for(self.n)
    }

    fn n_eq(&self) -> usize {
        2 * (self.n - 2)
    }

    fn n_ineq(&self) -> usize {
        self.n_speed_ineq() + self.n_time_ineq()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let mut eq = vec![0.0; self.n_eq()];
        let mut ineq = vec![0.0; self.n_ineq()];
        self.evaluate(x, &mut eq, &mut ineq)
    }

    fn evaluate(&self, x: &[f64], eq: &mut [f64], ineq: &mut [f64]) -> f64 {
        let Ok(dv) = self.decode(x) else {
            return f64::NAN;
        };
        let mut k = 0;
        for i in 0..self.n - 1 {
            ineq[self.n_speed_ineq() + k] = dv.t_dsm[i] - dv.t_p[i] - self.problem.min_subarc;
            ineq[self.n_speed_ineq() + k + 1] = dv.t_p[i + 1] - dv.t_dsm[i] - self.problem.min_subarc;
            k += 2;
        }
        let traj = match build_with(&self.ctx, &dv, self.problem, self.catalog) {
            Ok(t) => t,
            Err(_) => return f64::NAN,
        };
        for (j, f) in traj.flybys.iter().enumerate() {
            eq[2 * j] = f.modulus_residual;
            eq[2 * j + 1] = f.cone_residual;
        }
        let mut s = 0;
        if let Some(v) = self.problem.v_dep_max {
            ineq[s] = v - traj.v_dep.norm();
            s += 1;
        }
        if let Some(v) = self.problem.v_arr_max {
            ineq[s] = v - traj.v_arr.norm();
        }
        traj.legs
            .iter()
            .map(|l| (l.dv.norm_squared() + DV_SMOOTHING * DV_SMOOTHING).sqrt() - DV_SMOOTHING)
            .sum()
    }
}

fn nlp_spec(ctx: &Context, x0: &DecisionVector, problem: &Bs3Problem, t_ref: f64) -> Result<NlpSpec, ImpulsiveError> {
    let n = ctx.bodies.len();
    let w = problem.time_window;
    let x0 = &DecisionVector {
        t_p: x0.t_p.iter().map(|t| t - t_ref).collect(),
        ..x0.clone()
    };
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut scale = Vec::new();
    for &t in &x0.t_p {
        lower.push(t - w);
        upper.push(t + w);
        scale.push(365.25);
    }
    for i in 0..n - 1 {
        lower.push(x0.t_p[i] - w);
        upper.push(x0.t_p[i + 1] + w);
        scale.push(365.25);
    }
    let mut r_box = x0.r_dsm.iter().fold(0.0_f64, |a, r| a.max(r.amax()));
    for b in &ctx.bodies {
        let el = b.elements()?;
        r_box = r_box.max(el.a * (1.0 + el.e));
    }
    r_box *= 2.0;
    for _ in 0..3 * (n - 1) {
        lower.push(-r_box);
        upper.push(r_box);
        scale.push(AU_KM);
    }
    for (j, &rp) in x0.r_p.iter().enumerate() {
        let body = ctx.bodies[j + 1];
        lower.push(body.min_periapsis());
        upper.push((problem.rp_max_radii * body.radius).max(rp));
        scale.push(body.radius);
    }
    Ok(NlpSpec {
        lower,
        upper,
        scale,
        options: problem.nlp.clone(),
    })
}

/// Locally optimises the trajectory starting from `x0`, using the Lambert
/// selections frozen in `problem`. The returned point is never worse than
/// `x0` when `x0` is feasible.
pub fn optimize_from(
    x0: &DecisionVector,
    problem: &Bs3Problem,
    catalog: &BodyCatalog,
) -> Result<Bs3Solution, ImpulsiveError> {
    let ctx = context(problem, catalog)?;
    let n = ctx.bodies.len();
    let traj0 = build_with(&ctx, x0, problem, catalog)?;
    let f0 = traj0.total_dv();
    let t_ref = x0.t_p[0];
    let spec = nlp_spec(&ctx, x0, problem, t_ref)?;
    let nlp_problem = Bs3Nlp {
        ctx: context(problem, catalog)?,
        problem,
        catalog,
        n,
        t_ref,
    };
    let sol = nlp::minimize(&nlp_problem, &spec, &nlp_problem.to_nlp(x0))?;
    let x = nlp_problem.decode(&sol.x)?;
    let traj = build_with(&ctx, &x, problem, catalog)?;
    let f = traj.total_dv();
    let mut report = sol.report;

    let tol = problem.nlp.feasibility_tol.max(1e-6);
    let viol0 = max_violation(&traj0, x0, problem);
    let keep_start = viol0 <= tol && (report.feasibility > tol || f > f0);
    if keep_start {
        report.converged = false;
        report.message = format!("{}; starting point retained", report.message);
        return Ok(Bs3Solution {
            problem: problem.clone(),
            x0: x0.clone(),
            x: x0.clone(),
            f0,
            f: f0,
            trajectory: traj0,
            report,
        });
    }
    Ok(Bs3Solution {
        problem: problem.clone(),
        x0: x0.clone(),
        x,
        f0,
        f,
        trajectory: traj,
        report,
    })
}

fn max_violation(traj: &ImpulsiveTrajectory, x: &DecisionVector, problem: &Bs3Problem) -> f64 {
    let mut v = traj
        .flybys
        .iter()
        .fold(0.0_f64, |a, f| a.max(f.modulus_residual.abs()).max(f.cone_residual.abs()));
    if let Some(cap) = problem.v_dep_max {
        v = v.max(traj.v_dep.norm() - cap);
    }
    if let Some(cap) = problem.v_arr_max {
        v = v.max(traj.v_arr.norm() - cap);
    }
    for i in 0..x.t_dsm.len() {
        v = v
            .max(x.t_p[i] + problem.min_subarc - x.t_dsm[i])
            .max(x.t_dsm[i] + problem.min_subarc - x.t_p[i + 1]);
    }
    v
}

/// Builds a feasible start from `fgs` and optimises it.
pub fn optimize(
    fgs: &PhasingCandidate,
    problem: &Bs3Problem,
    catalog: &BodyCatalog,
) -> Result<Bs3Solution, ImpulsiveError> {
    let (x0, choices) = initial_guess(fgs, problem, catalog)?;
    let mut p = problem.clone();
    p.choices = choices;
    optimize_from(&x0, &p, catalog)
}

/// Optimises every candidate in parallel and returns the best: lowest total
/// DSM magnitude among converged runs, ties broken by earlier launch.
pub fn optimize_candidates(
    candidates: &[PhasingCandidate],
    problem: &Bs3Problem,
    catalog: &BodyCatalog,
) -> Result<Bs3Solution, ImpulsiveError> {
    let runs: Vec<Result<Bs3Solution, ImpulsiveError>> = candidates
        .par_iter()
        .map(|c| optimize(c, problem, catalog))
        .collect();
    let mut best: Option<Bs3Solution> = None;
    let mut last_err = None;
    for r in runs {
        match r {
            Ok(s) => {
                let better = best.as_ref().is_none_or(|b| {
                    let key = |s: &Bs3Solution| (s.report.feasibility > 1e-6, s.f, s.x.t_p[0]);
                    let (ka, kb) = (key(&s), key(b));
                    ka.partial_cmp(&kb) == Some(std::cmp::Ordering::Less)
                });
                if better {
                    best = Some(s);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| ImpulsiveError::Invalid("no candidates".into())))
}

/// The gradient of the internal objective that the optimiser uses, per
/// unscaled variable.
pub fn objective_gradient(
    x: &DecisionVector,
    problem: &Bs3Problem,
    catalog: &BodyCatalog,
) -> Result<Vec<f64>, ImpulsiveError> {
    let ctx = context(problem, catalog)?;
    let n = ctx.bodies.len();
    let t_ref = x.t_p[0];
    let spec = nlp_spec(&ctx, x, problem, t_ref)?;
    let p = Bs3Nlp {
        ctx,
        problem,
        catalog,
        n,
        t_ref,
    };
    Ok(nlp::gradient(&p, &spec, &p.to_nlp(x))?)
}
