//! Integer phasing search for planetary swing-by sequences.
//!
//! Each leg `A → B` is modelled as `2m + 1` half-revolutions of a Hohmann
//! ellipse between circular orbits. For an integer `k` the departure epoch
//! that puts `B` opposite `A` (plus `k` full turns) follows in closed form;
//! the search picks one `k` per leg so that the launch dates implied by every
//! leg agree as closely as possible.

use std::cmp::Ordering;
use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bodies::{wrap_two_pi, Body, BodyCatalog, CatalogError};
use crate::time::SECONDS_PER_DAY;
use crate::twobody::hohmann_time;

#[derive(Debug, Error)]
pub enum PhasingError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("bodies `{0}` and `{1}` share a mean motion; phasing is undefined")]
    DegeneratePair(String, String),
    #[error("leg {leg} is a resonant return to `{body}`; same-body legs are not supported")]
    SameBodyLeg { leg: usize, body: String },
    #[error("`{0}` does not orbit the sun")]
    NotHeliocentric(String),
    #[error("invalid sequence: {0}")]
    Invalid(String),
}

/// Swing-by sequence and search bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    /// Body identifiers, departure first.
    pub bodies: Vec<String>,
    /// Extra half-revolution pairs per leg; leg `i` lasts `(2m + 1)` Hohmann half-periods.
    pub revolutions: Vec<u32>,
    /// Half-width of the admissible transfer-time interval as a fraction of the leg time.
    pub epsilon: f64,
    /// Inclusive `k` interval per leg. Derived from the launch window when `None`.
    pub k_range: Option<Vec<(i64, i64)>>,
    /// Launch window, MJD2000 days.
    pub launch_window: (f64, f64),
    /// Number of best candidates to keep.
    pub max_candidates: usize,
}

impl SequenceSpec {
    pub fn new(bodies: Vec<String>, revolutions: Vec<u32>, launch_window: (f64, f64)) -> Self {
        Self {
            bodies,
            revolutions,
            epsilon: 0.15,
            k_range: None,
            launch_window,
            max_candidates: 100,
        }
    }

    fn validate(&self) -> Result<(), PhasingError> {
        let legs = self.bodies.len().saturating_sub(1);
        if self.bodies.len() < 2 {
            return Err(PhasingError::Invalid("at least two bodies are required".into()));
        }
        if self.revolutions.len() != legs {
            return Err(PhasingError::Invalid(format!(
                "{} revolution counts given for {legs} legs",
                self.revolutions.len()
            )));
        }
        if !(0.0..=0.5).contains(&self.epsilon) {
            return Err(PhasingError::Invalid("epsilon must lie in [0, 0.5]".into()));
        }
        let (t0, t1) = self.launch_window;
        if !(t0 <= t1) {
            return Err(PhasingError::Invalid("launch window is empty".into()));
        }
        if self.max_candidates == 0 {
            return Err(PhasingError::Invalid("max_candidates must be positive".into()));
        }
        if let Some(ranges) = &self.k_range {
            if ranges.len() != legs {
                return Err(PhasingError::Invalid("one k range is required per leg".into()));
            }
            if ranges.iter().any(|(lo, hi)| lo > hi) {
                return Err(PhasingError::Invalid("empty k range".into()));
            }
        }
        Ok(())
    }
}

/// One solution of the phasing search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasingCandidate {
    pub sequence: Vec<String>,
    pub revolutions: Vec<u32>,
    pub k: Vec<i64>,
    /// Leg durations, s.
    pub leg_times: Vec<f64>,
    /// Departure epoch of each leg, MJD2000 days.
    pub t_initial: Vec<f64>,
    /// Launch epoch implied by each leg, MJD2000 days.
    pub t_launch: Vec<f64>,
    /// Sum of squared launch-date disagreements, days².
    pub merit: f64,
}

impl PhasingCandidate {
    pub fn launch(&self) -> f64 {
        self.t_launch[0]
    }

    /// Encounter epochs assuming each leg departs when the previous one
    /// arrives, MJD2000 days. Length `legs + 1`.
    pub fn encounter_epochs(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.leg_times.len() + 1);
        let mut t = self.t_launch[0];
        out.push(t);
        for dt in &self.leg_times {
            t += dt / SECONDS_PER_DAY;
            out.push(t);
        }
        out
    }
}

/// Departure time (s after the reference epoch) at which a `dt`-second
/// transfer from `A` arrives at `B` after sweeping `(2k + 1)π` relative to
/// `A`'s departure longitude. `dtheta0` is `θ_B − θ_A` at the reference epoch.
pub fn t_initial(k: i64, dt: f64, omega_a: f64, omega_b: f64, dtheta0: f64) -> Option<f64> {
    let dw = omega_b - omega_a;
    if dw == 0.0 {
        return None;
    }
    Some(((2 * k + 1) as f64 * PI - omega_b * dt - dtheta0) / dw)
}

/// Residual of the phasing condition, wrapped to `(−π, π]`.
pub fn phasing_residual(
    catalog: &BodyCatalog,
    a: &Body,
    b: &Body,
    t_depart: f64,
    dt: f64,
) -> Result<f64, CatalogError> {
    let ta = catalog.state_circular(a, t_depart)?.theta;
    let tb = catalog.state_circular(b, t_depart + dt / SECONDS_PER_DAY)?.theta;
    Ok(wrap_pi(tb - ta - PI))
}

fn wrap_pi(x: f64) -> f64 {
    let y = wrap_two_pi(x);
    if y > PI {
        y - TAU
    } else {
        y
    }
}

#[derive(Debug, Clone)]
struct Leg {
    dt: f64,
    omega_a: f64,
    omega_b: f64,
    dtheta0: f64,
    /// Time already spent on earlier legs, s.
    elapsed: f64,
}

impl Leg {
    /// Departure epoch and implied launch epoch in days.
    fn epochs(&self, k: i64) -> (f64, f64) {
        let t = t_initial(k, self.dt, self.omega_a, self.omega_b, self.dtheta0)
            .expect("degenerate pairs rejected at setup")
            / SECONDS_PER_DAY;
        (t, t - self.elapsed / SECONDS_PER_DAY)
    }

    /// Smallest and largest `k` whose departure falls in `[lo, hi]` days.
    fn k_span(&self, lo: f64, hi: f64) -> (i64, i64) {
        let dw = self.omega_b - self.omega_a;
        let k_of = |t_days: f64| {
            ((t_days * SECONDS_PER_DAY * dw + self.omega_b * self.dt + self.dtheta0) / PI - 1.0) / 2.0
        };
        let (a, b) = (k_of(lo), k_of(hi));
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        (a.ceil() as i64, b.floor() as i64)
    }

    fn synodic_days(&self) -> f64 {
        TAU / (self.omega_b - self.omega_a).abs() / SECONDS_PER_DAY
    }
}

fn build_legs(spec: &SequenceSpec, catalog: &BodyCatalog) -> Result<Vec<Leg>, PhasingError> {
    let bodies = spec
        .bodies
        .iter()
        .map(|id| catalog.resolve(id))
        .collect::<Result<Vec<_>, _>>()?;
    for b in &bodies {
        if b.parent != "sun" {
            return Err(PhasingError::NotHeliocentric(b.id.clone()));
        }
    }
    let sun = catalog.get("sun")?;
    let mut legs = Vec::with_capacity(bodies.len() - 1);
    let mut elapsed = 0.0;
    for (i, pair) in bodies.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        if a.id == b.id {
            return Err(PhasingError::SameBodyLeg {
                leg: i + 1,
                body: a.id.clone(),
            });
        }
        let sa = catalog.state_circular(a, 0.0)?;
        let sb = catalog.state_circular(b, 0.0)?;
        if sa.rate == sb.rate {
            return Err(PhasingError::DegeneratePair(a.id.clone(), b.id.clone()));
        }
        let dt = hohmann_time(sa.radius, sb.radius, spec.revolutions[i], sun.mu);
        legs.push(Leg {
            dt,
            omega_a: sa.rate,
            omega_b: sb.rate,
            dtheta0: sb.theta - sa.theta,
            elapsed,
        });
        elapsed += dt;
    }
    Ok(legs)
}

fn k_ranges(spec: &SequenceSpec, legs: &[Leg]) -> Vec<(i64, i64)> {
    if let Some(r) = &spec.k_range {
        return r.clone();
    }
    let (lo, hi) = spec.launch_window;
    legs.iter()
        .enumerate()
        .map(|(i, leg)| {
            let shift = leg.elapsed / SECONDS_PER_DAY;
            if i == 0 {
                leg.k_span(lo, hi)
            } else {
                let pad = leg.synodic_days();
                leg.k_span(lo + shift - pad, hi + shift + pad)
            }
        })
        .collect()
}

fn rank(a: &PhasingCandidate, b: &PhasingCandidate) -> Ordering {
    a.merit
        .total_cmp(&b.merit)
        .then(a.t_launch[0].total_cmp(&b.t_launch[0]))
        .then_with(|| a.k.cmp(&b.k))
}

fn merit_of(t_launch: &[f64]) -> f64 {
    let t1 = t_launch[0];
    t_launch.iter().map(|t| (t - t1) * (t - t1)).sum()
}

fn candidate(spec: &SequenceSpec, legs: &[Leg], k: &[i64]) -> PhasingCandidate {
    let (t_initial, t_launch): (Vec<f64>, Vec<f64>) =
        legs.iter().zip(k).map(|(leg, &ki)| leg.epochs(ki)).unzip();
    PhasingCandidate {
        sequence: spec.bodies.clone(),
        revolutions: spec.revolutions.clone(),
        k: k.to_vec(),
        leg_times: legs.iter().map(|l| l.dt).collect(),
        merit: merit_of(&t_launch),
        t_initial,
        t_launch,
    }
}

/// Bounded list of the best candidates seen so far.
struct TopK {
    cap: usize,
    items: Vec<PhasingCandidate>,
}

impl TopK {
    fn new(cap: usize) -> Self {
        Self {
            cap,
            items: Vec::with_capacity(cap + 1),
        }
    }

    fn worst_merit(&self) -> f64 {
        if self.items.len() < self.cap {
            f64::INFINITY
        } else {
            self.items.last().map_or(f64::INFINITY, |c| c.merit)
        }
    }

    fn push(&mut self, c: PhasingCandidate) {
        let pos = self
            .items
            .binary_search_by(|x| rank(x, &c))
            .unwrap_or_else(|p| p);
        if pos < self.cap {
            self.items.insert(pos, c);
            self.items.truncate(self.cap);
        }
    }
}

/// Ranked phasing candidates for `spec`, best first.
///
/// For a fixed first-leg `k`, each later leg contributes an independent term
/// to the merit, so the sum of per-leg minima bounds any completion from
/// below. Branches are cut only when that bound exceeds the worst retained
/// merit, so the result equals full enumeration truncated to
/// `max_candidates`.
pub fn search(spec: &SequenceSpec, catalog: &BodyCatalog) -> Result<Vec<PhasingCandidate>, PhasingError> {
    spec.validate()?;
    let legs = build_legs(spec, catalog)?;
    let ranges = k_ranges(spec, &legs);
    let (lo, hi) = spec.launch_window;
    let first: Vec<i64> = (ranges[0].0..=ranges[0].1)
        .filter(|&k| {
            let t = legs[0].epochs(k).1;
            t >= lo && t <= hi
        })
        .collect();

    let partials: Vec<Vec<PhasingCandidate>> = first
        .par_iter()
        .map(|&k1| {
            let t1 = legs[0].epochs(k1).1;
            // Per-leg options sorted by their merit term.
            let options: Vec<Vec<(f64, i64)>> = legs[1..]
                .iter()
                .zip(&ranges[1..])
                .map(|(leg, &(a, b))| {
                    let mut v: Vec<(f64, i64)> = (a..=b)
                        .map(|k| {
                            let d = leg.epochs(k).1 - t1;
                            (d * d, k)
                        })
                        .collect();
                    v.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
                    v
                })
                .collect();
            let mut rest_min = vec![0.0; options.len() + 1];
            for j in (0..options.len()).rev() {
                rest_min[j] = rest_min[j + 1] + options[j].first().map_or(f64::INFINITY, |o| o.0);
            }
            let mut top = TopK::new(spec.max_candidates);
            let mut k = vec![k1];
            descend(spec, &legs, &options, &rest_min, 0, 0.0, &mut k, &mut top);
            top.items
        })
        .collect();

    let mut top = TopK::new(spec.max_candidates);
    for c in partials.into_iter().flatten() {
        top.push(c);
    }
    Ok(top.items)
}

#[allow(clippy::too_many_arguments)]
fn descend(
    spec: &SequenceSpec,
    legs: &[Leg],
    options: &[Vec<(f64, i64)>],
    rest_min: &[f64],
    depth: usize,
    partial: f64,
    k: &mut Vec<i64>,
    top: &mut TopK,
) {
    if depth == options.len() {
        top.push(candidate(spec, legs, k));
        return;
    }
    for &(term, ki) in &options[depth] {
        let bound = partial + term + rest_min[depth + 1];
        let worst = top.worst_merit();
        // Options are sorted, so every later one is at least as bad.
        if bound > worst * (1.0 + 1e-12) + 1e-12 {
            break;
        }
        k.push(ki);
        descend(spec, legs, options, rest_min, depth + 1, partial + term, k, top);
        k.pop();
    }
}

/// Every combination in the `k` ranges, ranked, truncated to `max_candidates`.
/// Reference implementation for [`search`].
pub fn enumerate_all(spec: &SequenceSpec, catalog: &BodyCatalog) -> Result<Vec<PhasingCandidate>, PhasingError> {
    spec.validate()?;
    let legs = build_legs(spec, catalog)?;
    let ranges = k_ranges(spec, &legs);
    let (lo, hi) = spec.launch_window;
    let mut all = Vec::new();
    let mut k: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    loop {
        let c = candidate(spec, &legs, &k);
        if c.t_launch[0] >= lo && c.t_launch[0] <= hi {
            all.push(c);
        }
        let mut i = legs.len();
        loop {
            if i == 0 {
                all.sort_by(rank);
                all.truncate(spec.max_candidates);
                return Ok(all);
            }
            i -= 1;
            if k[i] < ranges[i].1 {
                k[i] += 1;
                break;
            }
            k[i] = ranges[i].0;
        }
    }
}

/// Keeps candidates whose every leg has its mid-transfer longitude within
/// `window` (rad) of the line of nodes between the two orbits. Legs between
/// coplanar orbits always pass.
pub fn restrict_to_nodes(
    candidates: &[PhasingCandidate],
    catalog: &BodyCatalog,
    window: f64,
) -> Result<Vec<PhasingCandidate>, PhasingError> {
    let mut kept = Vec::new();
    for c in candidates {
        let mut ok = true;
        for (i, pair) in c.sequence.windows(2).enumerate() {
            let a = catalog.resolve(&pair[0])?;
            let b = catalog.resolve(&pair[1])?;
            let node = a.elements()?.plane_normal().cross(&b.elements()?.plane_normal());
            if node.norm() < 1e-12 {
                continue;
            }
            let node_lon = node.y.atan2(node.x);
            let theta_a = catalog.state_circular(a, c.t_initial[i])?.theta;
            let mid = theta_a + (2 * c.revolutions[i] + 1) as f64 * PI / 2.0;
            let d = wrap_two_pi(mid - node_lon) % PI;
            if d.min(PI - d) > window {
                ok = false;
                break;
            }
        }
        if ok {
            kept.push(c.clone());
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::calendar_to_mjd2000;
    use chrono::NaiveDate;

    fn evmej() -> SequenceSpec {
        let d = |y, m, dd| calendar_to_mjd2000(NaiveDate::from_ymd_opt(y, m, dd).unwrap());
        SequenceSpec::new(
            ["earth", "venus", "mars", "earth", "jupiter"].map(String::from).to_vec(),
            vec![1, 0, 0, 0],
            (d(2009, 1, 1), d(2011, 12, 31)),
        )
    }

    #[test]
    fn t_initial_constructed_zero() {
        let (wa, wb, dt) = (2e-7, 3e-7, 1.2e7);
        let t = t_initial(0, dt, wa, wb, PI - wb * dt).unwrap();
        assert!(t.abs() < 1e-6);
    }

    #[test]
    fn t_initial_shift_per_k() {
        let (wa, wb, dt, th) = (1.99e-7, 3.24e-7, 1.26e7, 0.4);
        let t0 = t_initial(3, dt, wa, wb, th).unwrap();
        let t1 = t_initial(4, dt, wa, wb, th).unwrap();
        assert!(((t1 - t0) - TAU / (wb - wa)).abs() < 1e-6);
        assert!(t_initial(0, dt, wa, wa, th).is_none());
    }

    #[test]
    fn earth_venus_residual() {
        let cat = BodyCatalog::default_catalog();
        let spec = SequenceSpec::new(vec!["earth".into(), "venus".into()], vec![0], (0.0, 2000.0));
        let res = search(&spec, &cat).unwrap();
        assert!(!res.is_empty());
        let (e, v) = (cat.get("earth").unwrap(), cat.get("venus").unwrap());
        for c in &res {
            assert_eq!(c.merit, 0.0);
            let r = phasing_residual(&cat, e, v, c.t_initial[0], c.leg_times[0]).unwrap();
            assert!(r.abs() < 1e-9, "{r}");
        }
    }

    #[test]
    fn rejects_same_body_legs() {
        let cat = BodyCatalog::default_catalog();
        let spec = SequenceSpec::new(
            vec!["earth".into(), "earth".into(), "jupiter".into()],
            vec![0, 0],
            (0.0, 1000.0),
        );
        assert!(matches!(search(&spec, &cat), Err(PhasingError::SameBodyLeg { leg: 1, .. })));
    }

    #[test]
    fn evmej_pruned_matches_enumeration() {
        let cat = BodyCatalog::default_catalog();
        let mut spec = evmej();
        spec.max_candidates = 25;
        let pruned = search(&spec, &cat).unwrap();
        let full = enumerate_all(&spec, &cat).unwrap();
        assert_eq!(pruned, full);
    }

    #[test]
    fn node_filter_limits() {
        let cat = BodyCatalog::default_catalog();
        let all = search(&evmej(), &cat).unwrap();
        assert_eq!(restrict_to_nodes(&all, &cat, PI).unwrap(), all);
        let narrow = restrict_to_nodes(&all, &cat, 0.0).unwrap();
        assert!(narrow.is_empty());
        let default = restrict_to_nodes(&all, &cat, 30f64.to_radians()).unwrap();
        assert!(default.len() <= all.len());
    }
}
