//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::f64::consts::PI;

use mgaopt::bodies::BodyCatalog;
use mgaopt::capture::CaptureQuery;
use mgaopt::sot::{SotConfig, SotMoon, SotState};
use mgaopt::twobody::{kepler_propagate, CartesianState};
use nalgebra::{Rotation2, Vector2, Vector3};
use rand::rngs::StdRng;
use rand::Rng;

pub const GALILEAN: [&str; 4] = ["io", "europa", "ganymede", "callisto"];

pub fn moon(id: &str) -> SotMoon {
    SotMoon::from_catalog(&BodyCatalog::default_catalog(), id).unwrap()
}

fn deflection(v_rel: f64, r_p: f64, mu: f64) -> f64 {
    2.0 * (mu / (mu + r_p * v_rel * v_rel)).asin()
}

/// Smallest period ratio reachable with one flyby, built by rotating the
/// relative velocity vector. Axes: moon velocity, outward radial.
pub fn rho_min_by_rotation(moon: &SotMoon, v_rel: f64, alpha: f64, h_p: f64) -> f64 {
    let vm = Vector2::new(moon.speed(), 0.0);
    let rel = Vector2::new(alpha.cos(), alpha.sin()) * v_rel;
    let beta = deflection(v_rel, moon.radius + h_p, moon.mu);
    let v_plus = vm + Rotation2::new(beta) * rel;
    let energy = 0.5 * v_plus.norm_squared() - moon.mu_parent / moon.a;
    let a = -moon.mu_parent / (2.0 * energy);
    (a / moon.a).powf(1.5)
}

/// Relative speed at moon B found by propagating the conic that leaves moon
/// A with relative speed `v_rel` at angle `alpha`. `None` when the conic
/// does not cross B's orbit within one revolution.
pub fn transfer_vrel_by_propagation(a: &SotMoon, b: &SotMoon, v_rel: f64, alpha: f64) -> Option<f64> {
    let mu = a.mu_parent;
    let r0 = Vector3::new(a.a, 0.0, 0.0);
    let v0 = Vector3::new(v_rel * alpha.sin(), a.speed() + v_rel * alpha.cos(), 0.0);
    let s0 = CartesianState::new(r0, v0, 0.0, "jupiter");
    let energy = s0.specific_energy(mu);
    let horizon = if energy < 0.0 {
        2.0 * PI * (mu / (-2.0 * energy).powi(3)).sqrt()
    } else {
        20.0 * b.period().max(a.period())
    };
    let gap = |t: f64| kepler_propagate(&s0, t, mu).map_or(f64::NAN, |s| s.r.norm() - b.a);
    let steps = 400;
    let dt = horizon / steps as f64;
    let mut prev = gap(dt * 1e-3);
    for i in 1..=steps {
        let t = i as f64 * dt;
        let g = gap(t);
        if prev.signum() != g.signum() {
            let root = mgaopt::roots::brent(gap, (i - 1) as f64 * dt, t, 1e-9).ok()?;
            let s = kepler_propagate(&s0, root, mu).ok()?;
            let v_moon = Vector3::z().cross(&s.r).normalize() * b.speed();
            return Some((s.v - v_moon).norm());
        }
        prev = g;
    }
    None
}

/// Jovicentric energy after a capture flyby, built from explicit vectors.
/// Axes: moon velocity, its in-plane normal.
pub fn capture_energy_by_vectors(q: &CaptureQuery, catalog: &BodyCatalog) -> f64 {
    let body = catalog.resolve(&q.moon).unwrap();
    let parent = catalog.parent_of(body).unwrap();
    let a_m = body.elements().unwrap().a;
    let vm = Vector2::new((parent.mu / a_m).sqrt(), 0.0);
    let v = (q.v_soi * q.v_soi + 2.0 * parent.mu / a_m - 2.0 * parent.mu / q.r_soi).sqrt();
    let v_minus = Vector2::new(q.gamma.cos(), q.gamma.sin()) * v;
    let rel = v_minus - vm;
    let beta = deflection(rel.norm(), body.radius + q.h_p, body.mu);
    let v_plus = vm + Rotation2::new(beta) * rel;
    0.5 * v_plus.norm_squared() - parent.mu / a_m
}

/// Small tour-search instance: depth ≤ 5, m ≤ 10.
pub struct SotInstance {
    pub moon: SotMoon,
    pub state: SotState,
    pub v_target: f64,
    pub cfg: SotConfig,
}

pub fn random_sot_instance(rng: &mut StdRng) -> SotInstance {
    let moon = moon(GALILEAN[rng.random_range(0..4)]);
    let v_rel = rng.random_range(1.0..7.0);
    let alpha0 = rng.random_range(0.0..1.2);
    let state = SotState::new(&moon, v_rel, alpha0);
    let floor = moon.speed_at(v_rel, PI);
    let v_target = floor + rng.random_range(0.05..0.9) * (state.v_plus - floor);
    let cfg = SotConfig {
        h_p_min: rng.random_range(100.0..1000.0),
        max_depth: rng.random_range(1..=5),
        max_m: rng.random_range(1..=10),
    };
    SotInstance {
        moon,
        state,
        v_target,
        cfg,
    }
}

/// Largest relative disagreement and sample count.
#[derive(Debug, Clone, Copy)]
pub struct Agreement {
    pub max_rel: f64,
    pub samples: usize,
}

/// Smallest reachable period ratio against [`rho_min_by_rotation`].
pub fn rho_min_agreement(samples: usize, seed: u64) -> Agreement {
    use rand::SeedableRng;
    let mut rng = StdRng::seed_from_u64(seed);
    let moons: Vec<SotMoon> = GALILEAN.iter().map(|id| moon(id)).collect();
    let mut out = Agreement { max_rel: 0.0, samples: 0 };
    while out.samples < samples {
        let m = &moons[rng.random_range(0..4)];
        let v_rel = rng.random_range(0.3..8.0);
        let h_p = rng.random_range(50.0..5000.0);
        let beta_max = deflection(v_rel, m.radius + h_p, m.mu);
        if beta_max >= PI {
            continue;
        }
        let alpha = rng.random_range(0.0..PI - beta_max);
        let oracle = rho_min_by_rotation(m, v_rel, alpha, h_p);
        if !oracle.is_finite() || oracle <= 0.0 {
            continue;
        }
        let state = SotState::new(m, v_rel, alpha);
        let (rho_min, _) = mgaopt::sot::rho_bounds(&state, m, h_p).unwrap();
        out.max_rel = out.max_rel.max((rho_min - oracle).abs() / oracle);
        out.samples += 1;
    }
    out
}

/// Moon-to-moon relative speed against [`transfer_vrel_by_propagation`].
/// Tangent and near-tangent arrivals are skipped because their crossing
/// cannot be bracketed.
pub fn transfer_agreement(samples: usize, seed: u64) -> Agreement {
    use rand::SeedableRng;
    let mut rng = StdRng::seed_from_u64(seed);
    let pairs = [("ganymede", "europa"), ("ganymede", "callisto"), ("europa", "io"), ("callisto", "ganymede")];
    let pairs: Vec<(SotMoon, SotMoon)> = pairs.iter().map(|(a, b)| (moon(a), moon(b))).collect();
    let mut out = Agreement { max_rel: 0.0, samples: 0 };
    while out.samples < samples {
        let (a, b) = &pairs[rng.random_range(0..pairs.len())];
        let v_rel = rng.random_range(0.2..8.0);
        let alpha = rng.random_range(0.0..PI);
        let Ok(formula) = mgaopt::sot::moon_transfer_vrel(v_rel, alpha, a, b) else {
            continue;
        };
        let Some(oracle) = transfer_vrel_by_propagation(a, b, v_rel, alpha) else {
            continue;
        };
        out.max_rel = out.max_rel.max((formula - oracle).abs() / oracle.max(1e-3));
        out.samples += 1;
    }
    out
}

/// Capture energy against [`capture_energy_by_vectors`].
pub fn capture_agreement(samples: usize, seed: u64) -> Agreement {
    use rand::SeedableRng;
    let mut rng = StdRng::seed_from_u64(seed);
    let catalog = BodyCatalog::default_catalog();
    let mut out = Agreement { max_rel: 0.0, samples: 0 };
    while out.samples < samples {
        let id = GALILEAN[rng.random_range(0..4)];
        let floor = catalog.get(id).unwrap().min_flyby_altitude;
        let q = CaptureQuery::new(
            id,
            rng.random_range(0.0..12.0),
            rng.random_range(0.0..PI),
            floor + rng.random_range(0.0..3000.0),
        );
        let got = mgaopt::capture::post_capture_energy_and_period(&q, &catalog).unwrap();
        let oracle = capture_energy_by_vectors(&q, &catalog);
        out.max_rel = out.max_rel.max((got.energy - oracle).abs() / oracle.abs().max(1e-12));
        if let Some(period) = got.period {
            let mu = catalog.parent_of(catalog.get(id).unwrap()).unwrap().mu;
            let kepler = 2.0 * PI * mu / (-2.0 * oracle).powf(1.5);
            out.max_rel = out.max_rel.max((period - kepler).abs() / kepler);
        }
        out.samples += 1;
    }
    out
}
