use std::f64::consts::PI;
use std::sync::Arc;

use mgaopt::dfet::{
    assemble, fet_solve_states, optimize_nlp, Dynamics, DynamicsConfig, Link, Mesh, Phase, PhaseGuess,
    PhaseObjective, SpacecraftModel, MASS,
};
use mgaopt::nlp::{NlpOptions, NlpProblem};
use mgaopt::sep::EngineConfig;
use mgaopt::twobody::{kepler_propagate, swingby_apply, swingby_deflection, CartesianState};
use mgaopt::{BodyCatalog, AU_KM};
use nalgebra::Vector3;
use proptest::prelude::*;

fn earth_model() -> Arc<SpacecraftModel> {
    let cat = BodyCatalog::default_catalog();
    Arc::new(SpacecraftModel::new(DynamicsConfig::new("earth"), &cat, 7000.0, 1500.0).unwrap())
}

fn coast(_: f64) -> Vec<f64> {
    vec![0.0; 3]
}

const CIRCULAR: [f64; 7] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0];

#[test]
fn circular_orbit_one_period() {
    let m = earth_model();
    let traj = fet_solve_states(m.as_ref(), &Mesh::uniform(20, 5), 0.0, 2.0 * PI, &CIRCULAR, &coast).unwrap();
    assert!(traj.max_residual < 1e-10);
    let mut worst: f64 = 0.0;
    for (times, states) in traj.node_times.iter().zip(&traj.node_states) {
        for (q, t) in times.iter().enumerate() {
            let x = &states[q * 7..q * 7 + 7];
            let err = ((x[0] - t.cos()).powi(2) + (x[1] - t.sin()).powi(2) + x[2].powi(2)).sqrt();
            worst = worst.max(err * m.units.length);
        }
    }
    let end = traj.final_state();
    let end_err = ((end[0] - 1.0).powi(2) + end[1].powi(2) + end[2].powi(2)).sqrt() * m.units.length;
    assert!(end_err < 1e-6, "end position error {end_err} km");
    assert!(worst < 1e-4, "node position error {worst} km");
    let energy = |x: &[f64]| 0.5 * (x[3] * x[3] + x[4] * x[4] + x[5] * x[5]) - 1.0 / (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    let e0 = energy(&CIRCULAR);
    for b in &traj.boundary_states {
        assert!(((energy(b) - e0) / e0).abs() < 1e-9);
    }
    assert!((end[MASS] - 1.0).abs() < 1e-12);
}

fn eccentric_error(n: usize, p: usize) -> f64 {
    let m = earth_model();
    let x0 = [1.0, 0.0, 0.0, 0.0, 1.2, 0.1, 1.0];
    let tf = 3.0;
    let traj = fet_solve_states(m.as_ref(), &Mesh::uniform(n, p), 0.0, tf, &x0, &coast).unwrap();
    let s = CartesianState::new(Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.2, 0.1), 0.0, "earth");
    let exact = kepler_propagate(&s, tf, 1.0).unwrap();
    let end = traj.final_state();
    (Vector3::new(end[0], end[1], end[2]) - exact.r).norm()
}

#[test]
fn boundary_error_converges_at_superconvergent_rate() {
    for p in [2, 3] {
        let e: Vec<f64> = [4, 8, 16].iter().map(|&n| eccentric_error(n, p)).collect();
        for w in e.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= (2 * p - 1) as f64 - 0.2, "p = {p}: errors {e:?}");
        }
    }
}

/// Residuals of the exact solution shrink under refinement.
#[test]
fn exact_solution_residuals_vanish_under_refinement() {
    let m = earth_model();
    let x0 = CartesianState::new(Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.2, 0.1), 0.0, "earth");
    let exact = |t: f64| {
        let s = kepler_propagate(&x0, t, 1.0).unwrap();
        vec![s.r.x, s.r.y, s.r.z, s.v.x, s.v.y, s.v.z, 1.0]
    };
    let residual = |n: usize| {
        let ph = Phase::new(m.clone(), Mesh::uniform(n, 3), 0.0, 3.0);
        let nlp = assemble(vec![ph], vec![]).unwrap();
        let y = nlp
            .initial_guess(
                &[PhaseGuess {
                    t0: 0.0,
                    tf: 3.0,
                    state: &exact,
                    control: &coast,
                }],
                &[],
            )
            .unwrap();
        let mut eq = vec![0.0; nlp.n_eq()];
        let mut ineq = vec![0.0; nlp.n_ineq()];
        nlp.constraints(&y, &mut eq, &mut ineq);
        eq.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    };
    let r: Vec<f64> = [4, 8, 16].iter().map(|&n| residual(n)).collect();
    for w in r.windows(2) {
        assert!((w[0] / w[1]).log2() >= 3.0, "{r:?}");
    }
}

/// A ballistic arc is reachable; the minimum-propellant solution thrusts
/// at the floor everywhere and loses almost no mass.
#[test]
fn ballistic_target_drives_thrust_to_floor() {
    let cat = BodyCatalog::default_catalog();
    let mut cfg = DynamicsConfig::new("earth");
    cfg.engine = EngineConfig::new(300.0, 7, 150.0);
    let m = Arc::new(SpacecraftModel::new(cfg, &cat, 7000.0, 1500.0).unwrap());
    let tf = 0.5 * PI;
    let mesh = Mesh::uniform(4, 4);
    let ballistic = fet_solve_states(m.as_ref(), &mesh, 0.0, tf, &CIRCULAR, &coast).unwrap();
    let mut ph = Phase::new(m.clone(), mesh, 0.0, tf);
    ph.fix_initial(&CIRCULAR);
    let end = ballistic.final_state();
    for (bound, &v) in ph.xf.iter_mut().zip(end.iter()).take(3) {
        *bound = (v, v);
    }
    ph.controls = vec![(-1.0, 1.0); 3];
    ph.states[MASS] = (0.5, 1.0);
    ph.objective = PhaseObjective::MaxFinal(MASS);
    let nlp = assemble(vec![ph], vec![]).unwrap();
    let t_min = m.config.engine.t_min / m.thrust_unit();
    let state = |t: f64| vec![t.cos(), t.sin(), 0.0, -t.sin(), t.cos(), 0.0, 1.0];
    let control = |t: f64| vec![0.0, 0.0, if t < 0.5 * tf { 3.0 } else { -3.0 } * t_min];
    let y0 = nlp
        .initial_guess(
            &[PhaseGuess {
                t0: 0.0,
                tf,
                state: &state,
                control: &control,
            }],
            &[],
        )
        .unwrap();
    let options = NlpOptions {
        feasibility_tol: 1e-10,
        stationarity_tol: 1e-6,
        ..NlpOptions::default()
    };
    let sol = optimize_nlp(&nlp, &y0, &options).unwrap();
    assert!(sol.report.feasibility < 1e-8, "{:?}", sol.report);
    let ph = &sol.phases[0];
    let mut last = 1.0;
    for n in &ph.nodes {
        let u = (n.u[0] * n.u[0] + n.u[1] * n.u[1] + n.u[2] * n.u[2]).sqrt();
        assert!(u >= t_min * (1.0 - 1e-6), "thrust {u} below the floor {t_min}");
        assert!(u <= 1.0 + 1e-9);
        assert!(u < 5.0 * t_min, "thrust {u} did not collapse to the floor {t_min}");
        assert!(n.x[MASS] <= last + 1e-12);
        last = n.x[MASS];
    }
    let full_burn = 1.0 - ph.xf[MASS];
    let floor_burn = t_min * m.thrust_unit() / m.config.engine.exhaust_velocity() * tf * m.units.time / m.units.mass;
    assert!(full_burn < 5.0 * floor_burn, "{full_burn} vs {floor_burn}");
}

fn heliocentric_model() -> Arc<SpacecraftModel> {
    let cat = BodyCatalog::default_catalog();
    Arc::new(SpacecraftModel::new(DynamicsConfig::new("sun"), &cat, AU_KM, 1500.0).unwrap())
}

/// The swing-by link is satisfied by a flyby built with the two-body
/// swing-by kernel.
#[test]
fn swing_by_link_accepts_linked_conic_flyby() {
    let m = heliocentric_model();
    let cat = BodyCatalog::default_catalog();
    let earth = cat.get("earth").unwrap();
    let t_fb = m.time_of(4000.0);
    let (rb, vb) = m.body_state("earth", t_fb).unwrap();
    let vu = m.units.velocity();
    let v_in = Vector3::new(3.0, -4.0, 1.0);
    let rp = earth.radius + 800.0;
    let beta = swingby_deflection(v_in.norm(), rp, earth.mu);
    let v_out = swingby_apply(&v_in, beta, 0.7, &Vector3::z());

    let a = Phase::new(m.clone(), Mesh::uniform(2, 2), t_fb - 1.0, t_fb);
    let b = Phase::new(m.clone(), Mesh::uniform(2, 2), t_fb, t_fb + 1.0);
    let link = Link::SwingBy {
        from: 0,
        to: 1,
        body: "earth".into(),
    };
    let nlp = assemble(vec![a, b], vec![link]).unwrap();
    assert_eq!(nlp.dim(), 2 * (2 * 2 * 10 + 2 * 7 + 2) + 1);
    let before = move |_: f64| {
        let v = vb + v_in / vu;
        vec![rb.x, rb.y, rb.z, v.x, v.y, v.z, 0.9]
    };
    let after = move |_: f64| {
        let v = vb + v_out / vu;
        vec![rb.x, rb.y, rb.z, v.x, v.y, v.z, 0.9]
    };
    let y = nlp
        .initial_guess(
            &[
                PhaseGuess {
                    t0: t_fb - 1.0,
                    tf: t_fb,
                    state: &before,
                    control: &coast,
                },
                PhaseGuess {
                    t0: t_fb,
                    tf: t_fb + 1.0,
                    state: &after,
                    control: &coast,
                },
            ],
            &[rp / m.units.length],
        )
        .unwrap();
    let mut eq = vec![0.0; nlp.n_eq()];
    let mut ineq = vec![0.0; nlp.n_ineq()];
    nlp.constraints(&y, &mut eq, &mut ineq);
    let link_rows = &eq[eq.len() - 10..];
    for (k, r) in link_rows.iter().enumerate() {
        assert!(r.abs() < 1e-10, "row {k}: {r}");
    }
    let (lo, hi) = nlp.bounds();
    let idx = nlp.param_index(0).unwrap();
    assert!((lo[idx] * m.units.length - earth.min_periapsis()).abs() < 1e-6);
    assert!(hi[idx] > lo[idx]);

    let mut bad = y.clone();
    bad[idx] *= 1.5;
    nlp.constraints(&bad, &mut eq, &mut ineq);
    assert!(eq[eq.len() - 1].abs() > 1e-4);
}

fn gradient_check(objective: PhaseObjective, y: &[f64], nlp: &mut mgaopt::dfet::TranscribedNlp) {
    nlp.set_objective(0, objective).unwrap();
    let g = nlp.gradient(y).unwrap();
    let scale = g.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-12);
    for j in 0..y.len() {
        let h = 1e-6 * y[j].abs().max(1.0);
        let mut yp = y.to_vec();
        let mut ym = y.to_vec();
        yp[j] += h;
        ym[j] -= h;
        let d = (nlp.objective(&yp) - nlp.objective(&ym)) / (2.0 * h);
        assert!((g[j] - d).abs() <= 1e-4 * scale, "{objective:?} component {j}: {} vs {d}", g[j]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn objective_gradient_matches_central_differences(seed in 0u64..1_000_000, t0 in 0.0f64..50.0, dur in 1.0f64..6.0) {
        let m = heliocentric_model();
        let mut ph = Phase::new(m, Mesh::uniform(3, 3), t0, t0 + dur);
        ph.t0 = (t0 - 1.0, t0 + 1.0);
        ph.tf = (t0 + dur - 1.0, t0 + dur + 1.0);
        let mut nlp = assemble(vec![ph], vec![]).unwrap();
        let mut rng = seed;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let state = |t: f64| vec![t.cos(), t.sin(), 0.0, -t.sin(), t.cos(), 0.0, 1.0];
        let control = |_: f64| vec![0.1, -0.2, 0.05];
        let mut y = nlp.initial_guess(&[PhaseGuess { t0, tf: t0 + dur, state: &state, control: &control }], &[]).unwrap();
        for v in y.iter_mut() {
            *v += 0.05 * next();
        }
        for obj in [PhaseObjective::MaxFinal(MASS), PhaseObjective::MinTime, PhaseObjective::ControlEnergy] {
            gradient_check(obj, &y, &mut nlp);
        }
    }
}
