//! Phase definition, the weak-form element residual and the element-marching
//! state solver used for verification.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::basis::ElementBasis;
use super::dynamics::Dynamics;
use super::DfetError;

/// Element boundaries as fractions of the phase duration, and the order `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    /// Strictly increasing from 0 to 1; length `elements + 1`.
    pub boundaries: Vec<f64>,
    pub p: usize,
}

impl Mesh {
    pub fn uniform(elements: usize, p: usize) -> Self {
        Self {
            boundaries: (0..=elements).map(|i| i as f64 / elements as f64).collect(),
            p,
        }
    }

    pub fn n_elements(&self) -> usize {
        self.boundaries.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<(), DfetError> {
        let b = &self.boundaries;
        if self.p < 1 || b.len() < 2 {
            return Err(DfetError::Invalid("mesh needs p >= 1 and at least one element".into()));
        }
        if b[0] != 0.0 || b[b.len() - 1] != 1.0 || b.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DfetError::Invalid(
                "mesh boundaries must increase strictly from 0 to 1".into(),
            ));
        }
        Ok(())
    }
}

/// Scratch space for one element evaluation.
pub(crate) struct ElementWork {
    f: Vec<f64>,
}

impl ElementWork {
    pub(crate) fn new(n_x: usize, p: usize) -> Self {
        Self { f: vec![0.0; n_x * p] }
    }
}

/// Evaluates the `p · n_x` residuals of one element on `[t_a, t_a + h]`
/// and its right boundary value. Node-major layout: `xs[q * n_x + c]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn element_residual(
    dynamics: &dyn Dynamics,
    basis: &ElementBasis,
    t_a: f64,
    h: f64,
    x_left: &[f64],
    xs: &[f64],
    us: &[f64],
    res: &mut [f64],
    x_right: &mut [f64],
    work: &mut ElementWork,
) {
    let (nx, nu, p) = (dynamics.n_x(), dynamics.n_u(), basis.p);
    for q in 0..p {
        let t = t_a + 0.5 * (basis.gauss[q] + 1.0) * h;
        dynamics.rhs(t, &xs[q * nx..(q + 1) * nx], &us[q * nu..(q + 1) * nu], &mut work.f[q * nx..(q + 1) * nx]);
    }
    let half = 0.5 * h;
    for k in 0..=p {
        for c in 0..nx {
            let mut acc = 0.0;
            for q in 0..p {
                acc += basis.weights[q] * (basis.test_d[k][q] * xs[q * nx + c] + half * basis.test[k][q] * work.f[q * nx + c]);
            }
            if k < p {
                res[k * nx + c] = acc + if k == 0 { x_left[c] } else { 0.0 };
            } else {
                x_right[c] = acc;
            }
        }
    }
}

/// Trajectory produced by [`fet_solve_states`].
#[derive(Debug, Clone, PartialEq)]
pub struct FetTrajectory {
    /// Gauss-node times per element.
    pub node_times: Vec<Vec<f64>>,
    /// Gauss-node states per element, node-major.
    pub node_states: Vec<Vec<f64>>,
    /// State at each element boundary; length `elements + 1`.
    pub boundary_states: Vec<Vec<f64>>,
    /// Largest element residual at the solution.
    pub max_residual: f64,
}

impl FetTrajectory {
    pub fn final_state(&self) -> &[f64] {
        self.boundary_states.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Solves the element residuals for the states with the controls given as
/// a function of time, marching element by element with Newton's method.
pub fn fet_solve_states(
    dynamics: &dyn Dynamics,
    mesh: &Mesh,
    t0: f64,
    tf: f64,
    x0: &[f64],
    control: &dyn Fn(f64) -> Vec<f64>,
) -> Result<FetTrajectory, DfetError> {
    mesh.validate()?;
    let (nx, nu, p) = (dynamics.n_x(), dynamics.n_u(), mesh.p);
    if x0.len() != nx {
        return Err(DfetError::Invalid(format!("initial state has {} entries, expected {nx}", x0.len())));
    }
    if !(tf > t0) {
        return Err(DfetError::Invalid("final time must follow the initial time".into()));
    }
    let basis = ElementBasis::new(p);
    let n = nx * p;
    let mut work = ElementWork::new(nx, p);
    let mut x_left = x0.to_vec();
    let mut out = FetTrajectory {
        node_times: Vec::new(),
        node_states: Vec::new(),
        boundary_states: vec![x0.to_vec()],
        max_residual: 0.0,
    };
    let mut f0 = vec![0.0; nx];
    for e in 0..mesh.n_elements() {
        let t_a = t0 + mesh.boundaries[e] * (tf - t0);
        let h = (mesh.boundaries[e + 1] - mesh.boundaries[e]) * (tf - t0);
        let times: Vec<f64> = basis.gauss.iter().map(|g| t_a + 0.5 * (g + 1.0) * h).collect();
        let mut us = Vec::with_capacity(nu * p);
        for &t in &times {
            let u = control(t);
            if u.len() != nu {
                return Err(DfetError::Invalid(format!("control has {} entries, expected {nu}", u.len())));
            }
            us.extend(u);
        }
        dynamics.rhs(t_a, &x_left, &us[..nu], &mut f0);
        let mut xs: Vec<f64> = times
            .iter()
            .flat_map(|&t| (0..nx).map(move |c| (c, t)))
            .map(|(c, t)| x_left[c] + f0[c] * (t - t_a))
            .collect();
        let mut res = vec![0.0; n];
        let mut x_right = vec![0.0; nx];
        let mut converged = false;
        for _ in 0..50 {
            element_residual(dynamics, &basis, t_a, h, &x_left, &xs, &us, &mut res, &mut x_right, &mut work);
            let rnorm = res.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if !rnorm.is_finite() {
                break;
            }
            let jac = element_state_jacobian(dynamics, &basis, &times, h, &xs, &us);
            let Some(dx) = jac.lu().solve(&DVector::from_column_slice(&res)) else {
                break;
            };
            let scale = xs.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
            for (x, d) in xs.iter_mut().zip(dx.iter()) {
                *x -= d;
            }
            if dx.amax() <= 1e-15 * scale || rnorm < 1e-15 * scale {
                converged = true;
                break;
            }
        }
        element_residual(dynamics, &basis, t_a, h, &x_left, &xs, &us, &mut res, &mut x_right, &mut work);
        let rnorm = res.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if !(converged || rnorm < 1e-12) || !rnorm.is_finite() || rnorm > 1e-10 {
            return Err(DfetError::MeshTooCoarse { element: e, residual: rnorm });
        }
        out.max_residual = out.max_residual.max(rnorm);
        out.node_times.push(times);
        out.node_states.push(xs);
        out.boundary_states.push(x_right.clone());
        x_left = x_right;
    }
    Ok(out)
}

/// `∂R/∂x_s` for one element with `∂F/∂x` from central differences.
fn element_state_jacobian(
    dynamics: &dyn Dynamics,
    basis: &ElementBasis,
    times: &[f64],
    h: f64,
    xs: &[f64],
    us: &[f64],
) -> DMatrix<f64> {
    let (nx, nu, p) = (dynamics.n_x(), dynamics.n_u(), basis.p);
    let mut jac = DMatrix::zeros(nx * p, nx * p);
    let mut fp = vec![0.0; nx];
    let mut fm = vec![0.0; nx];
    for q in 0..p {
        let xq = &xs[q * nx..(q + 1) * nx];
        let uq = &us[q * nu..(q + 1) * nu];
        let mut a = DMatrix::zeros(nx, nx);
        let mut xp = xq.to_vec();
        for j in 0..nx {
            let step = 1e-7 * xq[j].abs().max(1.0);
            xp[j] = xq[j] + step;
            dynamics.rhs(times[q], &xp, uq, &mut fp);
            xp[j] = xq[j] - step;
            dynamics.rhs(times[q], &xp, uq, &mut fm);
            xp[j] = xq[j];
            for i in 0..nx {
                a[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
            }
        }
        for k in 0..p {
            let w = basis.weights[q];
            for i in 0..nx {
                jac[(k * nx + i, q * nx + i)] += w * basis.test_d[k][q];
                for j in 0..nx {
                    jac[(k * nx + i, q * nx + j)] += w * 0.5 * h * basis.test[k][q] * a[(i, j)];
                }
            }
        }
    }
    jac
}

/// Which end of a phase a condition applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum End {
    Initial,
    Final,
}

/// Boundary conditions beyond simple variable bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// The position matches `body`. The relative speed is at most
    /// `v_inf_max` (transcription units); zero imposes a rendezvous and
    /// `None` leaves the velocity free.
    AtBody {
        end: End,
        body: String,
        v_inf_max: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseObjective {
    None,
    /// Maximise the final value of one state component (the mass).
    MaxFinal(usize),
    /// Minimise `t_f − t_0`.
    MinTime,
    /// Minimise `∫ ½|u|² dt`.
    ControlEnergy,
}

/// One phase of the transcription. All quantities are in the units of its
/// dynamics.
#[derive(Clone)]
pub struct Phase {
    pub dynamics: Arc<dyn Dynamics>,
    pub mesh: Mesh,
    /// Bounds on the initial and final times.
    pub t0: (f64, f64),
    pub tf: (f64, f64),
    /// Bounds on the initial and final boundary states.
    pub x0: Vec<(f64, f64)>,
    pub xf: Vec<(f64, f64)>,
    /// Bounds on states and controls at every Gauss node.
    pub states: Vec<(f64, f64)>,
    pub controls: Vec<(f64, f64)>,
    pub boundary: Vec<BoundaryCondition>,
    pub objective: PhaseObjective,
}

impl std::fmt::Debug for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Phase")
            .field("mesh", &self.mesh)
            .field("t0", &self.t0)
            .field("tf", &self.tf)
            .field("boundary", &self.boundary)
            .field("objective", &self.objective)
            .finish_non_exhaustive()
    }
}

impl Phase {
    /// A phase with unbounded variables and fixed times.
    pub fn new(dynamics: Arc<dyn Dynamics>, mesh: Mesh, t0: f64, tf: f64) -> Self {
        let free = (f64::NEG_INFINITY, f64::INFINITY);
        let (nx, nu) = (dynamics.n_x(), dynamics.n_u());
        Self {
            dynamics,
            mesh,
            t0: (t0, t0),
            tf: (tf, tf),
            x0: vec![free; nx],
            xf: vec![free; nx],
            states: vec![free; nx],
            controls: vec![free; nu],
            boundary: Vec::new(),
            objective: PhaseObjective::None,
        }
    }

    /// Fixes the initial state.
    pub fn fix_initial(&mut self, x0: &[f64]) {
        self.x0 = x0.iter().map(|&v| (v, v)).collect();
    }

    /// Fixes the final state.
    pub fn fix_final(&mut self, xf: &[f64]) {
        self.xf = xf.iter().map(|&v| (v, v)).collect();
    }

    pub fn validate(&self) -> Result<(), DfetError> {
        self.mesh.validate()?;
        let (nx, nu) = (self.dynamics.n_x(), self.dynamics.n_u());
        if self.x0.len() != nx || self.xf.len() != nx || self.states.len() != nx || self.controls.len() != nu {
            return Err(DfetError::Invalid("bound vectors do not match the dynamics".into()));
        }
        let ordered = |b: &(f64, f64)| b.0 <= b.1;
        let all = [&self.x0, &self.xf, &self.states, &self.controls];
        if !all.iter().all(|v| v.iter().all(ordered)) || !ordered(&self.t0) || !ordered(&self.tf) {
            return Err(DfetError::Invalid("a lower bound exceeds its upper bound".into()));
        }
        if !(self.tf.1 > self.t0.0) {
            return Err(DfetError::Invalid("the final time cannot follow the initial time".into()));
        }
        if let PhaseObjective::MaxFinal(i) = self.objective {
            if i >= nx {
                return Err(DfetError::Invalid(format!("objective state index {i} out of range")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `ẋ = λx`
    struct Exponential(f64);

    impl Dynamics for Exponential {
        fn n_x(&self) -> usize {
            1
        }
        fn n_u(&self) -> usize {
            0
        }
        fn rhs(&self, _t: f64, x: &[f64], _u: &[f64], out: &mut [f64]) {
            out[0] = self.0 * x[0];
        }
    }

    /// `ẋ = 3t²`: the exact solution is a cubic.
    struct Cubic;

    impl Dynamics for Cubic {
        fn n_x(&self) -> usize {
            1
        }
        fn n_u(&self) -> usize {
            0
        }
        fn rhs(&self, t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
            out[0] = 3.0 * t * t;
        }
    }

    fn no_control(_: f64) -> Vec<f64> {
        Vec::new()
    }

    #[test]
    fn constant_solution_has_zero_residual() {
        let basis = ElementBasis::new(4);
        let dynamics = Exponential(0.0);
        let xs = vec![2.5; 4];
        let mut res = vec![1.0; 4];
        let mut xr = vec![0.0];
        let mut work = ElementWork::new(1, 4);
        element_residual(&dynamics, &basis, 0.3, 0.7, &[2.5], &xs, &[], &mut res, &mut xr, &mut work);
        assert!(res.iter().all(|r| r.abs() < 1e-14), "{res:?}");
        assert!((xr[0] - 2.5).abs() < 1e-14);
    }

    #[test]
    fn polynomial_solution_is_exact() {
        let traj = fet_solve_states(&Cubic, &Mesh::uniform(3, 4), 0.0, 1.5, &[0.2], &no_control).unwrap();
        assert!((traj.final_state()[0] - (0.2 + 1.5f64.powi(3))).abs() < 1e-12);
        for (times, states) in traj.node_times.iter().zip(&traj.node_states) {
            for (t, x) in times.iter().zip(states) {
                assert!((x - (0.2 + t.powi(3))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exponential_boundary_converges_fast() {
        let errors: Vec<f64> = [2, 4, 8]
            .iter()
            .map(|&n| {
                let t = fet_solve_states(&Exponential(-1.0), &Mesh::uniform(n, 2), 0.0, 1.0, &[1.0], &no_control).unwrap();
                (t.final_state()[0] - (-1.0f64).exp()).abs()
            })
            .collect();
        for w in errors.windows(2) {
            assert!((w[0] / w[1]).log2() >= 3.0, "{errors:?}");
        }
    }

    #[test]
    fn mesh_validation() {
        assert!(Mesh::uniform(4, 3).validate().is_ok());
        let bad = Mesh {
            boundaries: vec![0.0, 0.6, 0.5, 1.0],
            p: 3,
        };
        assert!(bad.validate().is_err());
        assert!(Mesh::uniform(2, 0).validate().is_err());
    }
}
