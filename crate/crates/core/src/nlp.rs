//! Dense bound- and nonlinearly-constrained local minimisation.
//!
//! Augmented Lagrangian outer iterations (multiplier and penalty updates in
//! the LANCELOT style) around a bound-constrained projected Newton inner
//! solver. The inner Hessian is a damped BFGS approximation of the
//! Lagrangian Hessian plus the Gauss-Newton penalty term `ρ·JᵀJ`.
//! Derivatives come from central differences unless the problem supplies
//! them.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NlpError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("objective or constraints are not finite at the initial point")]
    NotFinite,
}

/// A smooth problem `min f(x)` subject to `h(x) = 0`, `g(x) ≥ 0` and bounds.
pub trait NlpProblem: Sync {
    fn dim(&self) -> usize;

    fn n_eq(&self) -> usize {
        0
    }

    fn n_ineq(&self) -> usize {
        0
    }

    /// Objective. Return a non-finite value where the model is undefined.
    fn objective(&self, x: &[f64]) -> f64;

    /// Writes `h(x)` into `eq` and `g(x)` into `ineq`.
    fn constraints(&self, _x: &[f64], _eq: &mut [f64], _ineq: &mut [f64]) {}

    /// Objective and constraints in one pass. Override when they share work.
    fn evaluate(&self, x: &[f64], eq: &mut [f64], ineq: &mut [f64]) -> f64 {
        self.constraints(x, eq, ineq);
        self.objective(x)
    }

    /// Analytic objective gradient, if available.
    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Analytic constraint Jacobian (equality rows first), if available.
    fn jacobian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NlpOptions {
    /// Largest acceptable constraint violation.
    pub feasibility_tol: f64,
    /// Largest acceptable projected-gradient norm in scaled variables.
    pub stationarity_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub initial_penalty: f64,
    pub max_penalty: f64,
    /// Relative central-difference step in scaled variables.
    pub fd_step: f64,
}

impl Default for NlpOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-8,
            stationarity_tol: 1e-6,
            max_outer: 60,
            max_inner: 300,
            initial_penalty: 10.0,
            max_penalty: 1e12,
            fd_step: 6e-6,
        }
    }
}

/// Bounds, scaling and options for [`minimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct NlpSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Typical magnitude of each variable; the solver works on `x / scale`.
    pub scale: Vec<f64>,
    pub options: NlpOptions,
}

impl NlpSpec {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            scale: vec![1.0; n],
            options: NlpOptions::default(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), NlpError> {
        if self.lower.len() != n || self.upper.len() != n || self.scale.len() != n {
            return Err(NlpError::Invalid(format!("bounds and scaling must have length {n}")));
        }
        if let Some(i) = (0..n).find(|&i| !(self.lower[i] <= self.upper[i])) {
            return Err(NlpError::Invalid(format!("lower bound exceeds upper bound at {i}")));
        }
        if !(self.options.fd_step > 0.0) {
            return Err(NlpError::Invalid("fd_step must be positive".into()));
        }
        if self.scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(NlpError::Invalid("scaling must be positive and finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpReport {
    pub converged: bool,
    pub objective: f64,
    /// Max of equality residuals, inequality and bound violations at `x`.
    pub feasibility: f64,
    /// Projected Lagrangian gradient norm in scaled variables.
    pub stationarity: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub evaluations: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpSolution {
    pub x: Vec<f64>,
    pub multipliers_eq: Vec<f64>,
    pub multipliers_ineq: Vec<f64>,
    pub report: NlpReport,
}

struct Point {
    z: DVector<f64>,
    f: f64,
    ce: DVector<f64>,
    ci: DVector<f64>,
}

struct Derivs {
    grad: DVector<f64>,
    /// Rows: equalities then inequalities, in scaled variables.
    jac: DMatrix<f64>,
}

struct Ctx<'a, P: NlpProblem> {
    p: &'a P,
    scale: DVector<f64>,
    lo: DVector<f64>,
    hi: DVector<f64>,
    me: usize,
    mi: usize,
    fd_step: f64,
    evals: std::sync::atomic::AtomicUsize,
}

impl<P: NlpProblem> Ctx<'_, P> {
    fn x_of(&self, z: &DVector<f64>) -> Vec<f64> {
        z.component_mul(&self.scale).iter().copied().collect()
    }

    fn raw(&self, z: &DVector<f64>) -> (f64, Vec<f64>, Vec<f64>) {
        self.evals.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let x = self.x_of(z);
        let mut ce = vec![0.0; self.me];
        let mut ci = vec![0.0; self.mi];
        let f = self.p.evaluate(&x, &mut ce, &mut ci);
        (f, ce, ci)
    }

    fn eval(&self, z: &DVector<f64>) -> Option<Point> {
        let (f, ce, ci) = self.raw(z);
        let finite = f.is_finite() && ce.iter().chain(&ci).all(|v| v.is_finite());
        finite.then(|| Point {
            z: z.clone(),
            f,
            ce: DVector::from_vec(ce),
            ci: DVector::from_vec(ci),
        })
    }

    fn project(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(z.len(), (0..z.len()).map(|i| z[i].clamp(self.lo[i], self.hi[i])))
    }

    fn derivs(&self, pt: &Point) -> Derivs {
        let n = pt.z.len();
        let m = self.me + self.mi;
        let x = self.x_of(&pt.z);
        let grad_a = self.p.gradient(&x);
        let jac_a = self.p.jacobian(&x);
        let need_fd = grad_a.is_none() || (jac_a.is_none() && m > 0);
        let columns: Vec<(f64, DVector<f64>)> = if need_fd {
            (0..n)
                .into_par_iter()
                .map(|j| self.fd_column(pt, j))
                .collect()
        } else {
            Vec::new()
        };
        let grad = match grad_a {
            Some(g) => DVector::from_iterator(n, g.iter().zip(self.scale.iter()).map(|(g, s)| g * s)),
            None => DVector::from_iterator(n, columns.iter().map(|c| c.0)),
        };
        let jac = match jac_a {
            Some(j) => {
                let mut j = j;
                for (c, s) in self.scale.iter().enumerate() {
                    j.column_mut(c).scale_mut(*s);
                }
                j
            }
            None if m == 0 => DMatrix::zeros(0, n),
            None => DMatrix::from_fn(m, n, |r, c| columns[c].1[r]),
        };
        Derivs { grad, jac }
    }

    fn fd_column(&self, pt: &Point, j: usize) -> (f64, DVector<f64>) {
        let h = self.fd_step * pt.z[j].abs().max(1.0);
        let mut zp = pt.z.clone();
        zp[j] += h;
        let mut zm = pt.z.clone();
        zm[j] -= h;
        let stack = |f: f64, ce: Vec<f64>, ci: Vec<f64>| {
            let mut v = Vec::with_capacity(1 + ce.len() + ci.len());
            v.push(f);
            v.extend(ce);
            v.extend(ci);
            DVector::from_vec(v)
        };
        let base = {
            let mut v = Vec::with_capacity(1 + self.me + self.mi);
            v.push(pt.f);
            v.extend(pt.ce.iter());
            v.extend(pt.ci.iter());
            DVector::from_vec(v)
        };
        let (fp, cep, cip) = self.raw(&zp);
        let (fm, cem, cim) = self.raw(&zm);
        let vp = stack(fp, cep, cip);
        let vm = stack(fm, cem, cim);
        let ok = |v: &DVector<f64>| v.iter().all(|x| x.is_finite());
        let d = match (ok(&vp), ok(&vm)) {
            (true, true) => (vp - vm) / (2.0 * h),
            (true, false) => (vp - base) / h,
            (false, true) => (base - vm) / h,
            (false, false) => DVector::zeros(base.len()),
        };
        (d[0], d.rows(1, d.len() - 1).into_owned())
    }
}

struct Multipliers {
    lam: DVector<f64>,
    nu: DVector<f64>,
    rho: f64,
}

impl Multipliers {
    /// Augmented Lagrangian value.
    fn value(&self, pt: &Point) -> f64 {
        let rho = self.rho;
        let mut v = pt.f - self.lam.dot(&pt.ce) + 0.5 * rho * pt.ce.norm_squared();
        for i in 0..pt.ci.len() {
            let (g, nu) = (pt.ci[i], self.nu[i]);
            v += if g <= nu / rho {
                -nu * g + 0.5 * rho * g * g
            } else {
                -0.5 * nu * nu / rho
            };
        }
        v
    }

    /// First-order multiplier estimates at `pt`.
    fn estimates(&self, pt: &Point) -> (DVector<f64>, DVector<f64>) {
        let lam = &self.lam - &pt.ce * self.rho;
        let nu = (&self.nu - &pt.ci * self.rho).map(|v| v.max(0.0));
        (lam, nu)
    }

    /// Gradient of the Lagrangian with the given multipliers.
    fn lagrangian_grad(d: &Derivs, me: usize, lam: &DVector<f64>, nu: &DVector<f64>) -> DVector<f64> {
        let mut g = d.grad.clone();
        if d.jac.nrows() > 0 {
            let mut w = DVector::zeros(d.jac.nrows());
            w.rows_mut(0, me).copy_from(lam);
            w.rows_mut(me, nu.len()).copy_from(nu);
            g -= d.jac.tr_mul(&w);
        }
        g
    }

    /// Gradient of the augmented Lagrangian.
    fn grad(&self, pt: &Point, d: &Derivs, me: usize) -> DVector<f64> {
        let (lam, nu) = self.estimates(pt);
        Self::lagrangian_grad(d, me, &lam, &nu)
    }

    /// Rows of the constraints contributing to the penalty.
    fn active_rows(&self, pt: &Point, me: usize) -> Vec<usize> {
        let mut rows: Vec<usize> = (0..me).collect();
        rows.extend((0..pt.ci.len()).filter(|&i| pt.ci[i] <= self.nu[i] / self.rho).map(|i| me + i));
        rows
    }
}

fn violation(pt: &Point) -> f64 {
    let e = pt.ce.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    pt.ci.iter().fold(e, |a, v| a.max(-v))
}

fn projected_step_norm<P: NlpProblem>(ctx: &Ctx<P>, z: &DVector<f64>, g: &DVector<f64>) -> f64 {
    let t = ctx.project(&(z - g));
    (t - z).amax()
}

enum InnerEnd {
    Converged,
    Stalled,
    IterationCap,
}

/// Minimises `problem` from `x0` (projected onto the bounds).
pub fn minimize<P: NlpProblem>(problem: &P, spec: &NlpSpec, x0: &[f64]) -> Result<NlpSolution, NlpError> {
    let n = problem.dim();
    spec.validate(n)?;
    if x0.len() != n {
        return Err(NlpError::Invalid(format!("initial point has length {}, expected {n}", x0.len())));
    }
    let scale = DVector::from_vec(spec.scale.clone());
    let ctx = Ctx {
        p: problem,
        lo: DVector::from_iterator(n, spec.lower.iter().zip(&spec.scale).map(|(l, s)| l / s)),
        hi: DVector::from_iterator(n, spec.upper.iter().zip(&spec.scale).map(|(u, s)| u / s)),
        scale: scale.clone(),
        me: problem.n_eq(),
        mi: problem.n_ineq(),
        fd_step: spec.options.fd_step,
        evals: std::sync::atomic::AtomicUsize::new(0),
    };
    let opts = &spec.options;
    let z0 = ctx.project(&DVector::from_iterator(n, x0.iter().zip(&spec.scale).map(|(x, s)| x / s)));
    let mut pt = ctx.eval(&z0).ok_or(NlpError::NotFinite)?;
    let mut d = ctx.derivs(&pt);
    let mut mult = Multipliers {
        lam: DVector::zeros(ctx.me),
        nu: DVector::zeros(ctx.mi),
        rho: opts.initial_penalty,
    };
    let constrained = ctx.me + ctx.mi > 0;
    let mut eta = mult.rho.powf(-0.1);
    let mut omega = 1.0 / mult.rho;
    let mut b = DMatrix::<f64>::identity(n, n);
    let mut inner_total = 0;
    let mut outer = 0;
    let mut converged = false;
    let mut message = String::from("iteration limit reached");
    let mut best: Option<(f64, f64, DVector<f64>)> = None;

    while outer < opts.max_outer {
        outer += 1;
        let omega_k = if constrained {
            omega.max(opts.stationarity_tol)
        } else {
            opts.stationarity_tol
        };
        let (end, its) = inner_solve(&ctx, &mut pt, &mut d, &mult, &mut b, omega_k, opts.max_inner);
        inner_total += its;

        let viol = violation(&pt);
        let (lam_new, nu_new) = mult.estimates(&pt);
        let stat = projected_step_norm(&ctx, &pt.z, &Multipliers::lagrangian_grad(&d, ctx.me, &lam_new, &nu_new));
        let key = (viol.max(opts.feasibility_tol), pt.f);
        if best.as_ref().is_none_or(|(v, f, _)| key.0 < *v || (key.0 == *v && key.1 < *f)) {
            best = Some((key.0, key.1, pt.z.clone()));
        }
        let slack = (0..ctx.mi).fold(0.0_f64, |a, i| a.max(pt.ci[i].min(nu_new[i]).abs()));
        
        if viol <= opts.feasibility_tol && slack <= opts.feasibility_tol && stat <= opts.stationarity_tol {
            converged = true;
            message = "converged".into();
            mult.lam = lam_new;
            mult.nu = nu_new;
            break;
        }
        if !constrained {
            message = match end {
                InnerEnd::Stalled => "line search stalled".into(),
                _ => "iteration limit reached".into(),
            };
            if matches!(end, InnerEnd::Converged) {
                continue;
            }
            break;
        }
        // A complementarity measure for inequalities.
        let comp = (0..ctx.mi).fold(0.0_f64, |a, i| a.max(pt.ci[i].min(mult.nu[i] / mult.rho).abs()));
        let measure = pt.ce.amax().max(comp);
        if measure <= eta || viol <= opts.feasibility_tol {
            mult.lam = lam_new;
            mult.nu = nu_new;
            eta = (eta / mult.rho.powf(0.9)).max(0.1 * opts.feasibility_tol);
            omega = (omega / mult.rho).max(0.1 * opts.stationarity_tol);
        } else if mult.rho < opts.max_penalty {
            mult.rho = (mult.rho * 10.0).min(opts.max_penalty);
            eta = (mult.rho.powf(-0.1)).max(0.1 * opts.feasibility_tol);
            omega = (1.0 / mult.rho).max(0.1 * opts.stationarity_tol);
        } else {
            mult.lam = lam_new;
            mult.nu = nu_new;
            if matches!(end, InnerEnd::Stalled) && measure > 10.0 * eta {
                message = "penalty limit reached".into();
                break;
            }
        }
    }

    if !converged {
        if let Some((_, _, z)) = best {
            if let Some(p) = ctx.eval(&z) {
                pt = p;
                d = ctx.derivs(&pt);
            }
        }
    }
    let x = ctx.x_of(&pt.z);
    let (f, ce, ci) = ctx.raw(&pt.z);
    let bound_viol = (0..n).fold(0.0_f64, |a, i| {
        a.max(spec.lower[i] - x[i]).max(x[i] - spec.upper[i])
    });
    let feasibility = ce
        .iter()
        .fold(0.0_f64, |a, v| a.max(v.abs()))
        .max(ci.iter().fold(0.0_f64, |a, v| a.max(-v)))
        .max(bound_viol);
    let stationarity = projected_step_norm(&ctx, &pt.z, &Multipliers::lagrangian_grad(&d, ctx.me, &mult.lam, &mult.nu));
    let converged = converged && feasibility <= opts.feasibility_tol;
    Ok(NlpSolution {
        x,
        multipliers_eq: mult.lam.iter().copied().collect(),
        multipliers_ineq: mult.nu.iter().copied().collect(),
        report: NlpReport {
            converged,
            objective: f,
            feasibility,
            stationarity,
            outer_iterations: outer,
            inner_iterations: inner_total,
            evaluations: ctx.evals.load(std::sync::atomic::Ordering::Relaxed),
            message,
        },
    })
}

fn inner_solve<P: NlpProblem>(
    ctx: &Ctx<P>,
    pt: &mut Point,
    d: &mut Derivs,
    mult: &Multipliers,
    b: &mut DMatrix<f64>,
    omega: f64,
    max_inner: usize,
) -> (InnerEnd, usize) {
    let n = pt.z.len();
    let me = ctx.me;
    for it in 0..max_inner {
        let g = mult.grad(pt, d, me);
        let w = projected_step_norm(ctx, &pt.z, &g);
        if w <= omega {
            return (InnerEnd::Converged, it);
        }
        let eps = w.min(1e-3);
        let active: Vec<bool> = (0..n)
            .map(|i| (pt.z[i] <= ctx.lo[i] + eps && g[i] > 0.0) || (pt.z[i] >= ctx.hi[i] - eps && g[i] < 0.0))
            .collect();

        let rows = mult.active_rows(pt, me);
        let mut h = b.clone();
        if !rows.is_empty() {
            let ja = d.jac.select_rows(rows.iter());
            h += ja.tr_mul(&ja) * mult.rho;
        }
        let value = mult.value(pt);
        let mut accepted = None;
        for attempt in 0..2 {
            let dir = if attempt == 0 {
                newton_direction(&h, &g, &active)
            } else {
                -&g
            };
            if let Some(next) = line_search(ctx, pt, mult, value, &g, &dir) {
                accepted = Some(next);
                break;
            }
            // Fall back to a fresh curvature model.
            *b = DMatrix::identity(n, n);
        }
        let Some(next) = accepted else {
            return (InnerEnd::Stalled, it);
        };
        let d_next = ctx.derivs(&next);
        // Curvature pair of the Lagrangian at fixed multiplier estimates.
        let (lam_hat, nu_hat) = mult.estimates(&next);
        let s = &next.z - &pt.z;
        let y = Multipliers::lagrangian_grad(&d_next, me, &lam_hat, &nu_hat)
            - Multipliers::lagrangian_grad(d, me, &lam_hat, &nu_hat);
        damped_bfgs(b, &s, &y);
        *pt = next;
        *d = d_next;
    }
    (InnerEnd::IterationCap, max_inner)
}

fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>, active: &[bool]) -> DVector<f64> {
    let n = g.len();
    let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
    let mut dir = DVector::zeros(n);
    for i in 0..n {
        if active[i] {
            dir[i] = -g[i] / h[(i, i)].max(1e-12);
        }
    }
    if free.is_empty() {
        return dir;
    }
    let hff = h.select_rows(free.iter()).select_columns(free.iter());
    let gf = DVector::from_iterator(free.len(), free.iter().map(|&i| -g[i]));
    let diag_max = (0..free.len()).fold(0.0_f64, |a, i| a.max(hff[(i, i)].abs())).max(1e-300);
    let mut reg = 0.0;
    for _ in 0..30 {
        let mut m = hff.clone();
        for i in 0..free.len() {
            m[(i, i)] += reg;
        }
        if let Some(ch) = m.cholesky() {
            let sol = ch.solve(&gf);
            if sol.iter().all(|v| v.is_finite()) {
                for (k, &i) in free.iter().enumerate() {
                    dir[i] = sol[k];
                }
                return dir;
            }
        }
        reg = if reg == 0.0 { 1e-10 * diag_max } else { reg * 10.0 };
    }
    for &i in &free {
        dir[i] = -g[i];
    }
    dir
}

fn line_search<P: NlpProblem>(
    ctx: &Ctx<P>,
    pt: &Point,
    mult: &Multipliers,
    value: f64,
    g: &DVector<f64>,
    dir: &DVector<f64>,
) -> Option<Point> {
    let mut alpha = 1.0;
    for _ in 0..50 {
        let z = ctx.project(&(&pt.z + dir * alpha));
        let step = &z - &pt.z;
        let decrease = g.dot(&step);
        if step.amax() <= 1e-15 * (1.0 + pt.z.amax()) {
            return None;
        }
        if decrease < 0.0 {
            if let Some(next) = ctx.eval(&z) {
                let v = mult.value(&next);
                if v.is_finite() && v <= value + 1e-4 * decrease {
                    return Some(next);
                }
            }
        }
        alpha *= 0.5;
    }
    None
}

fn damped_bfgs(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if !(sbs > 1e-300) {
        return;
    }
    let sy = s.dot(y);
    let theta = if sy >= 0.2 * sbs {
        1.0
    } else {
        0.8 * sbs / (sbs - sy)
    };
    let r = y * theta + &bs * (1.0 - theta);
    let sr = s.dot(&r);
    if !(sr > 1e-300) || !r.iter().all(|v| v.is_finite()) {
        return;
    }
    *b -= &bs * bs.transpose() / sbs;
    *b += &r * r.transpose() / sr;
}

/// The gradient the solver uses for `problem` at `x`, in unscaled variables.
pub fn gradient<P: NlpProblem>(problem: &P, spec: &NlpSpec, x: &[f64]) -> Result<Vec<f64>, NlpError> {
    let n = problem.dim();
    spec.validate(n)?;
    let ctx = Ctx {
        p: problem,
        lo: DVector::from_element(n, f64::NEG_INFINITY),
        hi: DVector::from_element(n, f64::INFINITY),
        scale: DVector::from_vec(spec.scale.clone()),
        me: problem.n_eq(),
        mi: problem.n_ineq(),
        fd_step: spec.options.fd_step,
        evals: std::sync::atomic::AtomicUsize::new(0),
    };
    let z = DVector::from_iterator(n, x.iter().zip(&spec.scale).map(|(x, s)| x / s));
    let pt = ctx.eval(&z).ok_or(NlpError::NotFinite)?;
    let d = ctx.derivs(&pt);
    Ok(d.grad.iter().zip(&spec.scale).map(|(g, s)| g / s).collect())
}
