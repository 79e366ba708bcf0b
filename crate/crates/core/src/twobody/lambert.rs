//! Lambert's problem via Izzo's non-dimensional time-of-flight equation in the
//! variable `x`, solved with Householder iterations. Multi-revolution arcs
//! have two solutions per revolution count, selected with [`Branch`].

use std::f64::consts::PI;

use nalgebra::Vector3;

use super::TwoBodyError;

const X_TOL: f64 = 1e-14;
const MAX_ITER: usize = 40;

/// Which of the two multi-revolution solutions to return. Ignored when
/// `nrev == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// Larger semi-major axis side of the minimum-time point (`x` closer to -1).
    Left,
    /// Smaller semi-major axis side (`x` closer to +1).
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambertArc {
    pub r1: Vector3<f64>,
    pub r2: Vector3<f64>,
    /// seconds
    pub tof: f64,
    pub nrev: u32,
    pub branch: Branch,
    pub v1: Vector3<f64>,
    pub v2: Vector3<f64>,
}

/// Prograde Lambert arc about the `+z` axis of the input frame.
pub fn lambert(
    r1: &Vector3<f64>,
    r2: &Vector3<f64>,
    tof: f64,
    mu: f64,
    nrev: u32,
    branch: Branch,
) -> Result<LambertArc, TwoBodyError> {
    lambert_in_plane(r1, r2, tof, mu, nrev, branch, &Vector3::z())
}

/// Lambert arc whose motion is prograde about `normal`. When `r1` and `r2`
/// are collinear the transfer plane is the one containing `r1` and
/// perpendicular to `normal` (pass the departure body's orbit normal).
pub fn lambert_in_plane(
    r1: &Vector3<f64>,
    r2: &Vector3<f64>,
    tof: f64,
    mu: f64,
    nrev: u32,
    branch: Branch,
    normal: &Vector3<f64>,
) -> Result<LambertArc, TwoBodyError> {
    if !(tof > 0.0) || !tof.is_finite() {
        return Err(TwoBodyError::Degenerate("time of flight must be positive"));
    }
    let geo = Geometry::new(r1, r2, tof, mu, normal)?;
    let max_revs = geo.max_revolutions();
    if nrev > max_revs {
        return Err(TwoBodyError::NoSolution {
            nrev,
            tof,
            max_revs,
        });
    }
    let x = geo.solve_x(nrev, branch)?;
    let (v1, v2) = geo.velocities(x);
    Ok(LambertArc {
        r1: *r1,
        r2: *r2,
        tof,
        nrev,
        branch,
        v1,
        v2,
    })
}

/// Largest revolution count for which a solution exists.
pub fn lambert_max_revolutions(
    r1: &Vector3<f64>,
    r2: &Vector3<f64>,
    tof: f64,
    mu: f64,
) -> Result<u32, TwoBodyError> {
    Ok(Geometry::new(r1, r2, tof, mu, &Vector3::z())?.max_revolutions())
}

struct Geometry {
    lambda: f64,
    t: f64,
    r1n: f64,
    r2n: f64,
    c: f64,
    s: f64,
    mu: f64,
    ir1: Vector3<f64>,
    ir2: Vector3<f64>,
    it1: Vector3<f64>,
    it2: Vector3<f64>,
}

impl Geometry {
    fn new(
        r1: &Vector3<f64>,
        r2: &Vector3<f64>,
        tof: f64,
        mu: f64,
        normal: &Vector3<f64>,
    ) -> Result<Self, TwoBodyError> {
        let r1n = r1.norm();
        let r2n = r2.norm();
        let c = (r2 - r1).norm();
        if r1n == 0.0 || r2n == 0.0 {
            return Err(TwoBodyError::Degenerate("zero position vector"));
        }
        if c <= 1e-12 * r1n {
            return Err(TwoBodyError::Degenerate("coincident endpoints"));
        }
        let s = 0.5 * (c + r1n + r2n);
        let ir1 = r1 / r1n;
        let ir2 = r2 / r2n;
        let cross = ir1.cross(&ir2);
        let (ih, lambda_sign) = if cross.norm() > 1e-10 {
            let ih = cross.normalize();
            (ih, if ih.dot(normal) < 0.0 { -1.0 } else { 1.0 })
        } else {
            let n = normal - ir1 * normal.dot(&ir1);
            if n.norm() < 1e-12 {
                return Err(TwoBodyError::Degenerate(
                    "collinear endpoints and reference normal",
                ));
            }
            (n.normalize(), 1.0)
        };
        let lambda = lambda_sign * (1.0 - c / s).max(0.0).sqrt();
        let (it1, it2) = if lambda_sign < 0.0 {
            (ir1.cross(&ih), ir2.cross(&ih))
        } else {
            (ih.cross(&ir1), ih.cross(&ir2))
        };
        Ok(Self {
            lambda,
            t: (2.0 * mu / s.powi(3)).sqrt() * tof,
            r1n,
            r2n,
            c,
            s,
            mu,
            ir1,
            ir2,
            it1: it1.normalize(),
            it2: it2.normalize(),
        })
    }

    fn max_revolutions(&self) -> u32 {
        let lambda = self.lambda;
        let t = self.t;
        let mut n_max = (t / PI).floor() as u32;
        let t00 = lambda.acos() + lambda * (1.0 - lambda * lambda).sqrt();
        let t0 = t00 + n_max as f64 * PI;
        if n_max > 0 && t < t0 {
            // Locate the minimum time for n_max revolutions with Halley steps.
            let mut x_old = 0.0;
            let mut t_min = t0;
            for _ in 0..12 {
                let (dt, ddt, dddt) = self.derivatives(x_old, t_min);
                if dt == 0.0 {
                    break;
                }
                let x_new = x_old - dt * ddt / (ddt * ddt - dt * dddt / 2.0);
                let err = (x_old - x_new).abs();
                t_min = self.tof_of_x(x_new, n_max);
                x_old = x_new;
                if err < 1e-13 {
                    break;
                }
            }
            if t_min > t {
                n_max -= 1;
            }
        }
        n_max
    }

    fn solve_x(&self, nrev: u32, branch: Branch) -> Result<f64, TwoBodyError> {
        let lambda = self.lambda;
        let l2 = lambda * lambda;
        let t = self.t;
        let x0 = if nrev == 0 {
            let t00 = lambda.acos() + lambda * (1.0 - l2).sqrt();
            let t1 = 2.0 / 3.0 * (1.0 - l2 * lambda);
            if t >= t00 {
                -(t - t00) / (t - t00 + 4.0)
            } else if t <= t1 {
                t1 * (t1 - t) / (0.4 * (1.0 - l2 * l2 * lambda) * t) + 1.0
            } else {
                (t / t00).powf(std::f64::consts::LN_2 / (t1 / t00).ln()) - 1.0
            }
        } else {
            let n = nrev as f64;
            match branch {
                Branch::Left => {
                    let tmp = ((n * PI + PI) / (8.0 * t)).powf(2.0 / 3.0);
                    (tmp - 1.0) / (tmp + 1.0)
                }
                Branch::Right => {
                    let tmp = (8.0 * t / (n * PI)).powf(2.0 / 3.0);
                    (tmp - 1.0) / (tmp + 1.0)
                }
            }
        };
        let x = self.householder(x0, nrev);
        let residual = self.tof_of_x(x, nrev) - t;
        if !x.is_finite() || residual.abs() > 1e-9 * t.max(1.0) {
            return Err(TwoBodyError::LambertNotConverged(residual));
        }
        Ok(x)
    }

    fn householder(&self, mut x: f64, nrev: u32) -> f64 {
        for _ in 0..MAX_ITER {
            let tof = self.tof_of_x(x, nrev);
            let (dt, ddt, dddt) = self.derivatives(x, tof);
            let delta = tof - self.t;
            let dt2 = dt * dt;
            let x_new = x
                - delta * (dt2 - delta * ddt / 2.0)
                    / (dt * (dt2 - delta * ddt) + dddt * delta * delta / 6.0);
            let err = (x - x_new).abs();
            x = x_new;
            if err < X_TOL || !x.is_finite() {
                break;
            }
        }
        x
    }

    fn derivatives(&self, x: f64, t: f64) -> (f64, f64, f64) {
        let l2 = self.lambda * self.lambda;
        let l3 = l2 * self.lambda;
        let umx2 = 1.0 - x * x;
        let y = (1.0 - l2 * umx2).sqrt();
        let y2 = y * y;
        let y3 = y2 * y;
        let dt = 1.0 / umx2 * (3.0 * t * x - 2.0 + 2.0 * l3 * x / y);
        let ddt = 1.0 / umx2 * (3.0 * t + 5.0 * x * dt + 2.0 * (1.0 - l2) * l3 / y3);
        let dddt = 1.0 / umx2 * (7.0 * x * ddt + 8.0 * dt - 6.0 * (1.0 - l2) * l2 * l3 * x / y3 / y2);
        (dt, ddt, dddt)
    }

    fn tof_of_x(&self, x: f64, nrev: u32) -> f64 {
        let lambda = self.lambda;
        let n = nrev as f64;
        let dist = (x - 1.0).abs();
        if dist < 0.2 && dist > 0.01 {
            return self.tof_lagrange(x, nrev);
        }
        let k = lambda * lambda;
        let e = x * x - 1.0;
        let rho = e.abs();
        let z = (1.0 + k * e).sqrt();
        if dist < 0.01 {
            // Battin's series near the parabola.
            let eta = z - lambda * x;
            let s1 = 0.5 * (1.0 - lambda - x * eta);
            let q = 4.0 / 3.0 * hypergeometric_f(s1, 1e-11);
            (eta.powi(3) * q + 4.0 * lambda * eta) / 2.0 + n * PI / rho.powf(1.5)
        } else {
            let y = rho.sqrt();
            let g = x * z - lambda * e;
            let d = if e < 0.0 {
                n * PI + g.clamp(-1.0, 1.0).acos()
            } else {
                let f = y * (z - lambda * x);
                (f + g).ln()
            };
            (x - lambda * z - d / y) / e
        }
    }

    fn tof_lagrange(&self, x: f64, nrev: u32) -> f64 {
        let lambda = self.lambda;
        let a = 1.0 / (1.0 - x * x);
        if a > 0.0 {
            let alfa = 2.0 * x.acos();
            let mut beta = 2.0 * (lambda * lambda / a).sqrt().asin();
            if lambda < 0.0 {
                beta = -beta;
            }
            a * a.sqrt() * ((alfa - alfa.sin()) - (beta - beta.sin()) + 2.0 * PI * nrev as f64) / 2.0
        } else {
            let alfa = 2.0 * x.acosh();
            let mut beta = 2.0 * (-lambda * lambda / a).sqrt().asinh();
            if lambda < 0.0 {
                beta = -beta;
            }
            -a * (-a).sqrt() * ((beta - beta.sinh()) - (alfa - alfa.sinh())) / 2.0
        }
    }

    fn velocities(&self, x: f64) -> (Vector3<f64>, Vector3<f64>) {
        let lambda = self.lambda;
        let l2 = lambda * lambda;
        let gamma = (self.mu * self.s / 2.0).sqrt();
        let rho = (self.r1n - self.r2n) / self.c;
        let sigma = (1.0 - rho * rho).max(0.0).sqrt();
        let y = (1.0 - l2 + l2 * x * x).sqrt();
        let vr1 = gamma * ((lambda * y - x) - rho * (lambda * y + x)) / self.r1n;
        let vr2 = -gamma * ((lambda * y - x) + rho * (lambda * y + x)) / self.r2n;
        let vt = gamma * sigma * (y + lambda * x);
        let v1 = self.ir1 * vr1 + self.it1 * (vt / self.r1n);
        let v2 = self.ir2 * vr2 + self.it2 * (vt / self.r2n);
        (v1, v2)
    }
}

fn hypergeometric_f(z: f64, tol: f64) -> f64 {
    let mut sj = 1.0;
    let mut cj = 1.0;
    let mut j = 0.0;
    loop {
        let cj1 = cj * (3.0 + j) * (1.0 + j) / (2.5 + j) * z / (j + 1.0);
        sj += cj1;
        cj = cj1;
        j += 1.0;
        if cj1.abs() <= tol || j > 1000.0 {
            return sj;
        }
    }
}
