use nalgebra::Vector3;

use super::{CartesianState, TwoBodyError};
use crate::time::SECONDS_PER_DAY;

const MAX_ITER: usize = 100;

/// Stumpff function `C(z) = (1 - cos √z) / z`, continued to `z <= 0`.
pub fn stumpff_c(z: f64) -> f64 {
    if z > 1e-3 {
        (1.0 - z.sqrt().cos()) / z
    } else if z < -1e-3 {
        ((-z).sqrt().cosh() - 1.0) / (-z)
    } else {
        // 1/2 - z/24 + z²/720 - z³/40320 + z⁴/3628800
        0.5 - z / 24.0 + z * z / 720.0 - z.powi(3) / 40_320.0 + z.powi(4) / 3_628_800.0
    }
}

/// Stumpff function `S(z) = (√z - sin √z) / √z³`, continued to `z <= 0`.
pub fn stumpff_s(z: f64) -> f64 {
    if z > 1e-3 {
        let sz = z.sqrt();
        (sz - sz.sin()) / (sz * z)
    } else if z < -1e-3 {
        let sz = (-z).sqrt();
        (sz.sinh() - sz) / (sz * -z)
    } else {
        1.0 / 6.0 - z / 120.0 + z * z / 5040.0 - z.powi(3) / 362_880.0 + z.powi(4) / 39_916_800.0
    }
}

/// Propagates a two-body state by `dt` seconds using the universal-variable
/// formulation (valid for every conic). The returned epoch is advanced by
/// `dt` converted to days.
pub fn kepler_propagate(
    state: &CartesianState,
    dt: f64,
    mu: f64,
) -> Result<CartesianState, TwoBodyError> {
    if dt == 0.0 {
        return Ok(state.clone());
    }
    let (r, v) = propagate_rv(&state.r, &state.v, dt, mu)?;
    Ok(CartesianState {
        r,
        v,
        t: state.t + dt / SECONDS_PER_DAY,
        center: state.center.clone(),
    })
}

pub(crate) fn propagate_rv(
    r0: &Vector3<f64>,
    v0: &Vector3<f64>,
    dt: f64,
    mu: f64,
) -> Result<(Vector3<f64>, Vector3<f64>), TwoBodyError> {
    let r0n = r0.norm();
    if !(r0n > 0.0) {
        return Err(TwoBodyError::Degenerate("zero position vector"));
    }
    let sqrt_mu = mu.sqrt();
    let rdotv = r0.dot(v0);
    let alpha = 2.0 / r0n - v0.norm_squared() / mu;

    // Whole periods are removed for ellipses to keep the universal anomaly small.
    let mut t = dt;
    if alpha > 1e-14 {
        let period = std::f64::consts::TAU / (alpha.powi(3) * mu).sqrt();
        if t.abs() > period {
            t %= period;
        }
    }
    if t == 0.0 {
        return Ok((*r0, *v0));
    }

    let sigma0 = rdotv / sqrt_mu;
    let universal = |chi: f64| {
        let z = alpha * chi * chi;
        let c = stumpff_c(z);
        let s = stumpff_s(z);
        let f = sigma0 * chi * chi * c + (1.0 - alpha * r0n) * chi.powi(3) * s + r0n * chi
            - sqrt_mu * t;
        let df = sigma0 * chi * (1.0 - z * s) + (1.0 - alpha * r0n) * chi * chi * c + r0n;
        let ddf = sigma0 * (1.0 - z * c) + (1.0 - alpha * r0n) * chi * (1.0 - z * s);
        (f, df, ddf)
    };

    let mut chi = if alpha > 1e-14 {
        sqrt_mu * t * alpha
    } else if alpha < -1e-14 {
        let a = 1.0 / alpha;
        let sign = t.signum();
        let arg = -2.0 * mu * alpha * t
            / (rdotv + sign * (-mu * a).sqrt() * (1.0 - r0n * alpha));
        if arg > 0.0 {
            sign * (-a).sqrt() * arg.ln()
        } else {
            sqrt_mu * t / r0n
        }
    } else {
        sqrt_mu * t / r0n
    };

    // Laguerre iteration (n = 5) converges from poor starters on every conic.
    let n: f64 = 5.0;
    let mut converged = false;
    let mut last_f = f64::INFINITY;
    for _ in 0..MAX_ITER {
        let (f, df, ddf) = universal(chi);
        last_f = f;
        let disc = ((n - 1.0).powi(2) * df * df - n * (n - 1.0) * f * ddf).abs().sqrt();
        let denom = if df >= 0.0 { df + disc } else { df - disc };
        let step = n * f / denom;
        chi -= step;
        if step.abs() <= 1e-15 * chi.abs().max(1e-8) {
            converged = true;
            break;
        }
    }
    if !converged {
        let (f, _, _) = universal(chi);
        if f.abs() > 1e-9 * sqrt_mu * t.abs().max(1.0) {
            return Err(TwoBodyError::KeplerNotConverged {
                iterations: MAX_ITER,
                residual: last_f / sqrt_mu,
            });
        }
    }

    let z = alpha * chi * chi;
    let c = stumpff_c(z);
    let s = stumpff_s(z);
    let f = 1.0 - chi * chi * c / r0n;
    let g = t - chi.powi(3) * s / sqrt_mu;
    let r = r0 * f + v0 * g;
    let rn = r.norm();
    let fdot = sqrt_mu / (rn * r0n) * chi * (z * s - 1.0);
    let gdot = 1.0 - chi * chi * c / rn;
    Ok((r, r0 * fdot + v0 * gdot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::TAU;

    const MU_SUN: f64 = 1.327_124_400_18e11;
    const MU_J: f64 = 1.266_865_34e8;

    fn state(r: [f64; 3], v: [f64; 3]) -> CartesianState {
        CartesianState::new(Vector3::from(r), Vector3::from(v), 0.0, "sun")
    }

    #[test]
    fn zero_dt_is_identity() {
        let s = state([1e8, 2e7, 3e6], [1.0, 25.0, 0.3]);
        assert_eq!(kepler_propagate(&s, 0.0, MU_SUN).unwrap(), s);
    }

    #[test]
    fn circular_orbit_returns_after_one_period() {
        let r = 1.5e8;
        let v = (MU_SUN / r).sqrt();
        let s = state([r, 0.0, 0.0], [0.0, v, 0.0]);
        let period = TAU * (r.powi(3) / MU_SUN).sqrt();
        let out = kepler_propagate(&s, period, MU_SUN).unwrap();
        assert!((out.r - s.r).norm() < 1e-6);
        let half = kepler_propagate(&s, period / 2.0, MU_SUN).unwrap();
        assert!((half.r + s.r).norm() < 1e-5);
    }

    #[test]
    fn hyperbolic_speed_follows_vis_viva() {
        // v_inf = 4.22 km/s at Jupiter, started near pericentre and flown out.
        let rp = 1.0e6;
        let vinf: f64 = 4.22;
        let vp = (vinf * vinf + 2.0 * MU_J / rp).sqrt();
        let s = state([rp, 0.0, 0.0], [0.0, vp, 0.0]);
        let mut t = 0.0;
        let mut out = s.clone();
        while out.r.norm() < 4.82e7 {
            t += 86_400.0;
            out = kepler_propagate(&s, t, MU_J).unwrap();
        }
        let r = out.r.norm();
        assert_relative_eq!(
            out.v.norm(),
            (vinf * vinf + 2.0 * MU_J / r).sqrt(),
            max_relative = 1e-10
        );
        // At the sphere of influence radius itself:
        let at_soi = (vinf * vinf + 2.0 * MU_J / 4.82e7).sqrt();
        assert!((at_soi - 4.8).abs() < 0.05);
    }

    #[test]
    fn invariants_conserved_on_all_conics() {
        let cases = [
            ([1.2e8, -3.0e7, 1.0e6], [5.0, 31.0, 1.0], MU_SUN),   // ellipse
            ([7.0e5, 0.0, 0.0], [0.0, 24.0, 3.0], MU_J),          // hyperbola
            ([1.0e6, 0.0, 0.0], [0.0, (2.0 * MU_J / 1.0e6_f64).sqrt(), 0.0], MU_J), // parabola
        ];
        for (r, v, mu) in cases {
            let s = state(r, v);
            let e0 = s.specific_energy(mu);
            let h0 = s.angular_momentum();
            for k in [-3.0, -0.7, 0.1, 1.0, 5.0, 40.0] {
                let out = kepler_propagate(&s, k * 86_400.0, mu).unwrap();
                let e = out.specific_energy(mu);
                let scale = e0.abs().max(0.5 * s.v.norm_squared());
                assert!((e - e0).abs() / scale < 1e-10, "energy drift {} {}", e, e0);
                assert!((out.angular_momentum() - h0).norm() / h0.norm() < 1e-10);
            }
        }
    }

    #[test]
    fn forward_then_backward_recovers_state() {
        let s = state([1.2e8, -3.0e7, 1.0e6], [5.0, 31.0, 1.0]);
        let f = kepler_propagate(&s, 1.0e7, MU_SUN).unwrap();
        let b = kepler_propagate(&f, -1.0e7, MU_SUN).unwrap();
        assert!((b.r - s.r).norm() < 1e-4);
        assert!((b.v - s.v).norm() < 1e-10);
    }

    #[test]
    fn stumpff_series_is_continuous() {
        for z in [-1.0001e-3, 1.0001e-3] {
            let inner = z * 0.9999;
            assert_relative_eq!(stumpff_c(z), stumpff_c(inner), max_relative = 1e-6);
            assert_relative_eq!(stumpff_s(z), stumpff_s(inner), max_relative = 1e-6);
        }
    }
}
