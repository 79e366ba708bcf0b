use std::f64::consts::PI;

use nalgebra::Vector3;

use super::TwoBodyError;
use crate::bodies::Body;

/// An unpowered linked-conic flyby.
#[derive(Debug, Clone, PartialEq)]
pub struct SwingBy {
    pub body: String,
    /// Incoming relative velocity, km/s.
    pub v_in_rel: Vector3<f64>,
    /// Outgoing relative velocity, km/s.
    pub v_out_rel: Vector3<f64>,
    /// Pericentre radius, km.
    pub r_p: f64,
    /// Deflection angle, rad.
    pub beta: f64,
    /// Orientation of the rotation plane about `v_in_rel`, rad.
    pub plane_angle: f64,
}

impl SwingBy {
    /// Builds the flyby of `body` at pericentre radius `r_p`, rejecting
    /// pericentres below the body's floor.
    pub fn new(
        body: &Body,
        v_in_rel: Vector3<f64>,
        v_body: &Vector3<f64>,
        r_p: f64,
        plane_angle: f64,
    ) -> Result<Self, TwoBodyError> {
        let floor = body.min_periapsis();
        if r_p < floor {
            return Err(TwoBodyError::BelowFloor {
                body: body.id.clone(),
                r_p,
                floor,
            });
        }
        let speed = v_in_rel.norm();
        if speed == 0.0 {
            return Err(TwoBodyError::Degenerate("zero relative velocity"));
        }
        let beta = swingby_deflection(speed, r_p, body.mu);
        let v_out_rel = swingby_apply(&v_in_rel, beta, plane_angle, v_body);
        Ok(Self {
            body: body.id.clone(),
            v_in_rel,
            v_out_rel,
            r_p,
            beta,
            plane_angle,
        })
    }
}

/// Deflection of the relative velocity for a hyperbolic flyby, rad.
pub fn swingby_deflection(v_rel: f64, r_p: f64, mu: f64) -> f64 {
    2.0 * (mu / (v_rel * v_rel * r_p + mu)).asin()
}

/// Pericentre radius that produces deflection `beta` at relative speed
/// `v_rel`. Returns infinity for `beta <= 0`.
pub fn periapsis_for_deflection(v_rel: f64, beta: f64, mu: f64) -> f64 {
    if beta <= 0.0 {
        return f64::INFINITY;
    }
    let s = (0.5 * beta.min(PI)).sin();
    mu * (1.0 / s - 1.0) / (v_rel * v_rel)
}

/// Rotates `v_in_rel` by `beta` in the plane selected by `plane_angle`.
///
/// `plane_angle = 0` rotates toward `v_in_rel × reference`; the angle is
/// measured about `v_in_rel`. `reference` is normally the flyby body's
/// velocity. When it is parallel to `v_in_rel` an arbitrary perpendicular
/// is used instead.
pub fn swingby_apply(
    v_in_rel: &Vector3<f64>,
    beta: f64,
    plane_angle: f64,
    reference: &Vector3<f64>,
) -> Vector3<f64> {
    let speed = v_in_rel.norm();
    if speed == 0.0 {
        return *v_in_rel;
    }
    let e1 = v_in_rel / speed;
    let e2 = perpendicular(&e1, reference);
    let e3 = e1.cross(&e2);
    let (sb, cb) = beta.sin_cos();
    let (sp, cp) = plane_angle.sin_cos();
    let dir = e1 * cb + (e2 * cp + e3 * sp) * sb;
    dir.normalize() * speed
}

fn perpendicular(e1: &Vector3<f64>, reference: &Vector3<f64>) -> Vector3<f64> {
    let c = e1.cross(reference);
    if c.norm() > 1e-12 * reference.norm().max(1e-300) && reference.norm() > 0.0 {
        return c.normalize();
    }
    let trial = if e1.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    e1.cross(&trial).normalize()
}

/// Transfer time of `2m + 1` half-ellipses between circular radii, seconds.
pub fn hohmann_time(a_a: f64, a_b: f64, m: u32, mu: f64) -> f64 {
    (2 * m + 1) as f64 * PI * ((a_a + a_b).powi(3) / (8.0 * mu)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::SECONDS_PER_DAY;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn earth_flyby_deflection() {
        let beta = swingby_deflection(12.26, 6378.137 + 300.0, 398_600.441_8);
        assert!((beta.to_degrees() - 33.03).abs() < 0.05);
    }

    #[test]
    fn deflection_limits() {
        assert!(swingby_deflection(5.0, 1e15, 3.0e5) < 1e-9);
        assert!((swingby_deflection(1e-9, 7000.0, 3.0e5) - PI).abs() < 1e-6);
    }

    #[test]
    fn deflection_inverse() {
        let mu = 9887.834;
        for &(v, rp) in &[(6.6, 2831.2), (1.0, 10_000.0), (12.0, 3000.0)] {
            let beta = swingby_deflection(v, rp, mu);
            assert_relative_eq!(periapsis_for_deflection(v, beta, mu), rp, max_relative = 1e-10);
        }
    }

    #[test]
    fn apply_special_cases() {
        let v = Vector3::new(3.0, -1.0, 0.5);
        let planet = Vector3::new(0.0, 30.0, 0.0);
        assert_eq!(swingby_apply(&v, 0.0, 0.7, &planet), v);
        let out = swingby_apply(&v, PI / 2.0, 1.3, &planet);
        assert!(out.dot(&v).abs() < 1e-12 * v.norm_squared());
        // plane_angle = 0 turns toward v × planet.
        let out0 = swingby_apply(&v, 0.3, 0.0, &planet);
        assert!((out0 - v).dot(&v.cross(&planet)) > 0.0);
    }

    #[test]
    fn hohmann_earth_venus() {
        let dt = hohmann_time(1.496e8, 1.0821e8, 0, 1.327_12e11) / SECONDS_PER_DAY;
        assert!((dt - 146.0).abs() < 1.0, "{dt}");
        let one = hohmann_time(1.496e8, 1.0821e8, 1, 1.327_12e11);
        assert_relative_eq!(one, 3.0 * dt * SECONDS_PER_DAY, max_relative = 1e-14);
        let a: f64 = 7000.0;
        let mu = 398_600.441_8;
        let half_period = PI * (a * a * a / mu).sqrt();
        assert_relative_eq!(hohmann_time(a, a, 2, mu), 5.0 * half_period, max_relative = 1e-14);
    }

    fn vec3() -> impl Strategy<Value = Vector3<f64>> {
        (-50.0..50.0_f64, -50.0..50.0_f64, -50.0..50.0_f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn apply_preserves_modulus_and_cone(v in vec3(), r in vec3(), beta in 0.0..PI, psi in -PI..PI) {
            prop_assume!(v.norm() > 1e-3);
            let out = swingby_apply(&v, beta, psi, &r);
            let n2 = v.norm_squared();
            prop_assert!((out.norm() - v.norm()).abs() <= 4.0 * f64::EPSILON * v.norm());
            prop_assert!((out.dot(&v) - n2 * beta.cos()).abs() < 1e-9 * n2);
        }

        #[test]
        fn deflection_strictly_decreasing(v in 0.1..30.0_f64, rp in 1000.0..1e7_f64, f in 1.01..3.0_f64) {
            let mu = 3.0e5;
            let b = swingby_deflection(v, rp, mu);
            prop_assert!(swingby_deflection(v * f, rp, mu) < b);
            prop_assert!(swingby_deflection(v, rp * f, mu) < b);
            prop_assert!(b > 0.0 && b < PI);
        }
    }
}
