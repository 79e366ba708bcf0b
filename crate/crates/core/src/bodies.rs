//! Body catalog and analytic ephemerides.
//!
//! Two ephemeris models are provided. [`BodyCatalog::state_circular`] is the
//! reduced circular-coplanar model used by the phasing and tour searches: the
//! body moves on a circle of radius `a` at constant angular rate. The
//! [`BodyCatalog::state_3d`] model solves Kepler's equation on the full mean
//! element set and rotates into the parent's reference frame.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SECONDS_PER_DAY;
use crate::twobody::CartesianState;

const DEFAULT_CATALOG: &str = include_str!("../data/bodies.toml");

const KEPLER_MAX_ITER: usize = 50;
const KEPLER_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("unknown body `{0}`")]
    UnknownBody(String),
    #[error("body `{body}` references unknown parent `{parent}`")]
    UnknownParent { body: String, parent: String },
    #[error("body `{0}` has no orbital elements")]
    NoElements(String),
    #[error("invalid body `{body}`: {reason}")]
    Invalid { body: String, reason: String },
    #[error("parent graph of `{0}` does not reach the Sun")]
    Cycle(String),
    #[error("catalog parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("catalog serialization error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("cannot read catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("Kepler iteration did not converge (M = {mean_anomaly}, e = {eccentricity}, residual {residual:e})")]
    KeplerDiverged {
        mean_anomaly: f64,
        eccentricity: f64,
        residual: f64,
    },
}

/// Mean Keplerian elements referred to the parent body's frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanElements {
    /// Semi-major axis, km.
    pub a: f64,
    pub e: f64,
    /// Inclination, rad.
    pub i: f64,
    /// Longitude of the ascending node, rad.
    pub raan: f64,
    /// Argument of pericentre, rad.
    pub argp: f64,
    /// Mean anomaly at `epoch`, rad.
    pub m0: f64,
    /// Reference epoch, MJD2000 days.
    pub epoch: f64,
    /// Mean motion, rad/s. Derived from the parent's `mu` at load time.
    pub mean_motion: f64,
}

impl MeanElements {
    /// Mean longitude at the reference epoch, `raan + argp + m0`.
    pub fn mean_longitude0(&self) -> f64 {
        self.raan + self.argp + self.m0
    }

    /// Orbital period in seconds.
    pub fn period(&self) -> f64 {
        TAU / self.mean_motion
    }

    /// Unit normal of the orbital plane in the parent frame.
    pub fn plane_normal(&self) -> Vector3<f64> {
        let (si, ci) = self.i.sin_cos();
        let (so, co) = self.raan.sin_cos();
        Vector3::new(si * so, -si * co, ci)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub id: String,
    pub name: String,
    /// Gravitational parameter, km³/s².
    pub mu: f64,
    /// Equatorial radius, km.
    pub radius: f64,
    /// Lowest allowed flyby altitude above `radius`, km.
    pub min_flyby_altitude: f64,
    pub parent: String,
    /// `None` only for the root body (the Sun).
    pub elements: Option<MeanElements>,
}

impl Body {
    /// Lowest allowed flyby pericentre radius, km.
    pub fn min_periapsis(&self) -> f64 {
        self.radius + self.min_flyby_altitude
    }

    pub fn elements(&self) -> Result<&MeanElements, CatalogError> {
        self.elements
            .as_ref()
            .ok_or_else(|| CatalogError::NoElements(self.id.clone()))
    }
}

/// Position of a body in the circular-coplanar model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarState {
    /// Angular position in `[0, 2π)`, rad.
    pub theta: f64,
    /// Orbit radius, km.
    pub radius: f64,
    /// Circular speed, km/s.
    pub speed: f64,
    /// Angular rate, rad/s.
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ElementsRecord {
    a: f64,
    e: f64,
    i: f64,
    raan: f64,
    argp: f64,
    m0: f64,
    epoch: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BodyRecord {
    name: String,
    mu: f64,
    radius: f64,
    min_flyby_altitude: f64,
    parent: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    elements: Option<ElementsRecord>,
}

/// Immutable set of bodies keyed by lowercase identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyCatalog {
    bodies: BTreeMap<String, Body>,
}

pub const ROOT_BODY: &str = "sun";

impl BodyCatalog {
    /// The shipped catalog (Sun, Venus, Earth, Mars, Jupiter, Galilean moons).
    pub fn default_catalog() -> Self {
        Self::from_toml_str(DEFAULT_CATALOG).expect("shipped catalog is valid")
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CatalogError> {
        let records: BTreeMap<String, BodyRecord> = toml::from_str(text)?;
        let mut bodies = BTreeMap::new();
        for (id, rec) in &records {
            let id = id.to_ascii_lowercase();
            let parent = rec.parent.to_ascii_lowercase();
            let invalid = |reason: &str| CatalogError::Invalid {
                body: id.clone(),
                reason: reason.to_string(),
            };
            if !(rec.mu > 0.0 && rec.mu.is_finite()) {
                return Err(invalid("mu must be positive"));
            }
            if !(rec.radius > 0.0 && rec.radius.is_finite()) {
                return Err(invalid("radius must be positive"));
            }
            if !(rec.min_flyby_altitude >= 0.0) {
                return Err(invalid("min_flyby_altitude must be non-negative"));
            }
            let parent_rec = records
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case(&parent))
                .map(|(_, r)| r)
                .ok_or_else(|| CatalogError::UnknownParent {
                    body: id.clone(),
                    parent: parent.clone(),
                })?;
            let elements = match &rec.elements {
                None if id == ROOT_BODY => None,
                None => return Err(CatalogError::NoElements(id.clone())),
                Some(_) if id == ROOT_BODY => {
                    return Err(invalid("the root body cannot carry elements"))
                }
                Some(el) => {
                    if !(el.a > 0.0) {
                        return Err(invalid("semi-major axis must be positive"));
                    }
                    if !(0.0..1.0).contains(&el.e) {
                        return Err(invalid("eccentricity must lie in [0, 1)"));
                    }
                    Some(MeanElements {
                        a: el.a,
                        e: el.e,
                        i: el.i,
                        raan: el.raan,
                        argp: el.argp,
                        m0: el.m0,
                        epoch: el.epoch,
                        mean_motion: (parent_rec.mu / el.a.powi(3)).sqrt(),
                    })
                }
            };
            bodies.insert(
                id.clone(),
                Body {
                    id: id.clone(),
                    name: rec.name.clone(),
                    mu: rec.mu,
                    radius: rec.radius,
                    min_flyby_altitude: rec.min_flyby_altitude,
                    parent,
                    elements,
                },
            );
        }
        if !bodies.contains_key(ROOT_BODY) {
            return Err(CatalogError::UnknownBody(ROOT_BODY.into()));
        }
        let catalog = Self { bodies };
        for id in catalog.bodies.keys() {
            catalog.check_reaches_root(id)?;
        }
        Ok(catalog)
    }

    fn check_reaches_root(&self, id: &str) -> Result<(), CatalogError> {
        let mut current = id;
        for _ in 0..=self.bodies.len() {
            if current == ROOT_BODY {
                return Ok(());
            }
            current = &self.bodies[current].parent;
        }
        Err(CatalogError::Cycle(id.to_string()))
    }

    /// Serializes back to the catalog file format. Floats are written with
    /// the shortest representation that parses back to the same value.
    pub fn to_toml_string(&self) -> Result<String, CatalogError> {
        let records: BTreeMap<&str, BodyRecord> = self
            .bodies
            .iter()
            .map(|(id, b)| {
                let rec = BodyRecord {
                    name: b.name.clone(),
                    mu: b.mu,
                    radius: b.radius,
                    min_flyby_altitude: b.min_flyby_altitude,
                    parent: b.parent.clone(),
                    elements: b.elements.as_ref().map(|el| ElementsRecord {
                        a: el.a,
                        e: el.e,
                        i: el.i,
                        raan: el.raan,
                        argp: el.argp,
                        m0: el.m0,
                        epoch: el.epoch,
                    }),
                };
                (id.as_str(), rec)
            })
            .collect();
        Ok(toml::to_string(&records)?)
    }

    pub fn get(&self, id: &str) -> Result<&Body, CatalogError> {
        self.bodies
            .get(&id.to_ascii_lowercase())
            .ok_or_else(|| CatalogError::UnknownBody(id.to_string()))
    }

    /// Looks up a body by identifier, display name, or single-letter planet
    /// code (`E`, `V`, `M`, `J`, as used in sequence strings).
    pub fn resolve(&self, key: &str) -> Result<&Body, CatalogError> {
        let alias = match key {
            "E" => Some("earth"),
            "V" => Some("venus"),
            "M" => Some("mars"),
            "J" => Some("jupiter"),
            "S" => Some("sun"),
            _ => None,
        };
        if let Some(id) = alias {
            return self.get(id);
        }
        self.get(key).or_else(|err| {
            self.bodies
                .values()
                .find(|b| b.name.eq_ignore_ascii_case(key))
                .ok_or(err)
        })
    }

    pub fn parent_of(&self, body: &Body) -> Result<&Body, CatalogError> {
        self.bodies
            .get(&body.parent)
            .ok_or_else(|| CatalogError::UnknownParent {
                body: body.id.clone(),
                parent: body.parent.clone(),
            })
    }

    pub fn bodies(&self) -> impl Iterator<Item = &Body> {
        self.bodies.values()
    }

    /// Position and velocity of `body` relative to `center` at epoch `t`
    /// (MJD2000 days), summed along both parent chains.
    pub fn state_relative(
        &self,
        body: &Body,
        center: &Body,
        t: f64,
    ) -> Result<(Vector3<f64>, Vector3<f64>), CatalogError> {
        let (rb, vb) = self.state_from_root(body, t)?;
        let (rc, vc) = self.state_from_root(center, t)?;
        Ok((rb - rc, vb - vc))
    }

    fn state_from_root(&self, body: &Body, t: f64) -> Result<(Vector3<f64>, Vector3<f64>), CatalogError> {
        let mut r = Vector3::zeros();
        let mut v = Vector3::zeros();
        let mut b = body;
        while b.elements.is_some() {
            let s = self.state_3d(b, t)?;
            r += s.r;
            v += s.v;
            b = self.parent_of(b)?;
        }
        Ok((r, v))
    }

    /// Circular-coplanar state at epoch `t` (MJD2000 days).
    ///
    /// The angular position is the mean longitude `raan + argp + M`, wrapped
    /// to `[0, 2π)`, so that bodies with different pericentre orientations
    /// share one angular reference.
    pub fn state_circular(&self, body: &Body, t: f64) -> Result<PlanarState, CatalogError> {
        let parent = self.parent_of(body)?;
        let el = body.elements()?;
        let elapsed = (t - el.epoch) * SECONDS_PER_DAY;
        Ok(PlanarState {
            theta: wrap_two_pi(el.mean_longitude0() + el.mean_motion * elapsed),
            radius: el.a,
            speed: (parent.mu / el.a).sqrt(),
            rate: el.mean_motion,
        })
    }

    /// Full Keplerian state at epoch `t` (MJD2000 days) in the parent frame.
    pub fn state_3d(&self, body: &Body, t: f64) -> Result<CartesianState, CatalogError> {
        let parent = self.parent_of(body)?;
        let el = body.elements()?;
        let elapsed = (t - el.epoch) * SECONDS_PER_DAY;
        let mean_anomaly = el.m0 + el.mean_motion * elapsed;
        let (r, v) = elements_to_cartesian(el, mean_anomaly, parent.mu)?;
        Ok(CartesianState {
            r,
            v,
            t,
            center: parent.id.clone(),
        })
    }
}

/// Wraps an angle to `[0, 2π)`.
pub fn wrap_two_pi(angle: f64) -> f64 {
    let w = angle.rem_euclid(TAU);
    // rem_euclid can return exactly TAU for tiny negative inputs.
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Solves `M = E - e sin E` by Newton iteration from `E0 = M + e sin M`.
pub fn solve_kepler(mean_anomaly: f64, e: f64) -> Result<f64, CatalogError> {
    let m = (mean_anomaly + std::f64::consts::PI).rem_euclid(TAU) - std::f64::consts::PI;
    let mut ecc = m + e * m.sin();
    for _ in 0..KEPLER_MAX_ITER {
        let f = ecc - e * ecc.sin() - m;
        if f.abs() < KEPLER_TOL {
            return Ok(ecc + (mean_anomaly - m));
        }
        ecc -= f / (1.0 - e * ecc.cos());
    }
    let residual = ecc - e * ecc.sin() - m;
    if residual.abs() < KEPLER_TOL {
        return Ok(ecc + (mean_anomaly - m));
    }
    Err(CatalogError::KeplerDiverged {
        mean_anomaly,
        eccentricity: e,
        residual,
    })
}

/// Position and velocity from elements at the given mean anomaly.
pub fn elements_to_cartesian(
    el: &MeanElements,
    mean_anomaly: f64,
    mu: f64,
) -> Result<(Vector3<f64>, Vector3<f64>), CatalogError> {
    let ecc_anom = solve_kepler(mean_anomaly, el.e)?;
    let (se, ce) = ecc_anom.sin_cos();
    let b = el.a * (1.0 - el.e * el.e).sqrt();
    // Perifocal frame.
    let x = el.a * (ce - el.e);
    let y = b * se;
    let r = el.a * (1.0 - el.e * ce);
    let n = (mu / el.a.powi(3)).sqrt();
    let vx = -el.a * n * se * el.a / r;
    let vy = b * n * ce * el.a / r;

    let (so, co) = el.raan.sin_cos();
    let (sw, cw) = el.argp.sin_cos();
    let (si, ci) = el.i.sin_cos();
    let p = Vector3::new(co * cw - so * sw * ci, so * cw + co * sw * ci, sw * si);
    let q = Vector3::new(-co * sw - so * cw * ci, -so * sw + co * cw * ci, cw * si);
    Ok((p * x + q * y, p * vx + q * vy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn catalog() -> BodyCatalog {
        BodyCatalog::default_catalog()
    }

    #[test]
    fn ganymede_circular_speed() {
        let cat = catalog();
        let g = cat.get("ganymede").unwrap();
        let s = cat.state_circular(g, 0.0).unwrap();
        // sqrt(mu_J / a) with mu_J = 1.26686534e8, a = 1.0704e6
        let expected = (1.266_865_34e8_f64 / 1.0704e6).sqrt();
        assert_relative_eq!(s.speed, expected, max_relative = 1e-14);
        assert!((s.speed - 10.88).abs() < 0.01);
    }

    #[test]
    fn circular_angle_at_epoch_and_after_one_period() {
        let cat = catalog();
        for b in cat.bodies().filter(|b| b.elements.is_some()) {
            let el = b.elements().unwrap();
            let s0 = cat.state_circular(b, el.epoch).unwrap();
            assert_relative_eq!(s0.theta, wrap_two_pi(el.mean_longitude0()), epsilon = 1e-15);
            let s1 = cat
                .state_circular(b, el.epoch + el.period() / SECONDS_PER_DAY)
                .unwrap();
            let d = (s1.theta - s0.theta).abs();
            assert!(d.min(TAU - d) < 1e-9, "{}: {}", b.id, d);
        }
        // Moons are stored with zero node and pericentre: theta = M0.
        let io = cat.get("io").unwrap();
        assert_eq!(cat.state_circular(io, 0.0).unwrap().theta, io.elements().unwrap().m0);
    }

    #[test]
    fn wrap_stays_in_range() {
        for a in [-1e-18, -TAU, 0.0, TAU, 7.0 * TAU + 0.1, -3.0] {
            let w = wrap_two_pi(a);
            assert!((0.0..TAU).contains(&w), "{a} -> {w}");
        }
    }

    #[test]
    fn mean_motion_consistent_with_parent() {
        let cat = catalog();
        for b in cat.bodies().filter(|b| b.elements.is_some()) {
            let el = b.elements().unwrap();
            let mu = cat.parent_of(b).unwrap().mu;
            assert_relative_eq!(el.mean_motion, (mu / el.a.powi(3)).sqrt(), max_relative = 1e-12);
        }
    }

    #[test]
    fn circular_3d_matches_planar() {
        let cat = catalog();
        let eu = cat.get("europa").unwrap();
        for t in [0.0, 1.3, 17.9, 250.0] {
            let p = cat.state_circular(eu, t).unwrap();
            let s = cat.state_3d(eu, t).unwrap();
            let expected = Vector3::new(p.radius * p.theta.cos(), p.radius * p.theta.sin(), 0.0);
            assert!((s.r - expected).norm() < 1e-6, "t = {t}");
            assert_relative_eq!(s.v.norm(), p.speed, max_relative = 1e-12);
        }
    }

    #[test]
    fn earth_distance_at_j2000() {
        let cat = catalog();
        let s = cat.state_3d(cat.get("earth").unwrap(), 0.0).unwrap();
        // Earth is two days before perihelion at J2000: 0.98329 AU.
        let expected = 0.983_29 * crate::AU_KM;
        assert!((s.r.norm() / expected - 1.0).abs() < 0.01);
        assert!((s.r.norm() / 1.496e8 - 1.0).abs() < 0.02);
        assert_eq!(s.center, "sun");
    }

    #[test]
    fn kepler_residual_below_tolerance() {
        for &e in &[0.0, 0.1, 0.5, 0.9, 0.99] {
            for k in 0..50 {
                let m = -10.0 + 0.4 * k as f64;
                let ecc = solve_kepler(m, e).unwrap();
                assert!((m - (ecc - e * ecc.sin())).abs() < 1e-11, "e={e} M={m}");
            }
        }
    }

    #[test]
    fn energy_and_momentum_constant_along_orbit() {
        let cat = catalog();
        let mars = cat.get("mars").unwrap();
        let mu = cat.get("sun").unwrap().mu;
        let period_days = mars.elements().unwrap().period() / SECONDS_PER_DAY;
        let s0 = cat.state_3d(mars, 0.0).unwrap();
        let e0 = 0.5 * s0.v.norm_squared() - mu / s0.r.norm();
        let h0 = s0.r.cross(&s0.v);
        for k in 1..40 {
            let s = cat.state_3d(mars, period_days * k as f64 / 37.0).unwrap();
            let e = 0.5 * s.v.norm_squared() - mu / s.r.norm();
            assert_relative_eq!(e, e0, max_relative = 1e-10);
            assert!((s.r.cross(&s.v) - h0).norm() / h0.norm() < 1e-10);
        }
    }

    #[test]
    fn catalog_round_trip() {
        let cat = catalog();
        let text = cat.to_toml_string().unwrap();
        let back = BodyCatalog::from_toml_str(&text).unwrap();
        assert_eq!(cat, back);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let bad_key = "[sun]\nname='Sun'\nmu=1.0\nradius=1.0\nmin_flyby_altitude=0.0\nparent='sun'\ncolour='yellow'\n";
        assert!(matches!(
            BodyCatalog::from_toml_str(bad_key),
            Err(CatalogError::Parse(_))
        ));
        let bad_mu = "[sun]\nname='Sun'\nmu=-1.0\nradius=1.0\nmin_flyby_altitude=0.0\nparent='sun'\n";
        assert!(matches!(
            BodyCatalog::from_toml_str(bad_mu),
            Err(CatalogError::Invalid { .. })
        ));
        let orphan = "[sun]\nname='Sun'\nmu=1.0\nradius=1.0\nmin_flyby_altitude=0.0\nparent='sun'\n\
                      [x]\nname='X'\nmu=1.0\nradius=1.0\nmin_flyby_altitude=0.0\nparent='nowhere'\n\
                      [x.elements]\na=1.0\ne=0.0\ni=0.0\nraan=0.0\nargp=0.0\nm0=0.0\nepoch=0.0\n";
        assert!(matches!(
            BodyCatalog::from_toml_str(orphan),
            Err(CatalogError::UnknownParent { .. })
        ));
    }

    #[test]
    fn resolves_aliases() {
        let cat = catalog();
        assert_eq!(cat.resolve("E").unwrap().id, "earth");
        assert_eq!(cat.resolve("Ganymede").unwrap().id, "ganymede");
        assert!(cat.resolve("pluto").is_err());
        assert_eq!(cat.get("europa").unwrap().parent, "jupiter");
    }
}
