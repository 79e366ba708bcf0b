//! Equations of motion: central gravity, an optional third-body
//! perturbation, thrust and mass flow.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::DfetError;
use crate::bodies::{Body, BodyCatalog};
use crate::sep::{max_thrust, EngineConfig, PowerConfig};
use crate::time::SECONDS_PER_DAY;
use crate::AU_KM;

/// A first-order system `ẋ = F(t, x, u)` with optional path constraints
/// `G(t, x, u) ≥ 0`, in whatever units the transcription works in.
pub trait Dynamics: Send + Sync {
    fn n_x(&self) -> usize;

    fn n_u(&self) -> usize;

    /// Writes `F(t, x, u)` into `out`. Non-finite output marks a failure.
    fn rhs(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);

    fn n_path(&self) -> usize {
        0
    }

    fn path(&self, _t: f64, _x: &[f64], _u: &[f64], _out: &mut [f64]) {}

    /// Position and velocity of a named body at `t`, in transcription units.
    fn body_state(&self, id: &str, _t: f64) -> Result<(Vector3<f64>, Vector3<f64>), DfetError> {
        Err(DfetError::Invalid(format!("this model has no ephemeris for `{id}`")))
    }

    /// Gravitational parameter and smallest pericentre radius of a flyby
    /// body, in transcription units.
    fn flyby_body(&self, id: &str) -> Result<(f64, f64), DfetError> {
        Err(DfetError::Invalid(format!("this model has no flyby data for `{id}`")))
    }
}

/// Reference scales: km, s, kg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub length: f64,
    pub time: f64,
    pub mass: f64,
}

impl Units {
    /// Time unit chosen so that `mu` becomes 1.
    pub fn new(length: f64, mu: f64, mass: f64) -> Self {
        Self {
            length,
            time: (length.powi(3) / mu).sqrt(),
            mass,
        }
    }

    /// km/s
    pub fn velocity(&self) -> f64 {
        self.length / self.time
    }

    /// N
    pub fn force(&self) -> f64 {
        self.mass * self.length * 1e3 / (self.time * self.time)
    }

    /// Days per time unit.
    pub fn days(&self) -> f64 {
        self.time / SECONDS_PER_DAY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Central body.
    pub center: String,
    /// Third body whose attraction perturbs the motion.
    pub perturber: Option<String>,
    pub engine: EngineConfig,
    /// When present, the thrust ceiling follows the solar-array output.
    pub power: Option<PowerConfig>,
}

impl DynamicsConfig {
    pub fn new(center: impl Into<String>) -> Self {
        Self {
            center: center.into(),
            perturber: None,
            engine: EngineConfig::default(),
            power: None,
        }
    }
}

/// Spacecraft state in km, km/s and kg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    pub m: f64,
}

impl StateVector {
    pub fn to_array(&self) -> [f64; 7] {
        [self.r.x, self.r.y, self.r.z, self.v.x, self.v.y, self.v.z, self.m]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            r: Vector3::new(x[0], x[1], x[2]),
            v: Vector3::new(x[3], x[4], x[5]),
            m: x[6],
        }
    }
}

/// Index of the mass in the spacecraft state.
pub const MASS: usize = 6;

/// Point-mass spacecraft about a central body, optionally perturbed by a
/// third body, with a thrust ceiling from the engine or the solar array.
/// Controls are expressed in units of the engine's maximum thrust.
#[derive(Debug, Clone)]
pub struct SpacecraftModel {
    pub config: DynamicsConfig,
    pub units: Units,
    catalog: BodyCatalog,
    center: Body,
    root: Body,
    perturber: Option<Body>,
}

impl SpacecraftModel {
    /// Builds the model with length unit `length` km and mass unit `mass`
    /// kg; the time unit makes the central `μ` equal to one.
    pub fn new(config: DynamicsConfig, catalog: &BodyCatalog, length: f64, mass: f64) -> Result<Self, DfetError> {
        config.engine.validate()?;
        if let Some(p) = &config.power {
            p.validate()?;
        }
        if !(length > 0.0 && mass > 0.0) {
            return Err(DfetError::Invalid("length and mass units must be positive".into()));
        }
        let center = catalog.resolve(&config.center)?.clone();
        let perturber = match &config.perturber {
            Some(id) => {
                let b = catalog.resolve(id)?.clone();
                if b.id == center.id {
                    return Err(DfetError::Invalid("perturber must differ from the central body".into()));
                }
                Some(b)
            }
            None => None,
        };
        let mut root = center.clone();
        while root.elements.is_some() {
            root = catalog.parent_of(&root)?.clone();
        }
        Ok(Self {
            units: Units::new(length, center.mu, mass),
            config,
            catalog: catalog.clone(),
            center,
            root,
            perturber,
        })
    }

    /// Heliocentric (root-relative) position of a point given relative to
    /// the centre, km.
    fn root_position(&self, r: &Vector3<f64>, t: f64) -> Result<Vector3<f64>, DfetError> {
        if self.center.id == self.root.id {
            return Ok(*r);
        }
        let (rc, _) = self.catalog.state_relative(&self.center, &self.root, t)?;
        Ok(r + rc)
    }

    /// Largest thrust at position `r` (km from the centre) and epoch `t`
    /// (MJD2000 days), N.
    pub fn thrust_ceiling(&self, r: &Vector3<f64>, t: f64) -> Result<f64, DfetError> {
        match &self.config.power {
            None => Ok(self.config.engine.t_max),
            Some(power) => {
                let r_s = self.root_position(r, t)?.norm() / AU_KM;
                Ok(max_thrust(r_s, 0.0, power, &self.config.engine))
            }
        }
    }

    /// Acceleration from the third body at `r`, km/s².
    pub fn third_body_acceleration(&self, r: &Vector3<f64>, t: f64) -> Result<Vector3<f64>, DfetError> {
        let Some(b) = &self.perturber else {
            return Ok(Vector3::zeros());
        };
        let (rho, _) = self.catalog.state_relative(b, &self.center, t)?;
        let d = r - rho;
        let dn = d.norm();
        if dn == 0.0 {
            return Err(DfetError::Singular(format!("spacecraft coincides with `{}`", b.id)));
        }
        let rn = rho.norm();
        Ok(-b.mu * (d / dn.powi(3) + rho / rn.powi(3)))
    }

    /// State derivative `(ṙ, v̇, ṁ)` in km/s, km/s² and kg/s for thrust `u`
    /// (N) at epoch `t` (MJD2000 days).
    pub fn derivative(&self, x: &StateVector, u: &Vector3<f64>, t: f64) -> Result<[f64; 7], DfetError> {
        if !(x.m > 0.0) {
            return Err(DfetError::Invalid(format!("mass must be positive, got {}", x.m)));
        }
        let rn = x.r.norm();
        if rn == 0.0 {
            return Err(DfetError::Singular(format!("spacecraft at the centre of `{}`", self.center.id)));
        }
        let acc = -self.center.mu * x.r / rn.powi(3)
            + self.third_body_acceleration(&x.r, t)?
            + u * (1e-3 / x.m);
        let mdot = -u.norm() / self.config.engine.exhaust_velocity();
        Ok([x.v.x, x.v.y, x.v.z, acc.x, acc.y, acc.z, mdot])
    }

    /// Thrust corresponding to a unit control, N.
    pub fn thrust_unit(&self) -> f64 {
        self.config.engine.t_max
    }

    /// Epoch in MJD2000 days of non-dimensional time `t`.
    pub fn epoch(&self, t: f64) -> f64 {
        t * self.units.days()
    }

    /// Non-dimensional time of epoch `mjd`.
    pub fn time_of(&self, mjd: f64) -> f64 {
        mjd / self.units.days()
    }

    pub fn state_to_nd(&self, x: &StateVector) -> [f64; 7] {
        let (l, v, m) = (self.units.length, self.units.velocity(), self.units.mass);
        [x.r.x / l, x.r.y / l, x.r.z / l, x.v.x / v, x.v.y / v, x.v.z / v, x.m / m]
    }

    pub fn state_from_nd(&self, x: &[f64]) -> StateVector {
        let (l, v, m) = (self.units.length, self.units.velocity(), self.units.mass);
        StateVector {
            r: Vector3::new(x[0], x[1], x[2]) * l,
            v: Vector3::new(x[3], x[4], x[5]) * v,
            m: x[6] * m,
        }
    }
}

impl Dynamics for SpacecraftModel {
    fn n_x(&self) -> usize {
        7
    }

    fn n_u(&self) -> usize {
        3
    }

    fn rhs(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        let s = self.state_from_nd(x);
        let uu = Vector3::new(u[0], u[1], u[2]) * self.thrust_unit();
        match self.derivative(&s, &uu, self.epoch(t)) {
            Ok(d) => {
                let (v, a, m) = (
                    self.units.velocity(),
                    self.units.length / self.units.time.powi(2),
                    self.units.mass / self.units.time,
                );
                for i in 0..3 {
                    out[i] = d[i] / v;
                    out[3 + i] = d[3 + i] / a;
                }
                out[6] = d[6] / m;
            }
            Err(_) => out.iter_mut().for_each(|o| *o = f64::NAN),
        }
    }

    fn n_path(&self) -> usize {
        2
    }

    /// `(|u|² − T_min²)/T_min ≥ 0` and `1 − |u|²/T_max² ≥ 0`.
    fn path(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        let f = self.thrust_unit();
        let u2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
        let t_min = self.config.engine.t_min / f;
        let r = Vector3::new(x[0], x[1], x[2]) * self.units.length;
        let t_max = self.thrust_ceiling(&r, self.epoch(t)).map_or(f64::NAN, |v| v / f);
        out[0] = if t_min > 0.0 { (u2 - t_min * t_min) / t_min } else { u2 };
        out[1] = 1.0 - u2 / (t_max * t_max);
    }

    fn body_state(&self, id: &str, t: f64) -> Result<(Vector3<f64>, Vector3<f64>), DfetError> {
        let b = self.catalog.resolve(id)?;
        let (r, v) = self.catalog.state_relative(b, &self.center, self.epoch(t))?;
        Ok((r / self.units.length, v / self.units.velocity()))
    }

    fn flyby_body(&self, id: &str) -> Result<(f64, f64), DfetError> {
        let b = self.catalog.resolve(id)?;
        let mu = b.mu * self.units.time.powi(2) / self.units.length.powi(3);
        Ok((mu, b.min_periapsis() / self.units.length))
    }
}
