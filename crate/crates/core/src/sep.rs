//! Solar-electric power and thrust model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::G0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SepError {
    #[error("thrust {u} N outside [{t_min}, {t_max}] N")]
    BoundViolation { u: f64, t_min: f64, t_max: f64 },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Solar array and power system constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerConfig {
    /// Engine efficiency.
    pub eta_e: f64,
    /// Power system efficiency.
    pub eta_s: f64,
    /// Array temperature coefficient, 1/K.
    pub c_t: f64,
    /// Reference array temperature, K.
    pub t_0: f64,
    /// Radiating-to-illuminated area ratio.
    pub kappa: f64,
    /// Infrared emissivity.
    pub eps_s: f64,
    /// Solar absorptivity.
    pub alpha_s: f64,
    /// Array output at 1 AU, W.
    pub p_1au: f64,
    /// Housekeeping power, W.
    pub p_ss: f64,
    /// Largest power the PPU accepts, W.
    pub p_max: f64,
    /// Solar constant at 1 AU, W/m².
    pub s_0: f64,
    /// Stefan-Boltzmann constant, W/(m² K⁴).
    pub sigma: f64,
    /// Thrust-to-power ratio, mN/kW.
    pub f_sp: f64,
    /// Array temperature ceiling, K. Only used for warnings.
    pub t_max_array: f64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            eta_e: 0.9,
            eta_s: 0.9,
            c_t: 3e-4,
            t_0: 290.0,
            kappa: 1.8,
            eps_s: 1.0,
            alpha_s: 0.8,
            p_1au: 52_000.0,
            p_ss: 300.0,
            p_max: 1.05 / (0.9 * 27e-6),
            s_0: 1367.0,
            sigma: 5.670e-8,
            f_sp: 27.0,
            t_max_array: 423.0,
        }
    }
}

impl PowerConfig {
    pub fn validate(&self) -> Result<(), SepError> {
        let positive = [
            ("c_t", self.c_t),
            ("t_0", self.t_0),
            ("kappa", self.kappa),
            ("eps_s", self.eps_s),
            ("alpha_s", self.alpha_s),
            ("p_1au", self.p_1au),
            ("p_max", self.p_max),
            ("s_0", self.s_0),
            ("sigma", self.sigma),
            ("f_sp", self.f_sp),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SepError::Invalid(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("eta_e", self.eta_e), ("eta_s", self.eta_s)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(SepError::Invalid(format!("{name} must lie in (0, 1]")));
            }
        }
        if self.p_ss < 0.0 {
            return Err(SepError::Invalid("p_ss must be non-negative".into()));
        }
        Ok(())
    }

    /// Thrust-to-power ratio in N/W.
    pub fn f_sp_si(&self) -> f64 {
        self.f_sp * 1e-6
    }
}

/// Electric propulsion system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    /// Specific impulse, s.
    pub isp: f64,
    /// m/s²
    pub g0: f64,
    /// Total thrust of all thrusters, N.
    pub t_max: f64,
    /// N
    pub t_min: f64,
    pub n_thrusters: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self::new(3200.0, 7, 0.150)
    }
}

impl EngineConfig {
    /// `n_thrusters` thrusters of `per_thruster` N each; the lower bound is
    /// 1e-4 of the total.
    pub fn new(isp: f64, n_thrusters: u32, per_thruster: f64) -> Self {
        let t_max = n_thrusters as f64 * per_thruster;
        Self {
            isp,
            g0: G0,
            t_max,
            t_min: 1e-4 * t_max,
            n_thrusters,
        }
    }

    pub fn validate(&self) -> Result<(), SepError> {
        if !(self.isp > 0.0 && self.g0 > 0.0 && self.t_max > 0.0) || self.n_thrusters == 0 {
            return Err(SepError::Invalid("isp, g0, t_max and n_thrusters must be positive".into()));
        }
        if !(self.t_min >= 0.0 && self.t_min < self.t_max) {
            return Err(SepError::Invalid("t_min must lie in [0, t_max)".into()));
        }
        Ok(())
    }

    /// Exhaust velocity, m/s.
    pub fn exhaust_velocity(&self) -> f64 {
        self.isp * self.g0
    }
}

/// Steady-state array temperature at `r_s` AU with Sun aspect angle
/// `alpha_ss`, K.
pub fn array_temperature(r_s: f64, alpha_ss: f64, cfg: &PowerConfig) -> f64 {
    let num = cfg.s_0 * cfg.alpha_s * alpha_ss.cos().max(0.0);
    (num / (r_s * r_s * cfg.sigma * cfg.kappa * cfg.eps_s)).powf(0.25)
}

/// Array output and power delivered to the engine, `(P_eff, P_in)`, W.
/// `P_in` is limited to `[0, p_max]`.
pub fn effective_power(r_s: f64, alpha_ss: f64, cfg: &PowerConfig) -> (f64, f64) {
    let t_s = array_temperature(r_s, alpha_ss, cfg);
    let p_eff = cfg.eta_s * cfg.p_1au / (r_s * r_s) * (1.0 - cfg.c_t * (t_s - cfg.t_0)) * alpha_ss.cos();
    let p_in = (p_eff - cfg.p_ss).min(cfg.p_max).max(0.0);
    (p_eff, p_in)
}

/// Largest available thrust at `r_s` AU, N.
pub fn max_thrust(r_s: f64, alpha_ss: f64, power: &PowerConfig, engine: &EngineConfig) -> f64 {
    let (_, p_in) = effective_power(r_s, alpha_ss, power);
    (power.eta_e * p_in * power.f_sp_si()).min(engine.t_max)
}

/// Whether the array runs hotter than its ceiling at `r_s` AU.
pub fn exceeds_temperature_limit(r_s: f64, alpha_ss: f64, cfg: &PowerConfig) -> bool {
    array_temperature(r_s, alpha_ss, cfg) > cfg.t_max_array
}

/// Propellant consumption rate for thrust `u`, kg/s.
pub fn mass_flow(u: f64, engine: &EngineConfig) -> Result<f64, SepError> {
    let slack = 1e-12 * engine.t_max;
    if u < engine.t_min - slack || u > engine.t_max + slack {
        return Err(SepError::BoundViolation {
            u,
            t_min: engine.t_min,
            t_max: engine.t_max,
        });
    }
    Ok(u / engine.exhaust_velocity())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn temperature_at_one_au() {
        let cfg = PowerConfig::default();
        let t = array_temperature(1.0, 0.0, &cfg);
        assert!((t - 322.0).abs() < 1.0, "{t}");
        assert_relative_eq!(array_temperature(2.0, 0.0, &cfg), t / 2f64.sqrt(), max_relative = 1e-14);
        assert!(array_temperature(1.0, FRAC_PI_2 - 1e-9, &cfg) < 2.0);
    }

    #[test]
    fn power_at_one_au() {
        let cfg = PowerConfig::default();
        let (p_eff, _) = effective_power(1.0, 0.0, &cfg);
        assert!((p_eff / cfg.p_1au - 0.891).abs() < 1e-3);
    }

    #[test]
    fn reference_temperature_bracket() {
        let mut cfg = PowerConfig::default();
        let t = array_temperature(1.3, 0.2, &cfg);
        cfg.t_0 = t;
        let (p_eff, _) = effective_power(1.3, 0.2, &cfg);
        assert_relative_eq!(p_eff, cfg.eta_s * cfg.p_1au / 1.69 * 0.2f64.cos(), max_relative = 1e-14);
    }

    #[test]
    fn jupiter_thrust_floor() {
        let (power, engine) = (PowerConfig::default(), EngineConfig::default());
        let f = max_thrust(5.2029, 0.0, &power, &engine);
        assert!(f >= 0.035, "{f}");
        assert!(max_thrust(0.7, 0.0, &power, &engine) <= engine.t_max);
    }

    #[test]
    fn far_from_sun_engine_off() {
        let (power, engine) = (PowerConfig::default(), EngineConfig::default());
        assert_eq!(effective_power(100.0, 0.0, &power).1, 0.0);
        assert_eq!(max_thrust(100.0, 0.0, &power, &engine), 0.0);
    }

    #[test]
    fn mass_flow_rates() {
        let e = EngineConfig::default();
        assert_relative_eq!(mass_flow(e.t_max, &e).unwrap(), e.t_max / (3200.0 * G0));
        assert_relative_eq!(mass_flow(0.5, &e).unwrap(), 0.5 * mass_flow(1.0, &e).unwrap());
        assert!(mass_flow(2.0, &e).is_err());
        assert!(mass_flow(0.0, &e).is_err());
        assert_eq!(e.t_min, 1e-4 * e.t_max);
    }

    #[test]
    fn defaults_validate() {
        PowerConfig::default().validate().unwrap();
        EngineConfig::default().validate().unwrap();
        assert!(!exceeds_temperature_limit(1.0, 0.0, &PowerConfig::default()));
    }
}
