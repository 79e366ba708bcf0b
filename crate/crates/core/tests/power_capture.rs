use mgaopt::bodies::BodyCatalog;
use mgaopt::capture::{parabolic_limit, post_capture_energy_and_period, CaptureQuery, JUPITER_SOI_KM};
use mgaopt::sep::{array_temperature, effective_power, max_thrust, EngineConfig, PowerConfig};
use proptest::prelude::*;

proptest! {
    #[test]
    fn power_and_thrust_fall_with_distance(r in 0.5f64..6.0, dr in 1e-3f64..1.0, alpha in 0.0f64..1.2) {
        let cfg = PowerConfig::default();
        let engine = EngineConfig::default();
        let (_, p_near) = effective_power(r, alpha, &cfg);
        let (_, p_far) = effective_power(r + dr, alpha, &cfg);
        prop_assert!(p_far <= p_near);
        prop_assert!((0.0..=cfg.p_max).contains(&p_near));
        prop_assert!(max_thrust(r + dr, alpha, &cfg, &engine) <= max_thrust(r, alpha, &cfg, &engine));
        let bracket = 1.0 - cfg.c_t * (array_temperature(r, alpha, &cfg) - cfg.t_0);
        prop_assert!(bracket > 0.0);
    }

    #[test]
    fn capture_limit_falls_with_altitude(gamma in 0.0f64..1.2, h in 200.0f64..3000.0, dh in 10.0f64..3000.0) {
        let cat = BodyCatalog::default_catalog();
        let low = parabolic_limit(gamma, "ganymede", h, JUPITER_SOI_KM, &cat).unwrap();
        let high = parabolic_limit(gamma, "ganymede", h + dh, JUPITER_SOI_KM, &cat).unwrap();
        prop_assert!(high <= low + 1e-9);
    }

    #[test]
    fn period_exists_exactly_below_the_limit(gamma in 0.0f64..1.2, f in 0.5f64..1.5) {
        let cat = BodyCatalog::default_catalog();
        let limit = parabolic_limit(gamma, "ganymede", 300.0, JUPITER_SOI_KM, &cat).unwrap();
        let q = CaptureQuery::new("ganymede", f * limit, gamma, 300.0);
        let o = post_capture_energy_and_period(&q, &cat).unwrap();
        if (f - 1.0).abs() > 1e-6 {
            prop_assert_eq!(o.period.is_some(), f < 1.0);
        }
        if let Some(t) = o.period {
            prop_assert!(t > 0.0 && t.is_finite());
        }
    }
}
