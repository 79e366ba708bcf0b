//! Single-phase low-thrust transfer between two bodies, started from a
//! ballistic Lambert arc.

use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::assemble::{assemble, optimize_nlp, DfetSolution, PhaseGuess};
use super::dynamics::{DynamicsConfig, SpacecraftModel, StateVector, MASS};
use super::phase::{BoundaryCondition, End, Mesh, Phase, PhaseObjective};
use super::DfetError;
use crate::bodies::BodyCatalog;
use crate::nlp::{NlpOptions, NlpReport};
use crate::sep::{EngineConfig, PowerConfig};
use crate::time::SECONDS_PER_DAY;
use crate::twobody::{lambert, propagate_rv, Branch};
use crate::AU_KM;

/// Largest constraint violation of an accepted optimisation-stage point.
pub const ACCEPT_FEASIBILITY: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferObjective {
    /// Maximise the final mass.
    MaxFinalMass,
    /// Minimise the time of flight.
    MinTime,
    /// Only find a feasible trajectory.
    Feasibility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    pub center: String,
    pub departure: String,
    pub arrival: String,
    /// MJD2000
    pub t_depart: f64,
    /// MJD2000
    pub t_arrive: f64,
    /// Each end time may move this many days either way.
    pub time_slack: f64,
    /// km/s
    pub v_inf_depart_max: f64,
    /// km/s; zero for a rendezvous.
    pub v_inf_arrive_max: f64,
    /// kg
    pub mass: f64,
    pub elements: usize,
    pub order: usize,
    pub perturber: Option<String>,
    pub engine: EngineConfig,
    pub power: Option<PowerConfig>,
    pub objective: TransferObjective,
    /// Options of the feasibility stage.
    pub nlp: NlpOptions,
    /// Options of the optimisation stage started from the feasible point.
    pub optimize: NlpOptions,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            center: "sun".into(),
            departure: "earth".into(),
            arrival: "mars".into(),
            t_depart: 7487.0,
            t_arrive: 7822.0,
            time_slack: 0.0,
            v_inf_depart_max: 3.16f64.sqrt(),
            v_inf_arrive_max: 0.0,
            mass: 1500.0,
            elements: 10,
            order: 5,
            perturber: None,
            engine: EngineConfig::default(),
            power: Some(PowerConfig::default()),
            objective: TransferObjective::MaxFinalMass,
            nlp: NlpOptions {
                feasibility_tol: 1e-9,
                stationarity_tol: 1e-5,
                max_outer: 40,
                max_inner: 200,
                ..NlpOptions::default()
            },
            optimize: NlpOptions {
                feasibility_tol: 1e-8,
                stationarity_tol: 1e-5,
                initial_penalty: 1e4,
                max_outer: 10,
                max_inner: 100,
                ..NlpOptions::default()
            },
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<(), DfetError> {
        let bad = |m: &str| Err(DfetError::Invalid(m.into()));
        if !(self.t_arrive > self.t_depart) {
            return bad("arrival must follow departure");
        }
        if !(self.time_slack >= 0.0 && 2.0 * self.time_slack < self.t_arrive - self.t_depart) {
            return bad("time slack must be non-negative and below half the time of flight");
        }
        if !(self.v_inf_depart_max >= 0.0 && self.v_inf_arrive_max >= 0.0) {
            return bad("excess speed limits must be non-negative");
        }
        if !(self.mass > 0.0) || self.elements == 0 || self.order == 0 {
            return bad("mass, element count and order must be positive");
        }
        Ok(())
    }
}

/// One Gauss node of a solved transfer in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    /// MJD2000
    pub t: f64,
    /// km
    pub r: Vector3<f64>,
    /// km/s
    pub v: Vector3<f64>,
    /// kg
    pub m: f64,
    /// N
    pub u: Vector3<f64>,
    /// N
    pub thrust: f64,
    /// Thrust ceiling, N.
    pub f_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    /// Accepted solution: the optimised point when it stayed feasible,
    /// otherwise the feasibility-stage point.
    pub solution: DfetSolution,
    /// Report of the feasibility stage.
    pub feasibility_stage: NlpReport,
    /// Report of the optimisation stage, when run.
    pub optimization_stage: Option<NlpReport>,
    pub nodes: Vec<NodeRecord>,
    /// MJD2000
    pub t_depart: f64,
    /// MJD2000
    pub t_arrive: f64,
    /// kg
    pub final_mass: f64,
    /// Excess speeds at both ends, km/s.
    pub v_inf_depart: f64,
    pub v_inf_arrive: f64,
    /// Initial-guess infeasibility in transcription units.
    pub guess_infeasibility: f64,
}

/// The spacecraft model, the single phase and its Lambert-arc guess.
pub struct TransferSetup {
    pub model: Arc<SpacecraftModel>,
    pub nlp: super::TranscribedNlp,
    pub guess: Vec<f64>,
}

/// Builds the transcription and its initial guess.
pub fn setup_transfer(cfg: &TransferConfig, catalog: &BodyCatalog) -> Result<TransferSetup, DfetError> {
    cfg.validate()?;
    let center = catalog.resolve(&cfg.center)?;
    let length = if center.elements.is_none() { AU_KM } else { 10.0 * center.radius };
    let dynamics = DynamicsConfig {
        center: cfg.center.clone(),
        perturber: cfg.perturber.clone(),
        engine: cfg.engine.clone(),
        power: cfg.power.clone(),
    };
    let model = Arc::new(SpacecraftModel::new(dynamics, catalog, length, cfg.mass)?);
    let (t0, tf) = (model.time_of(cfg.t_depart), model.time_of(cfg.t_arrive));
    let slack = cfg.time_slack / model.units.days();
    let vu = model.units.velocity();

    let mut phase = Phase::new(model.clone(), Mesh::uniform(cfg.elements, cfg.order), t0, tf);
    phase.t0 = (t0 - slack, t0 + slack);
    phase.tf = (tf - slack, tf + slack);
    phase.x0[MASS] = (1.0, 1.0);
    phase.states[MASS] = (1e-3, 1.0);
    phase.xf[MASS] = (1e-3, 1.0);
    phase.controls = vec![(-1.0, 1.0); 3];
    phase.boundary = vec![
        BoundaryCondition::AtBody {
            end: End::Initial,
            body: cfg.departure.clone(),
            v_inf_max: Some(cfg.v_inf_depart_max / vu),
        },
        BoundaryCondition::AtBody {
            end: End::Final,
            body: cfg.arrival.clone(),
            v_inf_max: Some(cfg.v_inf_arrive_max / vu),
        },
    ];
    let mut nlp = assemble(vec![phase], vec![])?;
    nlp.fd_step = cfg.nlp.fd_step;

    let dep = catalog.resolve(&cfg.departure)?;
    let arr = catalog.resolve(&cfg.arrival)?;
    let (r1, _) = catalog.state_relative(dep, center, cfg.t_depart)?;
    let (r2, _) = catalog.state_relative(arr, center, cfg.t_arrive)?;
    let tof = (cfg.t_arrive - cfg.t_depart) * SECONDS_PER_DAY;
    let arc = lambert(&r1, &r2, tof, center.mu, 0, Branch::Right)
        .map_err(|e| DfetError::Invalid(format!("no ballistic first guess: {e}")))?;
    let t_min = 10.0 * cfg.engine.t_min / model.thrust_unit();
    let m_final = 0.9;
    let span = tf - t0;
    let state = |t: f64| -> Vec<f64> {
        let dt = (t - t0) * model.units.time;
        let (r, v) = propagate_rv(&arc.r1, &arc.v1, dt, center.mu)
            .unwrap_or((Vector3::repeat(f64::NAN), Vector3::repeat(f64::NAN)));
        let m = cfg.mass * (1.0 - (1.0 - m_final) * (t - t0) / span);
        model.state_to_nd(&StateVector { r, v, m }).to_vec()
    };
    let control = |t: f64| -> Vec<f64> {
        let x = state(t);
        let v = Vector3::new(x[3], x[4], x[5]).normalize() * t_min;
        vec![v.x, v.y, v.z]
    };
    let guess = nlp.initial_guess(
        &[PhaseGuess {
            t0,
            tf,
            state: &state,
            control: &control,
        }],
        &[],
    )?;
    if !guess.iter().all(|v| v.is_finite()) {
        return Err(DfetError::Invalid("first guess is not finite".into()));
    }
    Ok(TransferSetup { model, nlp, guess })
}

/// Solves a single low-thrust transfer: first to feasibility, then for the
/// configured objective from the feasible point.
pub fn solve_transfer(cfg: &TransferConfig, catalog: &BodyCatalog) -> Result<TransferResult, DfetError> {
    let mut setup = setup_transfer(cfg, catalog)?;
    let guess_infeasibility = setup.nlp.infeasibility(&setup.guess);
    let feasible = optimize_nlp(&setup.nlp, &setup.guess, &cfg.nlp)?;
    let feasibility_stage = feasible.report.clone();
    let objective = match cfg.objective {
        TransferObjective::MaxFinalMass => PhaseObjective::MaxFinal(MASS),
        TransferObjective::MinTime => PhaseObjective::MinTime,
        TransferObjective::Feasibility => PhaseObjective::None,
    };
    let (solution, optimization_stage) = if objective == PhaseObjective::None || !feasible.report.converged {
        (feasible, None)
    } else {
        setup.nlp.set_objective(0, objective)?;
        let optimized = optimize_nlp(&setup.nlp, &feasible.y, &cfg.optimize)?;
        let report = optimized.report.clone();
        let keep = report.feasibility <= ACCEPT_FEASIBILITY;
        (if keep { optimized } else { feasible }, Some(report))
    };
    let model = &setup.model;
    let ph = &solution.phases[0];
    let mut nodes = Vec::with_capacity(ph.nodes.len());
    for n in &ph.nodes {
        let s = model.state_from_nd(&n.x);
        let u = Vector3::new(n.u[0], n.u[1], n.u[2]) * model.thrust_unit();
        let t = model.epoch(n.t);
        nodes.push(NodeRecord {
            t,
            r: s.r,
            v: s.v,
            m: s.m,
            u,
            thrust: u.norm(),
            f_max: model.thrust_ceiling(&s.r, t)?,
        });
    }
    let center = catalog.resolve(&cfg.center)?;
    let (t_depart, t_arrive) = (model.epoch(ph.t0), model.epoch(ph.tf));
    let x0 = model.state_from_nd(&ph.x0);
    let xf = model.state_from_nd(&ph.xf);
    let (_, v_dep) = catalog.state_relative(catalog.resolve(&cfg.departure)?, center, t_depart)?;
    let (_, v_arr) = catalog.state_relative(catalog.resolve(&cfg.arrival)?, center, t_arrive)?;
    Ok(TransferResult {
        nodes,
        t_depart,
        t_arrive,
        final_mass: xf.m,
        v_inf_depart: (x0.v - v_dep).norm(),
        v_inf_arrive: (xf.v - v_arr).norm(),
        guess_infeasibility,
        solution,
        feasibility_stage,
        optimization_stage,
    })
}
