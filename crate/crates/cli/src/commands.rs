//! Subcommand implementations.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use mgaopt::capture::{best_parabolic_limit, capture_grid, JUPITER_SOI_KM};
use mgaopt::dfet::{solve_transfer, TransferConfig, TransferObjective, TransferResult};
use mgaopt::impulsive::{optimize_candidates, Bs3Problem, Bs3Solution};
use mgaopt::phasing::{restrict_to_nodes, search, PhasingCandidate, SequenceSpec};
use mgaopt::sep::{array_temperature, effective_power, exceeds_temperature_limit, max_thrust, EngineConfig, PowerConfig};
use mgaopt::sot::{apsides_at_moon, sot_search as run_sot, SotConfig, SotMoon, SotState};
use mgaopt::time::{mjd2000_to_calendar_string, parse_epoch};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::Context;

fn date(mjd: f64) -> String {
    mjd2000_to_calendar_string(mjd)
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

fn parse_window(text: &str) -> Result<(f64, f64), CliError> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| CliError::Config(format!("window `{text}` must be START:END")))?;
    let (a, b) = (parse_epoch(a)?, parse_epoch(b)?);
    if a > b {
        return Err(CliError::Config(format!("window `{text}` ends before it starts")));
    }
    Ok((a, b))
}

fn parse_toml<T: for<'de> Deserialize<'de>>(ctx: &mut Context, path: &std::path::Path) -> Result<T, CliError> {
    let text = ctx.read_config(path)?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Args)]
pub struct SequenceArgs {
    /// Swing-by sequence, comma separated (e.g. E,V,M,E,J).
    #[arg(long)]
    pub sequence: String,
    /// Launch window START:END, each YYYY-MM-DD or MJD2000.
    #[arg(long)]
    pub window: String,
    /// Extra revolutions per leg, comma separated. Defaults to zero.
    #[arg(long)]
    pub revs: Option<String>,
    /// Number of candidates to keep.
    #[arg(long, default_value_t = 100)]
    pub max_candidates: usize,
    /// Keep only candidates whose legs cross the line of nodes within this
    /// many degrees.
    #[arg(long)]
    pub node_window_deg: Option<f64>,
}

impl SequenceArgs {
    fn spec(&self, ctx: &Context) -> Result<SequenceSpec, CliError> {
        let bodies = self
            .sequence
            .split(',')
            .map(|s| ctx.catalog.resolve(s.trim()).map(|b| b.id.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let legs = bodies.len().saturating_sub(1);
        let revs = match &self.revs {
            Some(text) => text
                .split(',')
                .map(|s| s.trim().parse::<u32>().map_err(|_| CliError::Config(format!("bad revolution count `{s}`"))))
                .collect::<Result<Vec<_>, _>>()?,
            None => vec![0; legs],
        };
        let mut spec = SequenceSpec::new(bodies, revs, parse_window(&self.window)?);
        spec.max_candidates = self.max_candidates;
        Ok(spec)
    }
}

#[derive(Debug, Serialize)]
struct PhasingRow {
    rank: usize,
    launch_mjd2000: f64,
    launch_date: String,
    k: String,
    encounters_mjd2000: String,
    encounter_dates: String,
    merit: f64,
}

fn run_phasing(ctx: &mut Context, args: &SequenceArgs) -> Result<Vec<PhasingCandidate>, CliError> {
    let spec = args.spec(ctx)?;
    let mut found = ctx.timed("phasing", |c| search(&spec, &c.catalog))?;
    if let Some(w) = args.node_window_deg {
        found = restrict_to_nodes(&found, &ctx.catalog, w.to_radians())?;
    }
    let rows: Vec<PhasingRow> = found
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let enc = c.encounter_epochs();
            PhasingRow {
                rank: i + 1,
                launch_mjd2000: c.launch(),
                launch_date: date(c.launch()),
                k: join(&c.k),
                encounters_mjd2000: join(enc.iter().map(|t| format!("{t:.3}"))),
                encounter_dates: join(enc.iter().map(|&t| date(t))),
                merit: c.merit,
            }
        })
        .collect();
    ctx.writer.table(
        "phasing",
        "launch_mjd2000 and encounters_mjd2000 in days since 2000-01-01 12:00; dates UTC; merit in day^2",
        &rows,
    )?;
    if found.is_empty() {
        return Err(CliError::NoSolution("the phasing search returned no candidate".into()));
    }
    println!(
        "phase-search: {} candidates, best launch {:.1} MJD2000 ({}), merit {:.3} day^2",
        found.len(),
        found[0].launch(),
        date(found[0].launch()),
        found[0].merit
    );
    Ok(found)
}

pub fn phase_search(ctx: &mut Context, args: &PhaseSearchArgs) -> Result<(), CliError> {
    run_phasing(ctx, &args.sequence).map(|_| ())
}

#[derive(Debug, Args)]
pub struct PhaseSearchArgs {
    #[command(flatten)]
    pub sequence: SequenceArgs,
}

#[derive(Debug, Serialize)]
struct BodyRow {
    id: String,
    name: String,
    parent: String,
    mu: f64,
    radius: f64,
    min_flyby_altitude: f64,
    a: Option<f64>,
    e: Option<f64>,
    i_deg: Option<f64>,
    period_day: Option<f64>,
}

pub fn bodies(ctx: &mut Context) -> Result<(), CliError> {
    let rows: Vec<BodyRow> = ctx
        .catalog
        .bodies()
        .map(|b| BodyRow {
            id: b.id.clone(),
            name: b.name.clone(),
            parent: b.parent.clone(),
            mu: b.mu,
            radius: b.radius,
            min_flyby_altitude: b.min_flyby_altitude,
            a: b.elements.as_ref().map(|e| e.a),
            e: b.elements.as_ref().map(|e| e.e),
            i_deg: b.elements.as_ref().map(|e| e.i.to_degrees()),
            period_day: b.elements.as_ref().map(|e| e.period() / mgaopt::time::SECONDS_PER_DAY),
        })
        .collect();
    ctx.writer
        .table("bodies", "mu km^3/s^2; radius, min_flyby_altitude, a in km; i in deg; period in days", &rows)
}

#[derive(Debug, Args)]
pub struct SotSearchArgs {
    /// Moon identifier.
    #[arg(long)]
    pub moon: String,
    /// Relative speed at the moon, km/s.
    #[arg(long)]
    pub v_rel: f64,
    /// Target spacecraft speed at the moon, km/s.
    #[arg(long)]
    pub v_target: f64,
    /// Initial angle between relative and moon velocity, deg.
    #[arg(long, conflicts_with = "rho_min", required_unless_present = "rho_min")]
    pub alpha0_deg: Option<f64>,
    /// Calibrate the initial angle so that the first maximum deflection
    /// reaches this period ratio.
    #[arg(long)]
    pub rho_min: Option<f64>,
    /// Lowest flyby altitude, km.
    #[arg(long, default_value_t = 200.0)]
    pub h_p_min: f64,
    #[arg(long, default_value_t = 8)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 10)]
    pub max_m: u32,
}

#[derive(Debug, Serialize)]
struct SotRow {
    leg: usize,
    resonance: String,
    n: u32,
    m: u32,
    a: f64,
    beta_deg: f64,
    efficiency: f64,
    duration_day: f64,
    v_plus: f64,
    r_p: f64,
    r_a: f64,
}

#[derive(Debug, Serialize)]
struct TisserandRow {
    point: usize,
    r_p: f64,
    r_a: f64,
}

pub fn sot_search(ctx: &mut Context, args: &SotSearchArgs) -> Result<(), CliError> {
    let moon = SotMoon::from_catalog(&ctx.catalog, &args.moon)?;
    let cfg = SotConfig {
        h_p_min: args.h_p_min,
        max_depth: args.max_depth,
        max_m: args.max_m,
    };
    let state = match (args.alpha0_deg, args.rho_min) {
        (Some(a), _) => SotState::new(&moon, args.v_rel, a.to_radians()),
        (None, Some(r)) => SotState::with_first_rho_min(&moon, args.v_rel, r, cfg.h_p_min)?,
        (None, None) => return Err(CliError::Config("give --alpha0-deg or --rho-min".into())),
    };
    let sol = ctx.timed("sot", |_| run_sot(&state, &moon, args.v_target, &cfg))?;
    let day = mgaopt::time::SECONDS_PER_DAY;
    let rows: Vec<SotRow> = sol
        .legs
        .iter()
        .enumerate()
        .map(|(i, l)| SotRow {
            leg: i + 1,
            resonance: l.resonance.to_string(),
            n: l.resonance.n,
            m: l.resonance.m,
            a: l.a,
            beta_deg: l.beta.to_degrees(),
            efficiency: l.efficiency,
            duration_day: l.duration / day,
            v_plus: l.v_plus,
            r_p: l.r_p,
            r_a: l.r_a,
        })
        .collect();
    ctx.writer.table(
        "sot_legs",
        "a, r_p, r_a in km; beta in deg; duration in days; v_plus in km/s",
        &rows,
    )?;
    let (rp0, ra0) = apsides_at_moon(&moon, state.v_rel, state.alpha0);
    let mut points = vec![TisserandRow {
        point: 0,
        r_p: rp0,
        r_a: ra0,
    }];
    points.extend(sol.tisserand_points().into_iter().enumerate().map(|(i, (r_p, r_a))| TisserandRow {
        point: i + 1,
        r_p,
        r_a,
    }));
    ctx.writer.table("tisserand", "r_p, r_a in km; point 0 is the arrival orbit", &points)?;
    println!(
        "sot-search: {} ({}), {} moon revolutions, {:.2} days, final deflection {:.3} deg",
        sol.moon,
        join(sol.resonances.iter()),
        sol.total_moon_revs,
        sol.total_time / day,
        sol.final_beta.to_degrees()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct ImpOptArgs {
    #[command(flatten)]
    pub sequence: SequenceArgs,
    /// Phasing candidates to optimise.
    #[arg(long, default_value_t = 3)]
    pub candidates: usize,
    /// Departure excess speed ceiling, km/s.
    #[arg(long, default_value_t = 3.16f64.sqrt())]
    pub v_dep_max: f64,
    /// Encounter epochs may move this many days from the first guess.
    #[arg(long, default_value_t = 60.0)]
    pub time_window: f64,
}

#[derive(Debug, Serialize)]
struct Bs3Summary {
    launch_mjd2000: f64,
    launch_date: String,
    initial_dv: f64,
    total_dv: f64,
    v_inf_depart: f64,
    v_inf_arrive: f64,
    feasibility: f64,
    converged: bool,
}

#[derive(Debug, Serialize)]
struct Bs3LegRow {
    leg: usize,
    from: String,
    to: String,
    depart_mjd2000: f64,
    depart_date: String,
    dsm_mjd2000: f64,
    arrive_mjd2000: f64,
    arrive_date: String,
    dsm_dv: f64,
}

#[derive(Debug, Serialize)]
struct FlybyRow {
    body: String,
    t_mjd2000: f64,
    date: String,
    v_inf_in: f64,
    v_inf_out: f64,
    altitude: f64,
    beta_deg: f64,
    modulus_residual: f64,
    cone_residual: f64,
}

fn run_bs3(ctx: &mut Context, args: &ImpOptArgs, found: &[PhasingCandidate]) -> Result<Bs3Solution, CliError> {
    let mut problem = Bs3Problem::new(found[0].sequence.clone());
    problem.v_dep_max = Some(args.v_dep_max);
    problem.time_window = args.time_window;
    let pool = &found[..args.candidates.clamp(1, found.len())];
    let sol = ctx.timed("impulsive", |c| optimize_candidates(pool, &problem, &c.catalog))?;
    let t = &sol.trajectory;
    ctx.writer.table(
        "bs3_summary",
        "dv and v_inf in km/s; feasibility in optimiser units",
        &[Bs3Summary {
            launch_mjd2000: sol.x.t_p[0],
            launch_date: date(sol.x.t_p[0]),
            initial_dv: sol.f0,
            total_dv: sol.f,
            v_inf_depart: t.v_dep.norm(),
            v_inf_arrive: t.v_arr.norm(),
            feasibility: sol.report.feasibility,
            converged: sol.report.converged,
        }],
    )?;
    let legs: Vec<Bs3LegRow> = t
        .legs
        .iter()
        .enumerate()
        .map(|(i, l)| Bs3LegRow {
            leg: i + 1,
            from: l.from.clone(),
            to: l.to.clone(),
            depart_mjd2000: l.t_depart,
            depart_date: date(l.t_depart),
            dsm_mjd2000: l.t_dsm,
            arrive_mjd2000: l.t_arrive,
            arrive_date: date(l.t_arrive),
            dsm_dv: l.dv.norm(),
        })
        .collect();
    ctx.writer.table("bs3_legs", "epochs in MJD2000 days; dsm_dv in km/s", &legs)?;
    let flybys: Vec<FlybyRow> = t
        .flybys
        .iter()
        .map(|f| FlybyRow {
            body: f.body.clone(),
            t_mjd2000: f.t,
            date: date(f.t),
            v_inf_in: f.v_in_rel.norm(),
            v_inf_out: f.v_out_rel.norm(),
            altitude: f.altitude,
            beta_deg: f.beta.to_degrees(),
            modulus_residual: f.modulus_residual,
            cone_residual: f.cone_residual,
        })
        .collect();
    ctx.writer.table(
        "bs3_flybys",
        "t in MJD2000 days; v_inf in km/s; altitude in km; beta in deg; cone_residual in rad",
        &flybys,
    )?;
    ctx.writer.json("bs3_decision", &sol.x)?;
    println!(
        "imp-opt: launch {:.2} MJD2000 ({}), DSM total {:.4} km/s (first guess {:.4}), converged {}",
        sol.x.t_p[0],
        date(sol.x.t_p[0]),
        sol.f,
        sol.f0,
        sol.report.converged
    );
    Ok(sol)
}

pub fn imp_opt(ctx: &mut Context, args: &ImpOptArgs) -> Result<(), CliError> {
    let found = run_phasing(ctx, &args.sequence)?;
    run_bs3(ctx, args, &found).map(|_| ())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PowerFile {
    power: PowerConfig,
    engine: EngineConfig,
}

#[derive(Debug, Args)]
pub struct PowerCurveArgs {
    /// Closest Sun distance, AU.
    #[arg(long, default_value_t = 0.7)]
    pub r_min: f64,
    /// Farthest Sun distance, AU.
    #[arg(long, default_value_t = 5.5)]
    pub r_max: f64,
    #[arg(long, default_value_t = 49)]
    pub steps: usize,
    /// Sun aspect angle of the arrays, deg.
    #[arg(long, default_value_t = 0.0)]
    pub alpha_ss_deg: f64,
    /// TOML file with optional `[power]` and `[engine]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct PowerRow {
    r_au: f64,
    t_s: f64,
    p_eff: f64,
    p_in: f64,
    f_max: f64,
    over_temperature: bool,
}

pub fn power_curve(ctx: &mut Context, args: &PowerCurveArgs) -> Result<(), CliError> {
    let file: PowerFile = match &args.config {
        Some(p) => parse_toml(ctx, p)?,
        None => PowerFile::default(),
    };
    file.power.validate()?;
    file.engine.validate()?;
    if !(args.r_min > 0.0 && args.r_max >= args.r_min) || args.steps < 2 {
        return Err(CliError::Config("need 0 < r_min <= r_max and at least 2 steps".into()));
    }
    let alpha = args.alpha_ss_deg.to_radians();
    let rows: Vec<PowerRow> = (0..args.steps)
        .map(|i| {
            let r = args.r_min + (args.r_max - args.r_min) * i as f64 / (args.steps - 1) as f64;
            let (p_eff, p_in) = effective_power(r, alpha, &file.power);
            PowerRow {
                r_au: r,
                t_s: array_temperature(r, alpha, &file.power),
                p_eff,
                p_in,
                f_max: max_thrust(r, alpha, &file.power, &file.engine),
                over_temperature: exceeds_temperature_limit(r, alpha, &file.power),
            }
        })
        .collect();
    ctx.writer.table("power", "r in AU; t_s in K; p_eff, p_in in W; f_max in N", &rows)
}

#[derive(Debug, Args)]
pub struct CaptureMapArgs {
    /// Capture moon.
    #[arg(long)]
    pub moon: String,
    /// Flyby altitude, km.
    #[arg(long, default_value_t = 300.0)]
    pub altitude: f64,
    #[arg(long, default_value_t = 90.0)]
    pub gamma_max_deg: f64,
    #[arg(long, default_value_t = 91)]
    pub gamma_steps: usize,
    /// Lowest speed at the sphere of influence, km/s.
    #[arg(long, default_value_t = 0.0)]
    pub v_min: f64,
    /// Highest speed at the sphere of influence, km/s.
    #[arg(long, default_value_t = 8.0)]
    pub v_max: f64,
    #[arg(long, default_value_t = 81)]
    pub v_steps: usize,
    /// Sphere-of-influence radius, km.
    #[arg(long, default_value_t = JUPITER_SOI_KM)]
    pub r_soi: f64,
}

#[derive(Debug, Serialize)]
struct CaptureRow {
    gamma_deg: f64,
    v_soi: f64,
    energy: f64,
    period_day: Option<f64>,
    captured: bool,
}

#[derive(Debug, Serialize)]
struct LimitRow {
    moon: String,
    altitude: f64,
    gamma_deg: f64,
    v_soi_max: f64,
    v_inf_max: f64,
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Best capture limit, written to `capture_limit`.
fn capture_limit(ctx: &mut Context, moon: &str, altitude: f64, r_soi: f64) -> Result<LimitRow, CliError> {
    let (gamma, v) = ctx.timed("capture_limit", |c| best_parabolic_limit(moon, altitude, r_soi, &c.catalog))?;
    let body = ctx.catalog.resolve(moon)?;
    let mu = ctx.catalog.parent_of(body)?.mu;
    let row = LimitRow {
        moon: body.id.clone(),
        altitude,
        gamma_deg: gamma.to_degrees(),
        v_soi_max: v,
        v_inf_max: (v * v - 2.0 * mu / r_soi).max(0.0).sqrt(),
    };
    ctx.writer.table(
        "capture_limit",
        "altitude in km; gamma in deg; v_soi_max and v_inf_max in km/s",
        std::slice::from_ref(&row),
    )?;
    Ok(row)
}

pub fn capture_map(ctx: &mut Context, args: &CaptureMapArgs) -> Result<(), CliError> {
    let gammas: Vec<f64> = grid(0.0, args.gamma_max_deg, args.gamma_steps).iter().map(|g| g.to_radians()).collect();
    let speeds = grid(args.v_min, args.v_max, args.v_steps);
    let cells = ctx.timed("capture_map", |c| {
        capture_grid(&args.moon, args.altitude, args.r_soi, &gammas, &speeds, &c.catalog)
    })?;
    let rows: Vec<CaptureRow> = cells
        .iter()
        .map(|c| CaptureRow {
            gamma_deg: c.gamma.to_degrees(),
            v_soi: c.v_soi,
            energy: c.energy,
            period_day: c.period_days,
            captured: c.energy < 0.0,
        })
        .collect();
    ctx.writer.table(
        "capture_map",
        "gamma in deg; v_soi in km/s; energy in km^2/s^2; period in days, empty when unbound",
        &rows,
    )?;
    let limit = capture_limit(ctx, &args.moon, args.altitude, args.r_soi)?;
    println!(
        "capture-map: {} cells; capture below {:.3} km/s at gamma {:.2} deg",
        rows.len(),
        limit.v_soi_max,
        limit.gamma_deg
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ObjectiveArg {
    MaxFinalMass,
    MinTime,
    Feasibility,
}

impl From<ObjectiveArg> for TransferObjective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::MaxFinalMass => TransferObjective::MaxFinalMass,
            ObjectiveArg::MinTime => TransferObjective::MinTime,
            ObjectiveArg::Feasibility => TransferObjective::Feasibility,
        }
    }
}

#[derive(Debug, Args)]
pub struct DfetSolveArgs {
    /// Transfer configuration (TOML). Unset keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub departure: Option<String>,
    #[arg(long)]
    pub arrival: Option<String>,
    /// Departure epoch, YYYY-MM-DD or MJD2000.
    #[arg(long)]
    pub t_depart: Option<String>,
    /// Arrival epoch, YYYY-MM-DD or MJD2000.
    #[arg(long)]
    pub t_arrive: Option<String>,
    #[arg(long)]
    pub elements: Option<usize>,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
}

#[derive(Debug, Serialize)]
struct NodeRow {
    t_mjd2000: f64,
    date: String,
    x: f64,
    y: f64,
    z: f64,
    vx: f64,
    vy: f64,
    vz: f64,
    m: f64,
    ux: f64,
    uy: f64,
    uz: f64,
    thrust: f64,
    f_max: f64,
}

fn write_transfer(ctx: &mut Context, prefix: &str, cfg: &TransferConfig, r: &TransferResult) -> Result<(), CliError> {
    let rows: Vec<NodeRow> = r
        .nodes
        .iter()
        .map(|n| NodeRow {
            t_mjd2000: n.t,
            date: date(n.t),
            x: n.r.x,
            y: n.r.y,
            z: n.r.z,
            vx: n.v.x,
            vy: n.v.y,
            vz: n.v.z,
            m: n.m,
            ux: n.u.x,
            uy: n.u.y,
            uz: n.u.z,
            thrust: n.thrust,
            f_max: n.f_max,
        })
        .collect();
    ctx.writer.table(
        &format!("{prefix}_nodes"),
        "t in MJD2000 days; position in km; velocity in km/s; mass in kg; thrust, u and f_max in N",
        &rows,
    )?;
    let mut report = String::new();
    let mut line = |k: &str, v: String| report.push_str(&format!("{k} = {v}\n"));
    line("departure", format!("{:?}", cfg.departure));
    line("arrival", format!("{:?}", cfg.arrival));
    line("t_depart_mjd2000", format!("{:.6}", r.t_depart));
    line("t_depart_date", format!("{:?}", date(r.t_depart)));
    line("t_arrive_mjd2000", format!("{:.6}", r.t_arrive));
    line("t_arrive_date", format!("{:?}", date(r.t_arrive)));
    line("elements", cfg.elements.to_string());
    line("order", cfg.order.to_string());
    line("final_mass_kg", format!("{:.6}", r.final_mass));
    line("v_inf_depart_km_s", format!("{:.6}", r.v_inf_depart));
    line("v_inf_arrive_km_s", format!("{:.6}", r.v_inf_arrive));
    line("guess_infeasibility", format!("{:e}", r.guess_infeasibility));
    let stages = [("feasibility_stage", Some(&r.feasibility_stage)), ("optimization_stage", r.optimization_stage.as_ref())];
    for (name, stage) in stages {
        if let Some(s) = stage {
            line(&format!("{name}.converged"), s.converged.to_string());
            line(&format!("{name}.objective"), format!("{:e}", s.objective));
            line(&format!("{name}.feasibility"), format!("{:e}", s.feasibility));
            line(&format!("{name}.stationarity"), format!("{:e}", s.stationarity));
            line(&format!("{name}.outer_iterations"), s.outer_iterations.to_string());
            line(&format!("{name}.inner_iterations"), s.inner_iterations.to_string());
            line(&format!("{name}.message"), format!("{:?}", s.message));
        }
    }
    line("accepted_feasibility", format!("{:e}", r.solution.report.feasibility));
    ctx.writer.raw(&format!("{prefix}_report.txt"), report.as_bytes())?;
    println!(
        "dfet-solve: {} -> {}, feasibility {:.1e}, final mass {:.2} kg",
        cfg.departure, cfg.arrival, r.solution.report.feasibility, r.final_mass
    );
    if !r.feasibility_stage.converged {
        return Err(CliError::NoSolution(format!(
            "the transfer did not reach feasibility ({:e})",
            r.feasibility_stage.feasibility
        )));
    }
    Ok(())
}

pub fn dfet_solve(ctx: &mut Context, args: &DfetSolveArgs) -> Result<(), CliError> {
    let mut cfg: TransferConfig = match &args.config {
        Some(p) => parse_toml(ctx, p)?,
        None => TransferConfig::default(),
    };
    if let Some(v) = &args.departure {
        cfg.departure = v.clone();
    }
    if let Some(v) = &args.arrival {
        cfg.arrival = v.clone();
    }
    if let Some(v) = &args.t_depart {
        cfg.t_depart = parse_epoch(v)?;
    }
    if let Some(v) = &args.t_arrive {
        cfg.t_arrive = parse_epoch(v)?;
    }
    if let Some(v) = args.elements {
        cfg.elements = v;
    }
    if let Some(v) = args.order {
        cfg.order = v;
    }
    if let Some(v) = args.objective {
        cfg.objective = v.into();
    }
    let result = ctx.timed("dfet", |c| solve_transfer(&cfg, &c.catalog))?;
    write_transfer(ctx, "dfet", &cfg, &result)
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub bs3: ImpOptArgs,
    /// Capture moon for the terminal constraint.
    #[arg(long, default_value = "ganymede")]
    pub moon: String,
    /// Capture flyby altitude, km.
    #[arg(long, default_value_t = 300.0)]
    pub altitude: f64,
    /// Leg solved with low thrust, counted from 1. Defaults to the first leg.
    #[arg(long, default_value_t = 1)]
    pub dfet_leg: usize,
    /// Base transfer configuration (TOML); bodies, epochs and excess speed
    /// limits are taken from the impulsive solution.
    #[arg(long)]
    pub dfet_config: Option<PathBuf>,
}

pub fn pipeline(ctx: &mut Context, args: &PipelineArgs) -> Result<(), CliError> {
    let found = run_phasing(ctx, &args.bs3.sequence)?;
    let sol = run_bs3(ctx, &args.bs3, &found)?;
    let limit = capture_limit(ctx, &args.moon, args.altitude, JUPITER_SOI_KM)?;
    let seq = &sol.problem.sequence;
    let legs = seq.len() - 1;
    if args.dfet_leg == 0 || args.dfet_leg > legs {
        return Err(CliError::Config(format!("--dfet-leg must lie in 1..={legs}")));
    }
    let leg = args.dfet_leg - 1;
    let moon_parent = ctx.catalog.parent_of(ctx.catalog.resolve(&args.moon)?)?.id.clone();
    let t = &sol.trajectory;
    let v_out = if leg == 0 { t.v_dep.norm() } else { t.flybys[leg - 1].v_out_rel.norm() };
    let v_in = if leg + 1 == legs {
        if seq[legs] == moon_parent {
            limit.v_inf_max
        } else {
            t.v_arr.norm()
        }
    } else {
        t.flybys[leg].v_in_rel.norm()
    };
    let mut cfg: TransferConfig = match &args.dfet_config {
        Some(p) => parse_toml(ctx, p)?,
        None => TransferConfig::default(),
    };
    cfg.center = "sun".into();
    cfg.departure = seq[leg].clone();
    cfg.arrival = seq[leg + 1].clone();
    cfg.t_depart = sol.x.t_p[leg];
    cfg.t_arrive = sol.x.t_p[leg + 1];
    cfg.v_inf_depart_max = v_out;
    cfg.v_inf_arrive_max = v_in;
    let result = ctx.timed("dfet", |c| solve_transfer(&cfg, &c.catalog))?;
    write_transfer(ctx, "dfet", &cfg, &result)
}
