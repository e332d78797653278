//! Task batteries and navigation metrics.
//!
//! A battery runs one policy over a list of tasks, producing per-episode
//! records and an aggregate report: success rate (SR) and success weighted by
//! path length (SPL) in per-mille, heading deviation MAE/RMSE over all moving
//! steps, navigation error (NE, final distance to the destination), and total
//! navigation time (TNT, steps to termination).
//!
//! Episodes are independent, so batteries are data-parallel; per-task derived
//! seeds keep results identical regardless of scheduling.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::baselines::{metaheuristic_step, MetaConfig, MetaStepContext};
use crate::env::{
    write_trajectory_csv, Action, EnvConfig, NavEnv, NavTask, Observation, ObsNormalizer,
    Termination, TrajectoryRow,
};
use crate::error::{Error, Result};
use crate::field::{FieldProvider, FieldSample};
use crate::geo::{angular_distance, wrap_angle, LocalFrame, RegionBounds};
use crate::neural::Mlp;
use crate::par::{map_indexed, ExecMode};
use crate::reward::RewardConfig;
use crate::rng::{derive_seed, rng_from, Rng};

/// Read-only view of the episode state offered to policies each step.
/// Learned actors consume only the observation; the probe fields exist for
/// the metaheuristic baselines, whose protocol evaluates virtual probes
/// around the vehicle.
pub struct ProbeContext<'a> {
    pub provider: &'a dyn FieldProvider,
    pub frame: &'a LocalFrame,
    pub pos_km: (f64, f64),
    pub heading_rad: f64,
    pub origin_sample: &'a FieldSample,
    pub dest_sample: &'a FieldSample,
    pub objective: f64,
    pub straight_line_km: f64,
    pub psi_max_rad: f64,
    pub dist_max_km: f64,
    /// Destination coordinates; available to scripted oracle policies only.
    pub destination: crate::geo::GeoPoint,
}

pub trait NavPolicy: Send {
    /// Called once per episode before the first action.
    fn reset_episode(&mut self, _task: &NavTask, _episode_seed: u64) {}

    fn act(&mut self, obs: &Observation, ctx: &ProbeContext) -> Result<Action>;

    fn name(&self) -> &str;
}

/// Noiseless actor policy: the checkpointed network plus its action map.
pub struct ActorPolicy {
    pub actor: Mlp,
    pub name: String,
}

impl NavPolicy for ActorPolicy {
    fn act(&mut self, obs: &Observation, _ctx: &ProbeContext) -> Result<Action> {
        let out = self.actor.forward(&obs.0)?;
        Ok(Action {
            psi_rad: out[0],
            dist_km: out[1],
        })
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// Metaheuristic baseline driven through the per-step search protocol.
pub struct MetaPolicy {
    pub cfg: MetaConfig,
    rng: Rng,
    name: String,
}

impl MetaPolicy {
    pub fn new(cfg: MetaConfig) -> Self {
        let name = format!("baseline:{}", cfg.method.name());
        MetaPolicy {
            cfg,
            rng: rng_from(0, "meta/unseeded"),
            name,
        }
    }
}

impl NavPolicy for MetaPolicy {
    fn reset_episode(&mut self, _task: &NavTask, episode_seed: u64) {
        self.rng = rng_from(episode_seed, "meta/episode");
    }

    fn act(&mut self, _obs: &Observation, ctx: &ProbeContext) -> Result<Action> {
        let step_ctx = MetaStepContext {
            provider: ctx.provider,
            frame: ctx.frame,
            pos_km: ctx.pos_km,
            heading_rad: ctx.heading_rad,
            origin_sample: ctx.origin_sample,
            dest_sample: ctx.dest_sample,
            objective: ctx.objective,
            straight_line_km: ctx.straight_line_km,
            psi_max_rad: ctx.psi_max_rad,
            dist_max_km: ctx.dist_max_km,
        };
        let (action, _, _) = metaheuristic_step(&step_ctx, &self.cfg, &mut self.rng, None);
        Ok(action)
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// Scripted reference policy: turn toward the instantaneous bearing (zero
/// step length while the turn clip binds), then fly the bearing with the
/// remaining distance. Uses true positions, so it is a measurement oracle,
/// not a competitor.
pub struct BearingOraclePolicy;

impl NavPolicy for BearingOraclePolicy {
    fn act(&mut self, _obs: &Observation, ctx: &ProbeContext) -> Result<Action> {
        let pos = ctx.frame.to_geo(ctx.pos_km.0, ctx.pos_km.1);
        let bearing = ctx.frame.bearing_rad(&pos, &ctx.destination);
        let turn = wrap_angle(bearing - ctx.heading_rad);
        if turn.abs() > ctx.psi_max_rad {
            return Ok(Action {
                psi_rad: turn.clamp(-ctx.psi_max_rad, ctx.psi_max_rad),
                dist_km: 0.0,
            });
        }
        let remaining = ctx.frame.distance_km(&pos, &ctx.destination);
        Ok(Action {
            psi_rad: turn,
            dist_km: remaining.min(ctx.dist_max_km),
        })
    }

    fn name(&self) -> &str {
        "oracle:bearing"
    }
}

/// Null policy: never turns, never moves. Exhausts the step budget.
pub struct NullPolicy;

impl NavPolicy for NullPolicy {
    fn act(&mut self, _obs: &Observation, _ctx: &ProbeContext) -> Result<Action> {
        Ok(Action {
            psi_rad: 0.0,
            dist_km: 0.0,
        })
    }

    fn name(&self) -> &str {
        "null"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub task: NavTask,
    pub success: bool,
    pub termination: Termination,
    /// Sum of executed step displacements, km.
    pub path_km: f64,
    /// Straight-line task length, km.
    pub straight_km: f64,
    pub steps: u32,
    /// Final distance to the destination (NE), km.
    pub final_km: f64,
    /// Heading-deviation sums over moving steps.
    pub sum_abs_dev: f64,
    pub sum_sq_dev: f64,
    pub n_moving_steps: u32,
}

impl EpisodeRecord {
    pub fn mae(&self) -> f64 {
        if self.n_moving_steps == 0 {
            0.0
        } else {
            self.sum_abs_dev / self.n_moving_steps as f64
        }
    }

    pub fn rmse(&self) -> f64 {
        if self.n_moving_steps == 0 {
            0.0
        } else {
            (self.sum_sq_dev / self.n_moving_steps as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub policy: String,
    pub n_tasks: usize,
    pub sr_permille: f64,
    pub spl_permille: f64,
    pub heading_mae_rad: f64,
    pub heading_rmse_rad: f64,
    pub ne_km_mean: f64,
    /// NE over successful episodes only; None when nothing succeeded.
    pub ne_km_mean_success: Option<f64>,
    pub tnt_steps_mean: f64,
}

/// Success rate in per-mille.
pub fn success_rate(records: &[EpisodeRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyBattery);
    }
    let hits = records.iter().filter(|r| r.success).count();
    Ok(1000.0 * hits as f64 / records.len() as f64)
}

/// Success weighted by path length, in per-mille:
/// `1000 * mean(S_i * l_i / max(p_i, l_i))`.
pub fn spl(records: &[EpisodeRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyBattery);
    }
    let sum: f64 = records
        .iter()
        .map(|r| {
            if r.success {
                r.straight_km / r.path_km.max(r.straight_km)
            } else {
                0.0
            }
        })
        .sum();
    Ok(1000.0 * sum / records.len() as f64)
}

/// Heading deviation aggregated over all moving steps of all episodes.
pub fn heading_deviation(records: &[EpisodeRecord]) -> (f64, f64) {
    let n: u32 = records.iter().map(|r| r.n_moving_steps).sum();
    if n == 0 {
        return (0.0, 0.0);
    }
    let abs: f64 = records.iter().map(|r| r.sum_abs_dev).sum();
    let sq: f64 = records.iter().map(|r| r.sum_sq_dev).sum();
    (abs / n as f64, (sq / n as f64).sqrt())
}

pub fn metrics(policy: &str, records: &[EpisodeRecord]) -> Result<MetricsReport> {
    let sr = success_rate(records)?;
    let spl_val = spl(records)?;
    let (mae, rmse) = heading_deviation(records);
    let ne_mean = records.iter().map(|r| r.final_km).sum::<f64>() / records.len() as f64;
    let successes: Vec<f64> = records
        .iter()
        .filter(|r| r.success)
        .map(|r| r.final_km)
        .collect();
    let ne_success = if successes.is_empty() {
        None
    } else {
        Some(successes.iter().sum::<f64>() / successes.len() as f64)
    };
    let tnt = records.iter().map(|r| r.steps as f64).sum::<f64>() / records.len() as f64;
    Ok(MetricsReport {
        policy: policy.to_string(),
        n_tasks: records.len(),
        sr_permille: sr,
        spl_permille: spl_val,
        heading_mae_rad: mae,
        heading_rmse_rad: rmse,
        ne_km_mean: ne_mean,
        ne_km_mean_success: ne_success,
        tnt_steps_mean: tnt,
    })
}

/// Everything needed to build a fresh environment per episode.
#[derive(Clone)]
pub struct EnvSpec<'p> {
    pub provider: &'p dyn FieldProvider,
    pub region: RegionBounds,
    pub normalizer: ObsNormalizer,
    pub env_cfg: EnvConfig,
    pub reward_cfg: RewardConfig,
}

impl<'p> EnvSpec<'p> {
    pub fn build(&self) -> Result<NavEnv<'p>> {
        NavEnv::new(
            self.provider,
            &self.region,
            self.normalizer,
            self.env_cfg,
            self.reward_cfg,
        )
    }
}

pub struct BatteryOptions {
    pub seed: u64,
    pub label: String,
    pub mode: ExecMode,
    /// When set, one trajectory CSV per task is written here.
    pub trajectory_dir: Option<PathBuf>,
}

impl Default for BatteryOptions {
    fn default() -> Self {
        BatteryOptions {
            seed: 0,
            label: "battery".into(),
            mode: ExecMode::Parallel,
            trajectory_dir: None,
        }
    }
}

/// Run one episode; returns the record and the trajectory.
pub fn run_episode(
    env: &mut NavEnv,
    policy: &mut dyn NavPolicy,
    task: &NavTask,
    episode_seed: u64,
) -> Result<(EpisodeRecord, Vec<TrajectoryRow>)> {
    let (state, mut obs) = env.reset(task)?;
    policy.reset_episode(task, episode_seed);
    let frame = *env.frame();
    let origin_sample = *env.origin_sample()?;
    let dest_sample = *env.dest_sample()?;
    let straight_km = frame.distance_km(&task.origin, &task.destination);
    let mut rows = vec![TrajectoryRow {
        step: 0,
        x_km: state.x_km,
        y_km: state.y_km,
        lon_deg: task.origin.lon_deg,
        lat_deg: task.origin.lat_deg,
        heading_rad: state.heading_rad,
        psi_rad: 0.0,
        dist_km: 0.0,
        objective: 3.0,
        reward_ext: 0.0,
        reward_int: 0.0,
    }];
    let mut path_km = 0.0;
    let mut sum_abs_dev = 0.0;
    let mut sum_sq_dev = 0.0;
    let mut n_moving = 0u32;
    let termination;
    loop {
        let state = *env.state()?;
        let pos = frame.to_geo(state.x_km, state.y_km);
        let bearing = frame.bearing_rad(&pos, &task.destination);
        let ctx = ProbeContext {
            provider: env.provider(),
            frame: &frame,
            pos_km: (state.x_km, state.y_km),
            heading_rad: state.heading_rad,
            origin_sample: &origin_sample,
            dest_sample: &dest_sample,
            objective: env.objective_value()?,
            straight_line_km: straight_km,
            psi_max_rad: env.config().psi_max_rad,
            dist_max_km: env.config().dist_max_km,
            destination: task.destination,
        };
        let action = policy.act(&obs, &ctx)?;
        let out = env.step(&action)?;
        let new_state = *env.state()?;
        let moved =
            ((new_state.x_km - state.x_km).powi(2) + (new_state.y_km - state.y_km).powi(2)).sqrt();
        path_km += moved;
        if moved > 0.0 {
            let dev = angular_distance(new_state.heading_rad, bearing);
            sum_abs_dev += dev;
            sum_sq_dev += dev * dev;
            n_moving += 1;
        }
        rows.push(TrajectoryRow {
            step: new_state.step,
            x_km: new_state.x_km,
            y_km: new_state.y_km,
            lon_deg: out.true_position.lon_deg,
            lat_deg: out.true_position.lat_deg,
            heading_rad: new_state.heading_rad,
            psi_rad: action.psi_rad,
            dist_km: action.dist_km,
            objective: out.objective,
            reward_ext: out.reward_extrinsic,
            reward_int: out.reward_intrinsic,
        });
        obs = out.obs;
        if out.done {
            termination = out.termination.expect("done implies termination");
            break;
        }
    }
    let state = *env.state()?;
    let final_pos = frame.to_geo(state.x_km, state.y_km);
    let record = EpisodeRecord {
        task: *task,
        success: termination == Termination::Goal,
        termination,
        path_km,
        straight_km,
        steps: state.step,
        final_km: frame.distance_km(&final_pos, &task.destination),
        sum_abs_dev,
        sum_sq_dev,
        n_moving_steps: n_moving,
    };
    Ok((record, rows))
}

/// Run every task through a fresh environment and policy instance. Policies
/// are built per episode via the factory so stateful baselines stay isolated.
pub fn run_battery<'p, F>(
    env_spec: &EnvSpec<'p>,
    policy_factory: F,
    policy_name: &str,
    tasks: &[NavTask],
    opts: &BatteryOptions,
) -> Result<(Vec<EpisodeRecord>, MetricsReport)>
where
    F: Fn() -> Box<dyn NavPolicy> + Sync,
{
    if tasks.is_empty() {
        return Err(Error::EmptyBattery);
    }
    if let Some(dir) = &opts.trajectory_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let results: Vec<Result<EpisodeRecord>> = map_indexed(opts.mode, tasks.len(), |i| {
        let mut env = env_spec.build()?;
        let mut policy = policy_factory();
        let episode_seed = derive_seed(opts.seed, &format!("{}/task{}", opts.label, i));
        let (record, rows) = run_episode(&mut env, policy.as_mut(), &tasks[i], episode_seed)?;
        if let Some(dir) = &opts.trajectory_dir {
            write_trajectory_csv(dir.join(format!("task_{i:04}.csv")), &rows)?;
        }
        Ok(record)
    });
    let mut records = Vec::with_capacity(tasks.len());
    for r in results {
        records.push(r?);
    }
    let report = metrics(policy_name, &records)?;
    Ok((records, report))
}

pub fn write_episode_records_csv(path: impl AsRef<Path>, records: &[EpisodeRecord]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(f);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(
        w,
        "origin_lon,origin_lat,dest_lon,dest_lat,success,termination,path_km,straight_km,steps,ne_km,mae_rad,rmse_rad,n_moving_steps"
    )
    .map_err(io_err)?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.task.origin.lon_deg,
            r.task.origin.lat_deg,
            r.task.destination.lon_deg,
            r.task.destination.lat_deg,
            r.success as u8,
            r.termination.as_str(),
            r.path_km,
            r.straight_km,
            r.steps,
            r.final_km,
            r.mae(),
            r.rmse(),
            r.n_moving_steps
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn write_metrics_report(path: impl AsRef<Path>, report: &MetricsReport) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(f);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(w, "metric,value").map_err(io_err)?;
    writeln!(w, "policy,{}", report.policy).map_err(io_err)?;
    writeln!(w, "n_tasks,{}", report.n_tasks).map_err(io_err)?;
    writeln!(w, "sr_permille,{}", report.sr_permille).map_err(io_err)?;
    writeln!(w, "spl_permille,{}", report.spl_permille).map_err(io_err)?;
    writeln!(w, "heading_mae_rad,{}", report.heading_mae_rad).map_err(io_err)?;
    writeln!(w, "heading_rmse_rad,{}", report.heading_rmse_rad).map_err(io_err)?;
    writeln!(w, "ne_km_mean,{}", report.ne_km_mean).map_err(io_err)?;
    match report.ne_km_mean_success {
        Some(v) => writeln!(w, "ne_km_mean_success,{v}").map_err(io_err)?,
        None => writeln!(w, "ne_km_mean_success,").map_err(io_err)?,
    }
    writeln!(w, "tnt_steps_mean,{}", report.tnt_steps_mean).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Combined comparison table across policies, one row per report.
pub fn write_comparison_csv(path: impl AsRef<Path>, reports: &[MetricsReport]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(f);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(
        w,
        "policy,n_tasks,sr_permille,spl_permille,heading_mae_rad,heading_rmse_rad,ne_km_mean,ne_km_mean_success,tnt_steps_mean"
    )
    .map_err(io_err)?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.policy,
            r.n_tasks,
            r.sr_permille,
            r.spl_permille,
            r.heading_mae_rad,
            r.heading_rmse_rad,
            r.ne_km_mean,
            r.ne_km_mean_success
                .map(|v| v.to_string())
                .unwrap_or_default(),
            r.tnt_steps_mean
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Five-number summary plus Tukey whiskers and outliers for one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxStats {
    pub metric: String,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: Vec<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    }
}

pub fn box_stats(metric: &str, values: &[f64]) -> BoxStats {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q1 = quantile(&v, 0.25);
    let median = quantile(&v, 0.5);
    let q3 = quantile(&v, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let whisker_lo = v
        .iter()
        .copied()
        .find(|&x| x >= lo_fence)
        .unwrap_or(f64::NAN);
    let whisker_hi = v
        .iter()
        .rev()
        .copied()
        .find(|&x| x <= hi_fence)
        .unwrap_or(f64::NAN);
    let outliers = v
        .iter()
        .copied()
        .filter(|&x| x < lo_fence || x > hi_fence)
        .collect();
    BoxStats {
        metric: metric.to_string(),
        q1,
        median,
        q3,
        whisker_lo,
        whisker_hi,
        outliers,
    }
}

/// Box-plot source data for the four distribution plots: per-episode heading
/// MAE, heading RMSE, NE, and TNT.
pub fn battery_box_stats(records: &[EpisodeRecord]) -> Vec<BoxStats> {
    let mae: Vec<f64> = records.iter().map(|r| r.mae()).collect();
    let rmse: Vec<f64> = records.iter().map(|r| r.rmse()).collect();
    let ne: Vec<f64> = records.iter().map(|r| r.final_km).collect();
    let tnt: Vec<f64> = records.iter().map(|r| r.steps as f64).collect();
    vec![
        box_stats("heading_mae_rad", &mae),
        box_stats("heading_rmse_rad", &rmse),
        box_stats("ne_km", &ne),
        box_stats("tnt_steps", &tnt),
    ]
}

pub fn write_box_stats_csv(path: impl AsRef<Path>, policy: &str, stats: &[BoxStats]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(f);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(
        w,
        "policy,metric,q1,median,q3,whisker_lo,whisker_hi,outliers"
    )
    .map_err(io_err)?;
    for s in stats {
        let outliers = s
            .outliers
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(";");
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            policy, s.metric, s.q1, s.median, s.q3, s.whisker_lo, s.whisker_hi, outliers
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
