//! Scripted experiment scenarios: a scenario file names a run config, a
//! pipeline, pipeline parameters, and declarative assertions over the
//! emitted report fields. Running a scenario executes the pipeline, writes a
//! summary plus a human-readable expected-vs-observed report, and fails with
//! the list of violated assertions.
//!
//! Completed training stages are cached inside the scenario's output
//! directory (keyed by a digest of the full config and stage label), so
//! re-running a scenario with unchanged inputs reuses its artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, RunContext};
use crate::distill::{
    collect_dataset, train_student, CollectSetup, DistillDataset, DistillOutcome,
};
use crate::env::{generate_tasks, NavEnv, NavTask};
use crate::error::{Error, Result};
use crate::eval::{
    battery_box_stats, run_battery, write_box_stats_csv, write_comparison_csv,
    write_episode_records_csv, write_metrics_report, ActorPolicy, BatteryOptions, EnvSpec,
    MetaPolicy, MetricsReport, NavPolicy,
};
use crate::geo::LocalFrame;
use crate::neural::{load_mlp, save_mlp, Mlp, PolicyMeta};
use crate::par::{map_indexed, ExecMode};
use crate::reward::{RewardConfig, RewardVariant};
use crate::rng::{derive_seed, fnv1a64, rng_from};
use crate::td3::{train_teacher, write_training_log, Td3Config, TrainSetup};

#[derive(Debug, Clone, Deserialize)]
pub struct AssertionSpec {
    /// Result key or numeric literal.
    pub lhs: String,
    /// One of <, <=, >, >=, ==, !=.
    pub op: String,
    /// Result key or numeric literal.
    pub rhs: String,
    /// Added to the rhs before comparison.
    #[serde(default)]
    pub margin: f64,
    /// Multiplies the rhs before the margin is added.
    #[serde(default = "one")]
    pub factor: f64,
    #[serde(default)]
    pub note: Option<String>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    /// Run config path, relative to the scenario file.
    pub config: PathBuf,
    pub pipeline: String,
    #[serde(default)]
    pub runtime_budget_minutes: Option<f64>,
    #[serde(default)]
    pub params: toml::Table,
    #[serde(default)]
    pub assertions: Vec<AssertionSpec>,
}

impl ScenarioSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        toml::from_str(&text).map_err(|e| Error::Toml {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }
}

pub type Results = BTreeMap<String, f64>;

#[derive(Debug)]
pub struct ScenarioOutcome {
    pub name: String,
    pub passed: bool,
    pub results: Results,
    /// One line per assertion: PASS/FAIL with observed values.
    pub report_lines: Vec<String>,
    pub failures: Vec<String>,
    pub out_dir: PathBuf,
}

/// Execute a scenario file. `out_override` replaces the config's output root;
/// `force` disables stage caching (every stage recomputes).
pub fn run_scenario(
    scenario_path: impl AsRef<Path>,
    out_override: Option<PathBuf>,
    force: bool,
) -> Result<ScenarioOutcome> {
    let scenario_path = scenario_path.as_ref();
    let spec = ScenarioSpec::load(scenario_path)?;
    let base = scenario_path.parent().unwrap_or_else(|| Path::new("."));
    let config_path = if spec.config.is_absolute() {
        spec.config.clone()
    } else {
        base.join(&spec.config)
    };
    let ctx = RunContext::load(&config_path)?;
    let out_dir = out_override.unwrap_or_else(|| ctx.out_root().join(&spec.name));
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let t0 = Instant::now();
    let mut results = run_pipeline(&spec.pipeline, &spec.params, &ctx, &out_dir, force)?;
    results.insert("wall_minutes".into(), t0.elapsed().as_secs_f64() / 60.0);

    // Evaluate assertions, including the implicit runtime budget.
    let mut assertions = spec.assertions.clone();
    if let Some(budget) = spec.runtime_budget_minutes {
        assertions.push(AssertionSpec {
            lhs: "wall_minutes".into(),
            op: "<=".into(),
            rhs: format!("{budget}"),
            margin: 0.0,
            factor: 1.0,
            note: Some("runtime budget".into()),
        });
    }
    let mut report_lines = Vec::new();
    let mut failures = Vec::new();
    for a in &assertions {
        match evaluate_assertion(a, &results) {
            Ok(line) => report_lines.push(line),
            Err(line) => {
                report_lines.push(line.clone());
                failures.push(line);
            }
        }
    }

    write_summary(&out_dir.join("summary.csv"), &results)?;
    let mut report = String::new();
    let _ = writeln!(report, "scenario: {}", spec.name);
    for line in &report_lines {
        let _ = writeln!(report, "{line}");
    }
    std::fs::write(out_dir.join("diff_report.txt"), &report)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    Ok(ScenarioOutcome {
        name: spec.name,
        passed: failures.is_empty(),
        results,
        report_lines,
        failures,
        out_dir,
    })
}

fn resolve(token: &str, results: &Results) -> std::result::Result<f64, String> {
    if let Ok(v) = token.trim().parse::<f64>() {
        return Ok(v);
    }
    results
        .get(token.trim())
        .copied()
        .ok_or_else(|| format!("unknown result field `{}`", token.trim()))
}

fn evaluate_assertion(a: &AssertionSpec, results: &Results) -> std::result::Result<String, String> {
    let describe = |ok: bool, lhs: f64, rhs: f64| {
        let status = if ok { "PASS" } else { "FAIL" };
        let note = a.note.as_deref().unwrap_or("");
        let rhs_show = if a.factor != 1.0 || a.margin != 0.0 {
            format!(
                "{} (= {} * {} + {})",
                rhs, a.rhs, a.factor, a.margin
            )
        } else {
            format!("{rhs}")
        };
        format!(
            "{status}: {} {} {}  [observed {} {} {}] {}",
            a.lhs, a.op, a.rhs, lhs, a.op, rhs_show, note
        )
    };
    let lhs = resolve(&a.lhs, results).map_err(|e| format!("FAIL: {e}"))?;
    let rhs_raw = resolve(&a.rhs, results).map_err(|e| format!("FAIL: {e}"))?;
    let rhs = rhs_raw * a.factor + a.margin;
    let ok = match a.op.as_str() {
        "<" => lhs < rhs,
        "<=" => lhs <= rhs,
        ">" => lhs > rhs,
        ">=" => lhs >= rhs,
        "==" => lhs == rhs,
        "!=" => lhs != rhs,
        other => return Err(format!("FAIL: unknown operator `{other}`")),
    };
    let line = describe(ok, lhs, rhs);
    if ok {
        Ok(line)
    } else {
        Err(line)
    }
}

fn write_summary(path: &Path, results: &Results) -> Result<()> {
    use std::io::Write as _;
    let f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(f);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(w, "key,value").map_err(io_err)?;
    for (k, v) in results {
        writeln!(w, "{k},{v}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn run_pipeline(
    pipeline: &str,
    params: &toml::Table,
    ctx: &RunContext,
    out_dir: &Path,
    force: bool,
) -> Result<Results> {
    match pipeline {
        "teacher_competence" => teacher_competence(params, ctx, out_dir, force),
        "reward_ablation" => reward_ablation(params, ctx, out_dir, force),
        "distill_generalization" => distill_generalization(params, ctx, out_dir, force),
        "determinism" => determinism(params, ctx, out_dir),
        "noop" => Ok(Results::new()),
        other => Err(Error::Config(format!("unknown pipeline `{other}`"))),
    }
}

fn parse_params<T: serde::de::DeserializeOwned>(params: &toml::Table) -> Result<T> {
    params
        .clone()
        .try_into()
        .map_err(|e| Error::Config(format!("bad pipeline params: {e}")))
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Digest of the full config plus a stage label; cached stages are reused
/// only when this digest matches.
fn stage_digest(config: &RunConfig, label: &str) -> String {
    let text = toml::to_string(config).unwrap_or_default();
    format!("{:016x}", fnv1a64(format!("{text}\n{label}").as_bytes()))
}

/// Artifacts of one completed teacher training stage.
pub struct TrainedTeacher {
    pub actor: Mlp,
    pub policy_meta: PolicyMeta,
    pub first_success_episode: Option<f64>,
    pub episodes_done: u64,
}

#[derive(Serialize, Deserialize)]
struct StageMarker {
    digest: String,
    first_success_episode: Option<u64>,
    episodes_done: u64,
    env_steps: u64,
}

/// Train one teacher (or reuse the cached artifacts when the digest matches).
pub fn train_stage(
    ctx: &RunContext,
    region_name: &str,
    variant: RewardVariant,
    seed: u64,
    train_steps: Option<u64>,
    dir: &Path,
    force: bool,
) -> Result<TrainedTeacher> {
    let region = *ctx.config.region(region_name)?;
    let mut td3_cfg: Td3Config = ctx.config.td3.clone();
    if let Some(steps) = train_steps {
        td3_cfg.total_env_steps = steps;
    }
    let reward_cfg = RewardConfig {
        variant,
        ..ctx.config.reward
    };
    let label = format!(
        "train/{region_name}/{:?}/seed{seed}/steps{}",
        variant, td3_cfg.total_env_steps
    );
    let digest = stage_digest(&ctx.config, &label);
    let marker_path = dir.join("done.toml");
    if !force && marker_path.exists() {
        let text = std::fs::read_to_string(&marker_path)
            .map_err(|e| Error::io(marker_path.display().to_string(), e))?;
        if let Ok(marker) = toml::from_str::<StageMarker>(&text) {
            if marker.digest == digest {
                let policy_path = if dir.join("policy.mlp").exists() {
                    dir.join("policy.mlp")
                } else {
                    dir.join("actor.mlp")
                };
                let (actor, meta) = load_mlp(policy_path)?;
                let meta = meta.ok_or_else(|| {
                    Error::Checkpoint("cached actor lacks policy metadata".into())
                })?;
                return Ok(TrainedTeacher {
                    actor,
                    policy_meta: meta,
                    first_success_episode: marker.first_success_episode.map(|v| v as f64),
                    episodes_done: marker.episodes_done,
                });
            }
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut env = NavEnv::new(
        ctx.provider.as_ref(),
        &region,
        ctx.normalizer,
        ctx.config.env,
        reward_cfg,
    )?;
    let setup = TrainSetup {
        region,
        d_min_km: ctx.config.tasks.d_min_km,
        d_max_km: ctx.config.tasks.d_max_km,
        deficit_floors: deficit_floors(ctx, &region)?,
        seed: ctx.config.run.seed ^ seed,
        label: label.clone(),
        checkpoint_dir: Some(dir.to_path_buf()),
        interrupt_after_steps: None,
    };
    let outcome = train_teacher(&mut env, &td3_cfg, &setup)?;
    write_training_log(dir.join("training_log.csv"), &outcome.episodes)?;
    // Config snapshot alongside the artifacts.
    let snapshot =
        toml::to_string(&ctx.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(dir.join("config_snapshot.toml"), snapshot)
        .map_err(|e| Error::io(dir.display().to_string(), e))?;
    let marker = StageMarker {
        digest,
        first_success_episode: outcome.first_success_episode,
        episodes_done: outcome.episodes.len() as u64,
        env_steps: outcome.env_steps,
    };
    std::fs::write(
        &marker_path,
        toml::to_string(&marker).map_err(|e| Error::Checkpoint(e.to_string()))?,
    )
    .map_err(|e| Error::io(marker_path.display().to_string(), e))?;
    let policy_meta = PolicyMeta {
        normalizer: ctx.normalizer,
        action_map: env.action_map(),
    };
    Ok(TrainedTeacher {
        actor: outcome.best_actor,
        policy_meta,
        first_success_episode: outcome.first_success_episode.map(|v| v as f64),
        episodes_done: outcome.episodes.len() as u64,
    })
}

/// Battery task list shared by every policy evaluated in a scenario.
pub fn battery_tasks(ctx: &RunContext, battery_name: &str) -> Result<Vec<NavTask>> {
    let battery = ctx.config.battery(battery_name)?;
    let region = *ctx.config.region(&battery.region)?;
    let frame = LocalFrame::for_region(&region);
    let mut rng = rng_from(ctx.config.run.seed, &format!("battery/{battery_name}"));
    generate_tasks(
        ctx.provider.as_ref(),
        &frame,
        &region,
        battery.n_tasks,
        battery.d_min_km,
        battery.d_max_km,
        ctx.config.env.zeta,
        ctx.config.env.max_steps,
        &deficit_floors(ctx, &region)?,
        &mut rng,
    )
}

/// Absolute per-element deficit floors: the configured fraction of each
/// element's span over the task region itself. Keeps objective denominators
/// proportionate to what tasks in that region can actually exhibit.
pub fn deficit_floors(
    ctx: &RunContext,
    region: &crate::geo::RegionBounds,
) -> Result<crate::env::DeficitFloors> {
    let frac = ctx.config.tasks.min_deficit_frac;
    let local = crate::env::ObsNormalizer::fit(ctx.provider.as_ref(), region, 9)?;
    let mut floors = [0.0; 3];
    for k in 0..3 {
        floors[k] = frac * (local.hi[k] - local.lo[k]);
    }
    Ok(floors)
}

pub fn eval_battery(
    ctx: &RunContext,
    battery_name: &str,
    tasks: &[NavTask],
    policy_factory: &(dyn Fn() -> Box<dyn NavPolicy> + Sync),
    policy_name: &str,
    out_dir: &Path,
) -> Result<MetricsReport> {
    let battery = ctx.config.battery(battery_name)?;
    let region = *ctx.config.region(&battery.region)?;
    let spec = EnvSpec {
        provider: ctx.provider.as_ref(),
        region,
        normalizer: ctx.normalizer,
        env_cfg: ctx.config.env,
        reward_cfg: ctx.config.reward,
    };
    let opts = BatteryOptions {
        seed: derive_seed(ctx.config.run.seed, &format!("eval/{battery_name}")),
        label: format!("eval/{battery_name}/{policy_name}"),
        mode: ExecMode::Parallel,
        trajectory_dir: None,
    };
    let (records, report) = run_battery(&spec, policy_factory, policy_name, tasks, &opts)?;
    let safe_name = policy_name.replace([':', '/'], "_");
    let base = out_dir.join(format!("{battery_name}__{safe_name}"));
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    write_episode_records_csv(base.with_extension("records.csv"), &records)?;
    write_metrics_report(base.with_extension("metrics.csv"), &report)?;
    write_box_stats_csv(
        base.with_extension("boxstats.csv"),
        policy_name,
        &battery_box_stats(&records),
    )?;
    Ok(report)
}

#[derive(Deserialize)]
struct TeacherCompetenceParams {
    region: String,
    seeds: Vec<u64>,
    battery: String,
    #[serde(default)]
    train_steps: Option<u64>,
    #[serde(default)]
    variant: Option<RewardVariant>,
}

fn teacher_competence(
    params: &toml::Table,
    ctx: &RunContext,
    out_dir: &Path,
    force: bool,
) -> Result<Results> {
    let p: TeacherCompetenceParams = parse_params(params)?;
    let variant = p.variant.unwrap_or(ctx.config.reward.variant);
    let tasks = battery_tasks(ctx, &p.battery)?;
    let outcomes: Vec<Result<(u64, f64, f64, Option<f64>)>> =
        map_indexed(ExecMode::Parallel, p.seeds.len(), |i| {
            let seed = p.seeds[i];
            let dir = out_dir.join(format!("teacher_{}_{}_seed{}", p.region, variant_tag(variant), seed));
            let teacher = train_stage(ctx, &p.region, variant, seed, p.train_steps, &dir, force)?;
            let actor = teacher.actor;
            let name = format!("teacher_{}_seed{seed}", p.region);
            let report = eval_battery(
                ctx,
                &p.battery,
                &tasks,
                &move || {
                    Box::new(ActorPolicy {
                        actor: actor.clone(),
                        name: "actor".into(),
                    }) as Box<dyn NavPolicy>
                },
                &name,
                &out_dir.join("reports"),
            )?;
            Ok((
                seed,
                report.sr_permille,
                report.spl_permille,
                teacher.first_success_episode,
            ))
        });
    let mut results = Results::new();
    let mut srs = Vec::new();
    let mut spls = Vec::new();
    let mut reports = Vec::new();
    for o in outcomes {
        let (seed, sr, spl, first) = o?;
        results.insert(format!("sr.seed{seed}"), sr);
        results.insert(format!("spl.seed{seed}"), spl);
        if let Some(f) = first {
            results.insert(format!("first_success.seed{seed}"), f);
        }
        srs.push(sr);
        spls.push(spl);
        reports.push(MetricsReport {
            policy: format!("seed{seed}"),
            n_tasks: tasks.len(),
            sr_permille: sr,
            spl_permille: spl,
            heading_mae_rad: 0.0,
            heading_rmse_rad: 0.0,
            ne_km_mean: 0.0,
            ne_km_mean_success: None,
            tnt_steps_mean: 0.0,
        });
    }
    results.insert("sr_median".into(), median(&srs));
    results.insert("spl_median".into(), median(&spls));
    Ok(results)
}

pub fn variant_tag(v: RewardVariant) -> &'static str {
    match v {
        RewardVariant::Sparse => "SR",
        RewardVariant::Extrinsic => "ER",
        RewardVariant::Shaped => "ST",
    }
}

pub fn parse_variant(s: &str) -> Result<RewardVariant> {
    match s {
        "SR" => Ok(RewardVariant::Sparse),
        "ER" => Ok(RewardVariant::Extrinsic),
        "ST" => Ok(RewardVariant::Shaped),
        other => Err(Error::Config(format!("unknown reward variant `{other}`"))),
    }
}

#[derive(Deserialize)]
struct RewardAblationParams {
    region: String,
    seeds: Vec<u64>,
    #[serde(default = "default_variants")]
    variants: Vec<String>,
    #[serde(default)]
    train_steps: Option<u64>,
}

fn default_variants() -> Vec<String> {
    vec!["SR".into(), "ER".into(), "ST".into()]
}

fn reward_ablation(
    params: &toml::Table,
    ctx: &RunContext,
    out_dir: &Path,
    force: bool,
) -> Result<Results> {
    let p: RewardAblationParams = parse_params(params)?;
    let variants: Vec<RewardVariant> = p
        .variants
        .iter()
        .map(|s| parse_variant(s))
        .collect::<Result<_>>()?;
    let jobs: Vec<(RewardVariant, u64)> = variants
        .iter()
        .flat_map(|&v| p.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let outcomes: Vec<Result<(RewardVariant, u64, f64)>> =
        map_indexed(ExecMode::Parallel, jobs.len(), |i| {
            let (variant, seed) = jobs[i];
            let dir = out_dir.join(format!(
                "teacher_{}_{}_seed{}",
                p.region,
                variant_tag(variant),
                seed
            ));
            let teacher = train_stage(ctx, &p.region, variant, seed, p.train_steps, &dir, force)?;
            // Episodes that never reached the goal count as one past the end;
            // medians stay comparable without inventing a success.
            let first = teacher
                .first_success_episode
                .unwrap_or(teacher.episodes_done as f64);
            Ok((variant, seed, first))
        });
    let mut results = Results::new();
    let mut by_variant: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    for o in outcomes {
        let (variant, seed, first) = o?;
        let tag = variant_tag(variant);
        results.insert(format!("first_success.{tag}.seed{seed}"), first);
        by_variant.entry(tag).or_default().push(first);
    }
    for (tag, firsts) in by_variant {
        results.insert(format!("first_success_median.{tag}"), median(&firsts));
    }
    Ok(results)
}

#[derive(Deserialize)]
struct DistillParams {
    /// Teacher training regions, e.g. ["A", "B"].
    teachers: Vec<String>,
    /// Battery in the unexplored region between the teachers.
    middle_battery: String,
    /// Home battery per teacher, same order as `teachers`.
    home_batteries: Vec<String>,
    #[serde(default)]
    include_baselines: bool,
    #[serde(default)]
    train_steps: Option<u64>,
    #[serde(default)]
    samples_per_teacher: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
}

fn distill_generalization(
    params: &toml::Table,
    ctx: &RunContext,
    out_dir: &Path,
    force: bool,
) -> Result<Results> {
    let p: DistillParams = parse_params(params)?;
    if p.teachers.len() != p.home_batteries.len() {
        return Err(Error::Config(
            "need one home battery per teacher, in order".into(),
        ));
    }
    let seed = p.seed.unwrap_or(0);
    let variant = ctx.config.reward.variant;

    // Teachers train in parallel.
    let teachers: Vec<Result<TrainedTeacher>> =
        map_indexed(ExecMode::Parallel, p.teachers.len(), |i| {
            let region = &p.teachers[i];
            let dir = out_dir.join(format!("teacher_{region}"));
            train_stage(ctx, region, variant, seed, p.train_steps, &dir, force)
        });
    let teachers: Vec<TrainedTeacher> = teachers.into_iter().collect::<Result<_>>()?;

    // Datasets, one per teacher, in their home regions.
    let n_samples = p
        .samples_per_teacher
        .unwrap_or(ctx.config.distill.samples_per_teacher);
    let datasets: Vec<Result<DistillDataset>> =
        map_indexed(ExecMode::Parallel, teachers.len(), |i| {
            let region_name = &p.teachers[i];
            let region = *ctx.config.region(region_name)?;
            let mut env = NavEnv::new(
                ctx.provider.as_ref(),
                &region,
                ctx.normalizer,
                ctx.config.env,
                ctx.config.reward,
            )?;
            let setup = CollectSetup {
                teacher_id: format!("teacher_{region_name}"),
                region,
                region_name: region_name.clone(),
                d_min_km: ctx.config.tasks.d_min_km,
                d_max_km: ctx.config.tasks.d_max_km,
                deficit_floors: deficit_floors(ctx, &region)?,
                seed: derive_seed(ctx.config.run.seed ^ seed, &format!("collect/{region_name}")),
                label: format!("collect/{region_name}"),
            };
            let ds = collect_dataset(&teachers[i].actor, &mut env, &setup, n_samples)?;
            ds.save(out_dir.join(format!("dataset_{region_name}.ds")))?;
            Ok(ds)
        });
    let datasets: Vec<DistillDataset> = datasets.into_iter().collect::<Result<_>>()?;

    // Student.
    let action_map = teachers[0].policy_meta.action_map;
    let distill_cfg = ctx.config.distill.clone();
    let DistillOutcome {
        student,
        validation,
    } = train_student(
        &datasets,
        &teachers[0].actor,
        &action_map,
        &distill_cfg,
        ctx.config.run.seed ^ seed,
        "distill",
        None,
    )?;
    crate::distill::write_validation_log(out_dir.join("student_validation.csv"), &validation)?;
    save_mlp(
        out_dir.join("student.mlp"),
        &student,
        Some(&teachers[0].policy_meta),
    )?;

    // Batteries: the middle one plus each home battery; identical task lists
    // for every policy.
    let mut battery_names: Vec<String> = vec![p.middle_battery.clone()];
    battery_names.extend(p.home_batteries.iter().cloned());
    let mut results = Results::new();
    let reports_dir = out_dir.join("reports");
    let mut comparison: Vec<MetricsReport> = Vec::new();
    for battery_name in &battery_names {
        let tasks = battery_tasks(ctx, battery_name)?;
        // Student.
        let student_actor = student.clone();
        let report = eval_battery(
            ctx,
            battery_name,
            &tasks,
            &move || {
                Box::new(ActorPolicy {
                    actor: student_actor.clone(),
                    name: "student".into(),
                }) as Box<dyn NavPolicy>
            },
            "student",
            &reports_dir,
        )?;
        results.insert(format!("sr.student.{battery_name}"), report.sr_permille);
        results.insert(format!("spl.student.{battery_name}"), report.spl_permille);
        comparison.push(MetricsReport {
            policy: format!("student@{battery_name}"),
            ..report
        });
        // Teachers.
        for (i, teacher) in teachers.iter().enumerate() {
            let region_name = &p.teachers[i];
            let actor = teacher.actor.clone();
            let name = format!("teacher_{region_name}");
            let report = eval_battery(
                ctx,
                battery_name,
                &tasks,
                &move || {
                    Box::new(ActorPolicy {
                        actor: actor.clone(),
                        name: "teacher".into(),
                    }) as Box<dyn NavPolicy>
                },
                &name,
                &reports_dir,
            )?;
            results.insert(
                format!("sr.teacher_{region_name}.{battery_name}"),
                report.sr_permille,
            );
            results.insert(
                format!("spl.teacher_{region_name}.{battery_name}"),
                report.spl_permille,
            );
            comparison.push(MetricsReport {
                policy: format!("teacher_{region_name}@{battery_name}"),
                ..report
            });
        }
    }
    // Baselines run on the middle battery only.
    if p.include_baselines {
        let tasks = battery_tasks(ctx, &p.middle_battery)?;
        for method in crate::baselines::MetaMethod::ALL {
            let cfg = ctx.config.meta_config(method);
            let name = format!("baseline_{}", method.name());
            let cfg_clone = cfg.clone();
            let report = eval_battery(
                ctx,
                &p.middle_battery,
                &tasks,
                &move || Box::new(MetaPolicy::new(cfg_clone.clone())) as Box<dyn NavPolicy>,
                &name,
                &reports_dir,
            )?;
            results.insert(
                format!("sr.{name}.{}", p.middle_battery),
                report.sr_permille,
            );
            results.insert(
                format!("spl.{name}.{}", p.middle_battery),
                report.spl_permille,
            );
            comparison.push(MetricsReport {
                policy: format!("{name}@{}", p.middle_battery),
                ..report
            });
        }
    }
    write_comparison_csv(out_dir.join("comparison.csv"), &comparison)?;
    Ok(results)
}

#[derive(Deserialize)]
struct DeterminismParams {
    inner_pipeline: String,
    #[serde(default)]
    inner: toml::Table,
}

/// Run the inner pipeline twice with caching disabled and compare every
/// emitted file byte for byte (the wall-time column of training logs is
/// excluded, as are the stage markers that restate config digests).
fn determinism(params: &toml::Table, ctx: &RunContext, out_dir: &Path) -> Result<Results> {
    let p: DeterminismParams = parse_params(params)?;
    let dir_a = out_dir.join("rerun1");
    let dir_b = out_dir.join("rerun2");
    for d in [&dir_a, &dir_b] {
        if d.exists() {
            std::fs::remove_dir_all(d).map_err(|e| Error::io(d.display().to_string(), e))?;
        }
        std::fs::create_dir_all(d).map_err(|e| Error::io(d.display().to_string(), e))?;
    }
    run_pipeline(&p.inner_pipeline, &p.inner, ctx, &dir_a, true)?;
    run_pipeline(&p.inner_pipeline, &p.inner, ctx, &dir_b, true)?;
    let mut mismatches = Vec::new();
    compare_trees(&dir_a, &dir_b, &mut mismatches)?;
    let mut results = Results::new();
    results.insert("mismatched_files".into(), mismatches.len() as f64);
    if !mismatches.is_empty() {
        let list = mismatches.join("\n");
        std::fs::write(out_dir.join("mismatches.txt"), list)
            .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    }
    Ok(results)
}

/// Strip the wall-time column from a training log so byte comparison sees
/// only the deterministic payload.
fn strip_wall_ms(content: &str) -> String {
    content
        .lines()
        .map(|line| match line.rsplit_once(',') {
            Some((head, _)) => head.to_string(),
            None => line.to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn compare_trees(a: &Path, b: &Path, mismatches: &mut Vec<String>) -> Result<()> {
    let mut entries: Vec<PathBuf> = Vec::new();
    collect_files(a, a, &mut entries)?;
    let mut other: Vec<PathBuf> = Vec::new();
    collect_files(b, b, &mut other)?;
    if entries != other {
        mismatches.push(format!(
            "file sets differ: {} vs {} entries",
            entries.len(),
            other.len()
        ));
    }
    for rel in &entries {
        let fa = a.join(rel);
        let fb = b.join(rel);
        if !fb.exists() {
            mismatches.push(format!("missing in rerun2: {}", rel.display()));
            continue;
        }
        let ca = std::fs::read(&fa).map_err(|e| Error::io(fa.display().to_string(), e))?;
        let cb = std::fs::read(&fb).map_err(|e| Error::io(fb.display().to_string(), e))?;
        let name = rel.file_name().unwrap_or_default().to_string_lossy();
        let equal = if name == "training_log.csv" {
            strip_wall_ms(&String::from_utf8_lossy(&ca))
                == strip_wall_ms(&String::from_utf8_lossy(&cb))
        } else {
            ca == cb
        };
        if !equal {
            mismatches.push(format!("content differs: {}", rel.display()));
        }
    }
    Ok(())
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir.display().to_string(), e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir.display().to_string(), e))?;
    entries.sort_by_key(|e| e.path());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).unwrap().to_path_buf());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assertion_evaluation() {
        let mut results = Results::new();
        results.insert("a".into(), 10.0);
        results.insert("b".into(), 4.0);
        let ok = AssertionSpec {
            lhs: "a".into(),
            op: ">=".into(),
            rhs: "b".into(),
            margin: 5.0,
            factor: 1.0,
            note: None,
        };
        assert!(evaluate_assertion(&ok, &results).is_ok());
        let fail = AssertionSpec {
            lhs: "a".into(),
            op: ">=".into(),
            rhs: "b".into(),
            margin: 7.0,
            factor: 1.0,
            note: None,
        };
        assert!(evaluate_assertion(&fail, &results).is_err());
        // Factor: a <= b * 3 passes (10 <= 12).
        let factor = AssertionSpec {
            lhs: "a".into(),
            op: "<=".into(),
            rhs: "b".into(),
            margin: 0.0,
            factor: 3.0,
            note: None,
        };
        assert!(evaluate_assertion(&factor, &results).is_ok());
        // Literals on both sides.
        let lit = AssertionSpec {
            lhs: "a".into(),
            op: "<".into(),
            rhs: "11".into(),
            margin: 0.0,
            factor: 1.0,
            note: None,
        };
        assert!(evaluate_assertion(&lit, &results).is_ok());
        // Unknown fields fail with a message instead of panicking.
        let unknown = AssertionSpec {
            lhs: "zzz".into(),
            op: "<".into(),
            rhs: "1".into(),
            margin: 0.0,
            factor: 1.0,
            note: None,
        };
        let err = evaluate_assertion(&unknown, &results).unwrap_err();
        assert!(err.contains("zzz"));
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn strip_wall_ms_drops_last_column() {
        let log = "episode,steps,return,first_success_flag,wall_ms\n0,10,1.5,0,123\n";
        let stripped = strip_wall_ms(log);
        assert!(stripped.contains("episode,steps,return,first_success_flag"));
        assert!(!stripped.contains("123"));
        assert!(!stripped.contains("wall_ms"));
    }

    #[test]
    fn trivially_true_scenario_passes_with_empty_diff() {
        let dir = std::env::temp_dir().join("geonav_scenario_noop");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(
            dir.join("desk.toml"),
            crate::config::REPRO_CONFIG_TOML,
        )
        .unwrap();
        std::fs::write(
            dir.join("scenario.toml"),
            r#"
name = "noop-sanity"
config = "desk.toml"
pipeline = "noop"

[[assertions]]
lhs = "1"
op = "=="
rhs = "1"
"#,
        )
        .unwrap();
        let out = run_scenario(dir.join("scenario.toml"), Some(dir.join("out")), false).unwrap();
        assert!(out.passed, "failures: {:?}", out.failures);
        assert!(out.out_dir.join("summary.csv").exists());
        assert!(out.out_dir.join("diff_report.txt").exists());
        let report = std::fs::read_to_string(out.out_dir.join("diff_report.txt")).unwrap();
        assert!(!report.contains("FAIL"));
    }

    #[test]
    fn failing_assertion_is_reported() {
        let dir = std::env::temp_dir().join("geonav_scenario_fail");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("desk.toml"), crate::config::REPRO_CONFIG_TOML).unwrap();
        std::fs::write(
            dir.join("scenario.toml"),
            r#"
name = "doomed"
config = "desk.toml"
pipeline = "noop"

[[assertions]]
lhs = "2"
op = "<"
rhs = "1"
"#,
        )
        .unwrap();
        let out = run_scenario(dir.join("scenario.toml"), Some(dir.join("out")), false).unwrap();
        assert!(!out.passed);
        assert_eq!(out.failures.len(), 1);
        let report = std::fs::read_to_string(out.out_dir.join("diff_report.txt")).unwrap();
        assert!(report.contains("FAIL"));
    }
}
