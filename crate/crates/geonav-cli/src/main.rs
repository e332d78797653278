//! Command-line entry point: field ingestion and queries, teacher training,
//! multi-teacher distillation, evaluation batteries, task generation, and
//! scripted scenarios — all driven by one declarative run-config file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use geonav::config::RunContext;
use geonav::distill::{collect_dataset, train_student, CollectSetup, DistillConfig};
use geonav::env::NavEnv;
use geonav::error::Error;
use geonav::eval::{
    battery_box_stats, run_battery, write_box_stats_csv, write_comparison_csv,
    write_episode_records_csv, write_metrics_report, ActorPolicy, BatteryOptions, EnvSpec,
    MetaPolicy, NavPolicy,
};
use geonav::field::{gradient, Element, FieldGrid, FieldProvider as _};
use geonav::geo::{GeoPoint, LocalFrame};
use geonav::neural::{load_mlp, save_mlp};
use geonav::par::ExecMode;
use geonav::rng::derive_seed;
use geonav::scenario::{battery_tasks, parse_variant, run_scenario, train_stage, variant_tag};

#[derive(Parser)]
#[command(
    name = "geonav",
    about = "Geomagnetic navigation laboratory: train region-local teachers, distill a region-general student, and benchmark against metaheuristic baselines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one teacher in a named region.
    Train(TrainArgs),
    /// Distill teacher checkpoints into one student actor.
    Distill(DistillArgs),
    /// Run a task battery through a policy and emit reports.
    Eval(EvalArgs),
    /// Field utilities: import, query, export-contours.
    Field(FieldArgs),
    /// Task utilities.
    Tasks(TasksArgs),
    /// Run a scripted scenario with expected-outcome assertions.
    Scenario(ScenarioArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Region name from the config's [regions] table.
    #[arg(long)]
    region: String,
    /// Reward variant override: SR, ER, or ST.
    #[arg(long)]
    variant: Option<String>,
    /// Seed offset folded into the config's root seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Environment-step budget override.
    #[arg(long)]
    steps: Option<u64>,
    /// Retrain even when cached artifacts match.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct DistillArgs {
    #[arg(long)]
    config: PathBuf,
    /// Teacher checkpoint: an agent directory or an actor manifest path.
    /// Repeat once per teacher.
    #[arg(long = "teacher", required = true)]
    teachers: Vec<PathBuf>,
    /// Source region name per teacher, same order. Falls back to the region
    /// recorded in the teacher's training metadata.
    #[arg(long = "teacher-region")]
    teacher_regions: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    /// Actor checkpoint path, or `baseline:PSO|DE|GA|AFSA`.
    #[arg(long)]
    policy: String,
    /// Battery name from the config's [batteries] table.
    #[arg(long)]
    battery: String,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip per-task trajectory CSVs.
    #[arg(long)]
    no_trajectories: bool,
}

#[derive(Args)]
struct FieldArgs {
    #[command(subcommand)]
    sub: FieldSub,
}

#[derive(Subcommand)]
enum FieldSub {
    /// Validate a grid CSV and write the normalized form.
    Import {
        path: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the seven field elements at a point.
    Query {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        lon: f64,
        #[arg(long, allow_negative_numbers = true)]
        lat: f64,
    },
    /// Write a total-intensity lattice CSV over the super-region.
    ExportContours {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 91)]
        nlon: usize,
        #[arg(long, default_value_t = 51)]
        nlat: usize,
    },
}

#[derive(Args)]
struct TasksArgs {
    #[command(subcommand)]
    sub: TasksSub,
}

#[derive(Subcommand)]
enum TasksSub {
    /// Generate a battery's task list as CSV.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        battery: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    #[command(subcommand)]
    sub: ScenarioSub,
}

#[derive(Subcommand)]
enum ScenarioSub {
    /// Execute a scenario file and evaluate its assertions.
    Run {
        path: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Recompute every stage even when cached artifacts match.
        #[arg(long)]
        force: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> geonav::Result<ExitCode> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Distill(args) => cmd_distill(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Field(args) => match args.sub {
            FieldSub::Import { path, out } => cmd_field_import(&path, out.as_deref()),
            FieldSub::Query { config, lon, lat } => cmd_field_query(&config, lon, lat),
            FieldSub::ExportContours {
                config,
                out,
                nlon,
                nlat,
            } => cmd_field_contours(&config, &out, nlon, nlat),
        },
        Command::Tasks(args) => match args.sub {
            TasksSub::Generate {
                config,
                battery,
                out,
            } => cmd_tasks_generate(&config, &battery, &out),
        },
        Command::Scenario(args) => match args.sub {
            ScenarioSub::Run { path, out, force } => cmd_scenario_run(&path, out, force),
        },
    }
}

fn cmd_train(args: TrainArgs) -> geonav::Result<ExitCode> {
    let ctx = RunContext::load(&args.config)?;
    let variant = match &args.variant {
        Some(v) => parse_variant(v)?,
        None => ctx.config.reward.variant,
    };
    let dir = ctx.out_root().join(format!(
        "teacher_{}_{}_seed{}",
        args.region,
        variant_tag(variant),
        args.seed
    ));
    let teacher = train_stage(
        &ctx,
        &args.region,
        variant,
        args.seed,
        args.steps,
        &dir,
        args.force,
    )?;
    // Region metadata so later distillation can find the source region.
    std::fs::write(
        dir.join("train_meta.toml"),
        format!(
            "region = \"{}\"\nvariant = \"{}\"\nseed = {}\n",
            args.region,
            variant_tag(variant),
            args.seed
        ),
    )
    .map_err(|e| Error::io(dir.display().to_string(), e))?;
    println!("teacher checkpoint: {}", dir.display());
    if let Some(first) = teacher.first_success_episode {
        println!("first successful episode: {first}");
    }
    Ok(ExitCode::SUCCESS)
}

fn teacher_actor_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        let best = p.join("policy.mlp");
        if best.exists() {
            best
        } else {
            p.join("actor.mlp")
        }
    } else {
        p.to_path_buf()
    }
}

fn teacher_region_from_meta(p: &Path) -> Option<String> {
    let dir = if p.is_dir() { p } else { p.parent()? };
    let text = std::fs::read_to_string(dir.join("train_meta.toml")).ok()?;
    let table: toml::Table = text.parse().ok()?;
    table.get("region")?.as_str().map(str::to_string)
}

fn cmd_distill(args: DistillArgs) -> geonav::Result<ExitCode> {
    let ctx = RunContext::load(&args.config)?;
    let out_dir = args.out.unwrap_or_else(|| ctx.out_root().join("student"));
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let mut actors: Vec<geonav::neural::Mlp> = Vec::new();
    let mut metas = Vec::new();
    let mut regions = Vec::new();
    for (i, teacher) in args.teachers.iter().enumerate() {
        let path = teacher_actor_path(teacher);
        let (actor, meta) = load_mlp(&path)?;
        let meta = meta.ok_or_else(|| {
            Error::Checkpoint(format!(
                "{} lacks policy metadata; train it with this tool",
                path.display()
            ))
        })?;
        if let Some(reference) = actors.first() {
            if !actor.same_arch(reference) {
                return Err(Error::ArchMismatch {
                    expected: reference.arch_string(),
                    got: actor.arch_string(),
                });
            }
        }
        let region = args
            .teacher_regions
            .get(i)
            .cloned()
            .or_else(|| teacher_region_from_meta(teacher))
            .ok_or_else(|| {
                Error::Config(format!(
                    "no region known for teacher {}; pass --teacher-region",
                    teacher.display()
                ))
            })?;
        regions.push(region);
        actors.push(actor);
        metas.push(meta);
    }

    let n_samples = args
        .samples
        .unwrap_or(ctx.config.distill.samples_per_teacher);
    let mut datasets = Vec::new();
    for (i, actor) in actors.iter().enumerate() {
        let region = *ctx.config.region(&regions[i])?;
        let mut env = NavEnv::new(
            ctx.provider.as_ref(),
            &region,
            ctx.normalizer,
            ctx.config.env,
            ctx.config.reward,
        )?;
        let setup = CollectSetup {
            teacher_id: format!("teacher{i}"),
            region,
            region_name: regions[i].clone(),
            d_min_km: ctx.config.tasks.d_min_km,
            d_max_km: ctx.config.tasks.d_max_km,
            deficit_floors: geonav::scenario::deficit_floors(&ctx, &region)?,
            seed: derive_seed(ctx.config.run.seed, &format!("cli-collect/{i}")),
            label: format!("cli-collect/{i}"),
        };
        let ds = collect_dataset(actor, &mut env, &setup, n_samples)?;
        ds.save(out_dir.join(format!("dataset_{}.ds", regions[i])))?;
        datasets.push(ds);
    }

    let cfg = DistillConfig {
        samples_per_teacher: n_samples,
        ..ctx.config.distill.clone()
    };
    let outcome = train_student(
        &datasets,
        &actors[0],
        &metas[0].action_map,
        &cfg,
        ctx.config.run.seed,
        "cli-distill",
        None,
    )?;
    geonav::distill::write_validation_log(
        out_dir.join("student_validation.csv"),
        &outcome.validation,
    )?;
    let student_path = out_dir.join("student.mlp");
    save_mlp(&student_path, &outcome.student, Some(&metas[0]))?;
    println!("student checkpoint: {}", student_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> geonav::Result<ExitCode> {
    let ctx = RunContext::load(&args.config)?;
    let battery = ctx.config.battery(&args.battery)?;
    let region = *ctx.config.region(&battery.region)?;
    let tasks = battery_tasks(&ctx, &args.battery)?;

    let safe_policy = args.policy.replace([':', '/', '\\'], "_");
    let out_dir = args
        .out
        .unwrap_or_else(|| ctx.out_root().join(format!("eval_{}_{safe_policy}", args.battery)));
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    // A policy spec is either `baseline:<METHOD>` or an actor checkpoint path.
    let (factory, normalizer): (Box<dyn Fn() -> Box<dyn NavPolicy> + Sync>, _) =
        if let Some(method_name) = args.policy.strip_prefix("baseline:") {
            let method = geonav::baselines::MetaMethod::parse(method_name)
                .ok_or_else(|| Error::Config(format!("unknown baseline method `{method_name}`")))?;
            let cfg = ctx.config.meta_config(method);
            (
                Box::new(move || Box::new(MetaPolicy::new(cfg.clone())) as Box<dyn NavPolicy>),
                ctx.normalizer,
            )
        } else {
            let path = teacher_actor_path(Path::new(&args.policy));
            let (actor, meta) = load_mlp(&path)?;
            let meta = meta.ok_or_else(|| {
                Error::Checkpoint(format!("{} lacks policy metadata", path.display()))
            })?;
            (
                Box::new(move || {
                    Box::new(ActorPolicy {
                        actor: actor.clone(),
                        name: "actor".into(),
                    }) as Box<dyn NavPolicy>
                }),
                meta.normalizer,
            )
        };

    let spec = EnvSpec {
        provider: ctx.provider.as_ref(),
        region,
        normalizer,
        env_cfg: ctx.config.env,
        reward_cfg: ctx.config.reward,
    };
    let opts = BatteryOptions {
        seed: derive_seed(ctx.config.run.seed, &format!("eval/{}", args.battery)),
        label: format!("eval/{}/{}", args.battery, args.policy),
        mode: ExecMode::Parallel,
        trajectory_dir: (!args.no_trajectories).then(|| out_dir.join("trajectories")),
    };
    let (records, report) = run_battery(&spec, factory, &args.policy, &tasks, &opts)?;
    write_episode_records_csv(out_dir.join("records.csv"), &records)?;
    write_metrics_report(out_dir.join("metrics.csv"), &report)?;
    write_comparison_csv(out_dir.join("comparison.csv"), std::slice::from_ref(&report))?;
    write_box_stats_csv(
        out_dir.join("boxstats.csv"),
        &args.policy,
        &battery_box_stats(&records),
    )?;
    println!(
        "{}: SR {:.0} permille, SPL {:.1} permille over {} tasks -> {}",
        args.policy,
        report.sr_permille,
        report.spl_permille,
        report.n_tasks,
        out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_field_import(path: &Path, out: Option<&Path>) -> geonav::Result<ExitCode> {
    let grid = FieldGrid::load_csv(path)?;
    let cov = grid.coverage();
    println!(
        "grid ok: {} x {} nodes, lon [{}, {}], lat [{}, {}]",
        grid.nlon(),
        grid.nlat(),
        cov.lon_min,
        cov.lon_max,
        cov.lat_min,
        cov.lat_max
    );
    if let Some(out) = out {
        grid.save_csv(out)?;
        println!("normalized grid written to {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_field_query(config: &Path, lon: f64, lat: f64) -> geonav::Result<ExitCode> {
    let ctx = RunContext::load(config)?;
    let p = GeoPoint::new(lon, lat)?;
    let s = ctx.provider.sample(&p)?;
    println!("lon {lon}, lat {lat}");
    println!("BF  {:.3} nT", s.bf);
    println!("BH  {:.3} nT", s.bh);
    println!("BX  {:.3} nT", s.bx);
    println!("BY  {:.3} nT", s.by);
    println!("BZ  {:.3} nT", s.bz);
    println!("D   {:.6} deg", s.decl_rad.to_degrees());
    println!("I   {:.6} deg", s.incl_rad.to_degrees());
    if s.degenerate_horizontal {
        println!("note: horizontal intensity is degenerate; D undefined");
    }
    // Per-km gradients of the observed elements, handy for diagnostics.
    let frame = LocalFrame::for_region(&ctx.config.super_region);
    for e in [Element::Decl, Element::Incl, Element::Bh] {
        if let Ok(g) = gradient(
            ctx.provider.as_ref(),
            &frame,
            &p,
            e,
            ctx.config.env.gradient_step_km,
        ) {
            println!(
                "grad {:>2}: east {:+.6e}, north {:+.6e} per km",
                e.name(),
                g.east_per_km,
                g.north_per_km
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_field_contours(
    config: &Path,
    out: &Path,
    nlon: usize,
    nlat: usize,
) -> geonav::Result<ExitCode> {
    use std::io::Write as _;
    let ctx = RunContext::load(config)?;
    let r = ctx.config.super_region;
    let f = std::fs::File::create(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(f);
    let io_err = |e: std::io::Error| Error::io(out.display().to_string(), e);
    writeln!(w, "lon_deg,lat_deg,bf_nt").map_err(io_err)?;
    for j in 0..nlat {
        for i in 0..nlon {
            let lon = r.lon_min + (r.lon_max - r.lon_min) * i as f64 / (nlon - 1) as f64;
            let lat = r.lat_min + (r.lat_max - r.lat_min) * j as f64 / (nlat - 1) as f64;
            let s = ctx.provider.sample(&GeoPoint {
                lon_deg: lon,
                lat_deg: lat,
            })?;
            writeln!(w, "{lon},{lat},{}", s.bf).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;
    println!("contour lattice written to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_tasks_generate(config: &Path, battery: &str, out: &Path) -> geonav::Result<ExitCode> {
    use std::io::Write as _;
    let ctx = RunContext::load(config)?;
    let tasks = battery_tasks(&ctx, battery)?;
    let f = std::fs::File::create(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(f);
    let io_err = |e: std::io::Error| Error::io(out.display().to_string(), e);
    writeln!(w, "origin_lon,origin_lat,dest_lon,dest_lat,zeta,max_steps").map_err(io_err)?;
    for t in &tasks {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            t.origin.lon_deg,
            t.origin.lat_deg,
            t.destination.lon_deg,
            t.destination.lat_deg,
            t.zeta,
            t.max_steps
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    println!("{} tasks written to {}", tasks.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_scenario_run(path: &Path, out: Option<PathBuf>, force: bool) -> geonav::Result<ExitCode> {
    let outcome = run_scenario(path, out, force)?;
    for line in &outcome.report_lines {
        println!("{line}");
    }
    println!("summary: {}", outcome.out_dir.join("summary.csv").display());
    if outcome.passed {
        println!("scenario {}: PASS", outcome.name);
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "scenario {}: FAIL ({} violated assertion(s))",
            outcome.name,
            outcome.failures.len()
        );
        Ok(ExitCode::FAILURE)
    }
}
