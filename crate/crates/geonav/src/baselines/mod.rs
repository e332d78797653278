//! Metaheuristic navigation baselines: per-step population search over
//! candidate headings, minimizing the navigation objective at a virtual probe
//! point, executed step by step through the same environment as the learned
//! policies.
//!
//! The search space is the circle of absolute headings; all four methods wrap
//! positions and distances accordingly and keep an elite best-ever candidate.

mod search;

pub use search::{search_heading, SearchResult};

use serde::{Deserialize, Serialize};

use crate::env::{objective, Action, NavEnv, Termination, TrajectoryRow};
use crate::error::Result;
use crate::field::{FieldProvider, FieldSample};
use crate::geo::{wrap_angle, LocalFrame};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetaMethod {
    #[serde(rename = "PSO")]
    Pso,
    #[serde(rename = "DE")]
    De,
    #[serde(rename = "GA")]
    Ga,
    #[serde(rename = "AFSA")]
    Afsa,
}

impl MetaMethod {
    pub const ALL: [MetaMethod; 4] = [
        MetaMethod::Pso,
        MetaMethod::De,
        MetaMethod::Ga,
        MetaMethod::Afsa,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MetaMethod::Pso => "PSO",
            MetaMethod::De => "DE",
            MetaMethod::Ga => "GA",
            MetaMethod::Afsa => "AFSA",
        }
    }

    pub fn parse(s: &str) -> Option<MetaMethod> {
        match s.to_ascii_uppercase().as_str() {
            "PSO" => Some(MetaMethod::Pso),
            "DE" => Some(MetaMethod::De),
            "GA" => Some(MetaMethod::Ga),
            "AFSA" => Some(MetaMethod::Afsa),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PsoCoef {
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
}

impl Default for PsoCoef {
    fn default() -> Self {
        PsoCoef {
            inertia: 0.72,
            cognitive: 1.49,
            social: 1.49,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DeCoef {
    pub differential_weight: f64,
    pub crossover_rate: f64,
}

impl Default for DeCoef {
    fn default() -> Self {
        DeCoef {
            differential_weight: 0.5,
            crossover_rate: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GaCoef {
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub mutation_std: f64,
    pub tournament: usize,
}

impl Default for GaCoef {
    fn default() -> Self {
        GaCoef {
            crossover_rate: 0.9,
            mutation_rate: 0.1,
            mutation_std: 0.3,
            tournament: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AfsaCoef {
    /// Perception range, radians.
    pub visual: f64,
    /// Move step, radians.
    pub step: f64,
    /// Crowding threshold in (0, 1].
    pub crowding: f64,
    pub try_number: usize,
}

impl Default for AfsaCoef {
    fn default() -> Self {
        AfsaCoef {
            visual: std::f64::consts::FRAC_PI_4,
            step: std::f64::consts::FRAC_PI_8,
            crowding: 0.618,
            try_number: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaConfig {
    pub method: MetaMethod,
    pub population: usize,
    pub iterations_per_step: usize,
    /// Virtual probe distance; also the executed step length before the
    /// remaining-distance shrink kicks in.
    pub probe_dist_km: f64,
    #[serde(default)]
    pub pso: PsoCoef,
    #[serde(default)]
    pub de: DeCoef,
    #[serde(default)]
    pub ga: GaCoef,
    #[serde(default)]
    pub afsa: AfsaCoef,
}

impl MetaConfig {
    pub fn new(method: MetaMethod) -> Self {
        MetaConfig {
            method,
            population: 30,
            iterations_per_step: 20,
            probe_dist_km: 5.0,
            pso: PsoCoef::default(),
            de: DeCoef::default(),
            ga: GaCoef::default(),
            afsa: AfsaCoef::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub heading: f64,
    pub fitness: f64,
}

/// Objective value at a virtual probe `probe_dist` km along `heading` from
/// the current position. Out-of-coverage probes return the +inf sentinel so
/// the search steers back inside.
pub fn evaluate_candidate(
    provider: &dyn FieldProvider,
    frame: &LocalFrame,
    pos_km: (f64, f64),
    heading: f64,
    probe_dist_km: f64,
    dest: &FieldSample,
    origin: &FieldSample,
) -> f64 {
    let p = frame.to_geo(
        pos_km.0 + probe_dist_km * heading.cos(),
        pos_km.1 + probe_dist_km * heading.sin(),
    );
    if !provider.contains(&p) {
        return f64::INFINITY;
    }
    match provider.sample(&p) {
        Ok(s) => objective(&s, dest, origin).unwrap_or(f64::INFINITY),
        Err(_) => f64::INFINITY,
    }
}

/// Everything a per-step search needs to know about the episode state.
pub struct MetaStepContext<'a> {
    pub provider: &'a dyn FieldProvider,
    pub frame: &'a LocalFrame,
    pub pos_km: (f64, f64),
    pub heading_rad: f64,
    pub origin_sample: &'a FieldSample,
    pub dest_sample: &'a FieldSample,
    /// Objective at the current position.
    pub objective: f64,
    /// Straight-line task length, used for the remaining-distance estimate.
    pub straight_line_km: f64,
    pub psi_max_rad: f64,
    pub dist_max_km: f64,
}

/// Run the configured search over headings and convert the winner into an
/// executable action: the turn increment is clipped to the same kinematic
/// bound as the learned policies, and the step length is the probe distance
/// shrunk by a remaining-distance estimate derived from the objective
/// (objective 3 at the task origin scales to the full task length).
pub fn metaheuristic_step(
    ctx: &MetaStepContext,
    cfg: &MetaConfig,
    rng: &mut Rng,
    init: Option<&[f64]>,
) -> (Action, Candidate, Vec<f64>) {
    let fitness = |heading: f64| {
        evaluate_candidate(
            ctx.provider,
            ctx.frame,
            ctx.pos_km,
            heading,
            cfg.probe_dist_km,
            ctx.dest_sample,
            ctx.origin_sample,
        )
    };
    let result = search_heading(&fitness, cfg, rng, init);
    let psi = wrap_angle(result.best.heading - ctx.heading_rad)
        .clamp(-ctx.psi_max_rad, ctx.psi_max_rad);
    let remaining_est = ctx.straight_line_km * (ctx.objective / 3.0).max(0.0).sqrt();
    let dist = cfg
        .probe_dist_km
        .min(remaining_est)
        .clamp(0.0, ctx.dist_max_km);
    (
        Action {
            psi_rad: psi,
            dist_km: dist,
        },
        result.best,
        result.history,
    )
}

/// One full episode driven by the selected metaheuristic. Returns the
/// trajectory rows, the termination, and the success flag.
pub fn navigate_metaheuristic(
    env: &mut NavEnv,
    task: &crate::env::NavTask,
    cfg: &MetaConfig,
    rng: &mut Rng,
) -> Result<(Vec<TrajectoryRow>, Termination, bool)> {
    let (state, _) = env.reset(task)?;
    let frame = *env.frame();
    let straight = frame.distance_km(&task.origin, &task.destination);
    let origin_sample = *env.origin_sample()?;
    let dest_sample = *env.dest_sample()?;
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
    loop {
        let state = *env.state()?;
        let ctx = MetaStepContext {
            provider: env.provider(),
            frame: &frame,
            pos_km: (state.x_km, state.y_km),
            heading_rad: state.heading_rad,
            origin_sample: &origin_sample,
            dest_sample: &dest_sample,
            objective: env.objective_value()?,
            straight_line_km: straight,
            psi_max_rad: env.config().psi_max_rad,
            dist_max_km: env.config().dist_max_km,
        };
        let (action, _, history) = metaheuristic_step(&ctx, cfg, rng, None);
        debug_assert!(
            history.windows(2).all(|w| w[1] <= w[0]),
            "per-iteration best fitness must be non-increasing"
        );
        let out = env.step(&action)?;
        let new_state = *env.state()?;
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
        if out.done {
            let term = out.termination.expect("done implies termination");
            return Ok((rows, term, term == Termination::Goal));
        }
    }
}
