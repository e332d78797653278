//! Twin-critic, delayed-policy-update trainer over the navigation
//! environment: replay buffer, clipped double-Q targets, deterministic policy
//! gradient, Polyak-tracked targets, and Gaussian exploration noise.
//!
//! Internally actions live in normalized [-1, 1]^2; the actor's bounded head
//! produces physical actions and the [`ActionMap`] converts between the two.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::env::{generate_tasks, ActionMap, NavEnv, Observation, Termination};
use crate::error::{Error, Result};
use crate::geo::RegionBounds;
use crate::neural::{
    adam_step, load_mlp, polyak_update, save_mlp, AdamState, BatchTrace, Mlp, OutputActivation,
    PolicyMeta,
};
use crate::rng::{rng_from, Rng};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub const OBS_DIM: usize = 6;
pub const ACT_DIM: usize = 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Td3Config {
    pub gamma: f64,
    pub tau: f64,
    pub batch: usize,
    pub lr: f64,
    /// Exploration noise, std in normalized action units.
    pub exploration_noise_std: f64,
    /// Target policy smoothing noise std (normalized units). 0 keeps the
    /// plain clipped double-Q target.
    pub target_smoothing_std: f64,
    pub target_noise_clip: f64,
    pub policy_delay: u32,
    /// Gradient updates per environment step after warmup.
    pub updates_per_step: u32,
    /// Pre-activation L2 weight on the actor's bounded head; nonzero values
    /// keep the head from saturating permanently at an action bound.
    pub actor_head_reg: f64,
    pub warmup_steps: u64,
    pub total_env_steps: u64,
    /// Optional episode budget; training stops at whichever limit hits first.
    pub max_episodes: Option<u64>,
    pub hidden: Vec<usize>,
    pub replay_capacity: usize,
    /// Episode budget for training tasks; defaults to the environment's
    /// max_steps. Shorter training episodes raise task throughput without
    /// touching the evaluation protocol.
    pub train_max_steps: Option<u32>,
    /// Noiseless validation cadence (env steps). The best-validated actor is
    /// kept alongside the final one; policy oscillation makes the last
    /// checkpoint a lottery otherwise.
    pub validation_every_steps: Option<u64>,
    pub validation_tasks: usize,
    /// Save a resumable checkpoint at the first episode boundary after each
    /// interval of env steps.
    pub checkpoint_every_steps: Option<u64>,
}

impl Default for Td3Config {
    fn default() -> Self {
        Td3Config {
            gamma: 0.995,
            tau: 0.005,
            batch: 256,
            lr: 3e-4,
            exploration_noise_std: 0.1,
            target_smoothing_std: 0.0,
            target_noise_clip: 0.5,
            policy_delay: 2,
            updates_per_step: 1,
            actor_head_reg: 0.0,
            warmup_steps: 1000,
            total_env_steps: 50_000,
            max_episodes: None,
            hidden: vec![64, 64],
            replay_capacity: 50_000,
            train_max_steps: None,
            validation_every_steps: None,
            validation_tasks: 64,
            checkpoint_every_steps: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: [f64; OBS_DIM],
    pub action: [f64; ACT_DIM],
    pub reward: f64,
    pub next_obs: [f64; OBS_DIM],
    /// Goal termination only: step-budget and coverage truncations bootstrap
    /// normally.
    pub done_goal: bool,
}

/// Fixed-capacity ring buffer, oldest-first overwrite.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            data: Vec::new(),
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    /// Uniform i.i.d. indices (with replacement).
    pub fn sample_indices(&self, batch: usize, rng: &mut Rng, out: &mut Vec<usize>) {
        out.clear();
        for _ in 0..batch {
            out.push(rng.gen_range(0..self.data.len()));
        }
    }
}

pub struct Td3Agent {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub critic1_target: Mlp,
    pub critic2_target: Mlp,
    pub adam_actor: AdamState,
    pub adam_critic1: AdamState,
    pub adam_critic2: AdamState,
    pub cfg: Td3Config,
    pub action_map: ActionMap,
    critic_updates: u64,
    target_updates: u64,
    scratch: Scratch,
}

/// Reused batch buffers for the update steps.
struct Scratch {
    idx: Vec<usize>,
    obs: Vec<f64>,
    next_obs: Vec<f64>,
    critic_in: Vec<f64>,
    targets: Vec<f64>,
    upstream: Vec<f64>,
    grads: Vec<f64>,
    actor_trace: BatchTrace,
    critic_trace: BatchTrace,
    aux_trace: BatchTrace,
}

impl Scratch {
    fn new(actor: &Mlp, critic: &Mlp, batch: usize) -> Self {
        Scratch {
            idx: Vec::with_capacity(batch),
            obs: vec![0.0; batch * OBS_DIM],
            next_obs: vec![0.0; batch * OBS_DIM],
            critic_in: vec![0.0; batch * (OBS_DIM + ACT_DIM)],
            targets: vec![0.0; batch],
            upstream: vec![0.0; batch * ACT_DIM],
            grads: vec![0.0; actor.params().len().max(critic.params().len())],
            actor_trace: BatchTrace::new(actor, batch),
            critic_trace: BatchTrace::new(critic, batch),
            aux_trace: BatchTrace::new(critic, batch),
        }
    }
}

impl Td3Agent {
    pub fn new(cfg: Td3Config, action_map: ActionMap, rng: &mut Rng) -> Result<Self> {
        let mut actor_dims = vec![OBS_DIM];
        actor_dims.extend_from_slice(&cfg.hidden);
        actor_dims.push(ACT_DIM);
        let mut critic_dims = vec![OBS_DIM + ACT_DIM];
        critic_dims.extend_from_slice(&cfg.hidden);
        critic_dims.push(1);

        let head = OutputActivation::TanhBounded {
            lo: vec![-action_map.psi_max_rad, 0.0],
            hi: vec![action_map.psi_max_rad, action_map.dist_max_km],
        };
        let actor = Mlp::new(&actor_dims, head, rng)?;
        let critic1 = Mlp::new(&critic_dims, OutputActivation::Identity, rng)?;
        let critic2 = Mlp::new(&critic_dims, OutputActivation::Identity, rng)?;
        let scratch = Scratch::new(&actor, &critic1, cfg.batch);
        let (n_actor, n_critic) = (actor.params().len(), critic1.params().len());
        Ok(Td3Agent {
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            adam_actor: AdamState::new(n_actor, cfg.lr),
            adam_critic1: AdamState::new(n_critic, cfg.lr),
            adam_critic2: AdamState::new(n_critic, cfg.lr),
            cfg,
            action_map,
            critic_updates: 0,
            target_updates: 0,
            scratch,
        })
    }

    pub fn critic_update_count(&self) -> u64 {
        self.critic_updates
    }

    pub fn target_update_count(&self) -> u64 {
        self.target_updates
    }

    /// Deterministic actor output for `obs` in normalized units, optionally
    /// with exploration noise added and clipped to the action box.
    pub fn select_action(
        &self,
        obs: &Observation,
        explore: bool,
        rng: &mut Rng,
    ) -> Result<[f64; ACT_DIM]> {
        let phys = self.actor.forward(&obs.0)?;
        let mut u = self.action_map.normalize(&crate::env::Action {
            psi_rad: phys[0],
            dist_km: phys[1],
        });
        if explore {
            for v in u.iter_mut() {
                let n: f64 = StandardNormal.sample(rng);
                *v = (*v + n * self.cfg.exploration_noise_std).clamp(-1.0, 1.0);
            }
        }
        Ok(u)
    }

    fn fill_batch(&mut self, replay: &ReplayBuffer, rng: &mut Rng) {
        let batch = self.cfg.batch;
        replay.sample_indices(batch, rng, &mut self.scratch.idx);
        for (b, &i) in self.scratch.idx.iter().enumerate() {
            let t = replay.get(i);
            self.scratch.obs[b * OBS_DIM..(b + 1) * OBS_DIM].copy_from_slice(&t.obs);
            self.scratch.next_obs[b * OBS_DIM..(b + 1) * OBS_DIM].copy_from_slice(&t.next_obs);
        }
    }

    /// Clipped double-Q regression target for the current batch:
    /// `y = r + gamma * min(Q1', Q2')(s', pi'(s'))`, with the bootstrap
    /// masked on goal terminations.
    fn compute_targets(&mut self, replay: &ReplayBuffer, rng: &mut Rng) -> Result<()> {
        let batch = self.cfg.batch;
        self.actor_target.forward_batch(
            &self.scratch.next_obs,
            batch,
            &mut self.scratch.actor_trace,
        )?;
        for b in 0..batch {
            let out = self.scratch.actor_trace.output();
            let phys = crate::env::Action {
                psi_rad: out[b * ACT_DIM],
                dist_km: out[b * ACT_DIM + 1],
            };
            let mut u = self.action_map.normalize(&phys);
            if self.cfg.target_smoothing_std > 0.0 {
                for v in u.iter_mut() {
                    let n: f64 = StandardNormal.sample(rng);
                    let eps = (n * self.cfg.target_smoothing_std)
                        .clamp(-self.cfg.target_noise_clip, self.cfg.target_noise_clip);
                    *v = (*v + eps).clamp(-1.0, 1.0);
                }
            }
            let row = &mut self.scratch.critic_in
                [b * (OBS_DIM + ACT_DIM)..(b + 1) * (OBS_DIM + ACT_DIM)];
            row[..OBS_DIM]
                .copy_from_slice(&self.scratch.next_obs[b * OBS_DIM..(b + 1) * OBS_DIM]);
            row[OBS_DIM..].copy_from_slice(&u);
        }
        self.critic1_target.forward_batch(
            &self.scratch.critic_in,
            batch,
            &mut self.scratch.critic_trace,
        )?;
        self.critic2_target.forward_batch(
            &self.scratch.critic_in,
            batch,
            &mut self.scratch.aux_trace,
        )?;
        for b in 0..batch {
            let q1 = self.scratch.critic_trace.output()[b];
            let q2 = self.scratch.aux_trace.output()[b];
            let t = replay.get(self.scratch.idx[b]);
            let bootstrap = if t.done_goal { 0.0 } else { q1.min(q2) };
            self.scratch.targets[b] = t.reward + self.cfg.gamma * bootstrap;
        }
        Ok(())
    }

    /// One Adam step on both critics against the clipped double-Q targets.
    /// Returns the two mean squared error losses.
    pub fn critic_update(&mut self, replay: &ReplayBuffer, rng: &mut Rng) -> Result<(f64, f64)> {
        let batch = self.cfg.batch;
        self.fill_batch(replay, rng);
        self.compute_targets(replay, rng)?;
        // Critic input with the *stored* actions.
        for b in 0..batch {
            let t = replay.get(self.scratch.idx[b]);
            let row = &mut self.scratch.critic_in
                [b * (OBS_DIM + ACT_DIM)..(b + 1) * (OBS_DIM + ACT_DIM)];
            row[..OBS_DIM].copy_from_slice(&t.obs);
            row[OBS_DIM..].copy_from_slice(&t.action);
        }
        let mut losses = [0.0; 2];
        for (k, (critic, adam)) in [
            (&mut self.critic1, &mut self.adam_critic1),
            (&mut self.critic2, &mut self.adam_critic2),
        ]
        .into_iter()
        .enumerate()
        {
            let s = &mut self.scratch;
            critic.forward_batch(&s.critic_in, batch, &mut s.critic_trace)?;
            let mut loss = 0.0;
            s.upstream.resize(batch, 0.0);
            for b in 0..batch {
                let err = s.critic_trace.output()[b] - s.targets[b];
                loss += err * err;
                s.upstream[b] = 2.0 * err / batch as f64;
            }
            loss /= batch as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite("critic loss"));
            }
            let n = critic.params().len();
            s.grads[..n].iter_mut().for_each(|g| *g = 0.0);
            let upstream = s.upstream[..batch].to_vec();
            critic.backward_batch(&mut s.critic_trace, &upstream, &mut s.grads[..n])?;
            adam_step(critic.params_mut(), &s.grads[..n], adam)?;
            losses[k] = loss;
        }
        self.critic_updates += 1;
        Ok((losses[0], losses[1]))
    }

    /// One ascent step on the deterministic policy objective
    /// `mean Q1(s, pi(s))`, then a Polyak update of all three targets.
    /// Returns the objective value before the step.
    pub fn actor_update(&mut self, replay: &ReplayBuffer, rng: &mut Rng) -> Result<f64> {
        let batch = self.cfg.batch;
        self.fill_batch(replay, rng);
        self.actor
            .forward_batch(&self.scratch.obs, batch, &mut self.scratch.actor_trace)?;
        for b in 0..batch {
            let out = self.scratch.actor_trace.output();
            let u = self.action_map.normalize(&crate::env::Action {
                psi_rad: out[b * ACT_DIM],
                dist_km: out[b * ACT_DIM + 1],
            });
            let row = &mut self.scratch.critic_in
                [b * (OBS_DIM + ACT_DIM)..(b + 1) * (OBS_DIM + ACT_DIM)];
            row[..OBS_DIM].copy_from_slice(&self.scratch.obs[b * OBS_DIM..(b + 1) * OBS_DIM]);
            row[OBS_DIM..].copy_from_slice(&u);
        }
        let s = &mut self.scratch;
        self.critic1
            .forward_batch(&s.critic_in, batch, &mut s.critic_trace)?;
        let objective = s.critic_trace.output().iter().sum::<f64>() / batch as f64;
        if !objective.is_finite() {
            return Err(Error::NonFinite("actor objective"));
        }
        // Loss = -mean(Q); the critic's parameters only lend their input
        // gradient here, the accumulated critic grads are discarded.
        let upstream = vec![-1.0 / batch as f64; batch];
        let nc = self.critic1.params().len();
        s.grads[..nc].iter_mut().for_each(|g| *g = 0.0);
        self.critic1
            .backward_batch(&mut s.critic_trace, &upstream, &mut s.grads[..nc])?;
        // Chain through action normalization into the actor's physical head.
        s.upstream.resize(batch * ACT_DIM, 0.0);
        for b in 0..batch {
            let gi = &self.critic1.input_gradient(&s.critic_trace)
                [b * (OBS_DIM + ACT_DIM) + OBS_DIM..(b + 1) * (OBS_DIM + ACT_DIM)];
            s.upstream[b * ACT_DIM] = gi[0] / self.action_map.psi_max_rad;
            s.upstream[b * ACT_DIM + 1] = gi[1] * 2.0 / self.action_map.dist_max_km;
        }
        let na = self.actor.params().len();
        s.grads[..na].iter_mut().for_each(|g| *g = 0.0);
        let upstream_actor = s.upstream[..batch * ACT_DIM].to_vec();
        self.actor.backward_batch_reg(
            &mut s.actor_trace,
            &upstream_actor,
            self.cfg.actor_head_reg,
            &mut s.grads[..na],
        )?;
        adam_step(self.actor.params_mut(), &s.grads[..na], &mut self.adam_actor)?;

        polyak_update(&mut self.actor_target, &self.actor, self.cfg.tau)?;
        polyak_update(&mut self.critic1_target, &self.critic1, self.cfg.tau)?;
        polyak_update(&mut self.critic2_target, &self.critic2, self.cfg.tau)?;
        self.target_updates += 1;
        Ok(objective)
    }

    /// Save an agent checkpoint (networks, optimizer state, counters).
    pub fn save(&self, dir: &Path, policy: &PolicyMeta) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        save_mlp(dir.join("actor.mlp"), &self.actor, Some(policy))?;
        save_mlp(dir.join("actor_target.mlp"), &self.actor_target, None)?;
        save_mlp(dir.join("critic1.mlp"), &self.critic1, None)?;
        save_mlp(dir.join("critic2.mlp"), &self.critic2, None)?;
        save_mlp(dir.join("critic1_target.mlp"), &self.critic1_target, None)?;
        save_mlp(dir.join("critic2_target.mlp"), &self.critic2_target, None)?;
        for (name, st) in [
            ("adam_actor.bin", &self.adam_actor),
            ("adam_critic1.bin", &self.adam_critic1),
            ("adam_critic2.bin", &self.adam_critic2),
        ] {
            write_adam(&dir.join(name), st)?;
        }
        let meta = AgentMeta {
            cfg: self.cfg.clone(),
            action_map: self.action_map,
            critic_updates: self.critic_updates,
            target_updates: self.target_updates,
        };
        let text = toml::to_string(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(dir.join("agent.toml"), text)
            .map_err(|e| Error::io(dir.display().to_string(), e))
    }

    pub fn load(dir: &Path) -> Result<(Self, PolicyMeta)> {
        let text = std::fs::read_to_string(dir.join("agent.toml"))
            .map_err(|e| Error::io(dir.display().to_string(), e))?;
        let meta: AgentMeta = toml::from_str(&text).map_err(|e| Error::Toml {
            path: dir.display().to_string(),
            msg: e.to_string(),
        })?;
        let (actor, policy) = load_mlp(dir.join("actor.mlp"))?;
        let policy = policy.ok_or_else(|| {
            Error::Checkpoint("agent actor checkpoint lacks policy metadata".into())
        })?;
        let (actor_target, _) = load_mlp(dir.join("actor_target.mlp"))?;
        let (critic1, _) = load_mlp(dir.join("critic1.mlp"))?;
        let (critic2, _) = load_mlp(dir.join("critic2.mlp"))?;
        let (critic1_target, _) = load_mlp(dir.join("critic1_target.mlp"))?;
        let (critic2_target, _) = load_mlp(dir.join("critic2_target.mlp"))?;
        let adam_actor = read_adam(&dir.join("adam_actor.bin"), actor.params().len())?;
        let adam_critic1 = read_adam(&dir.join("adam_critic1.bin"), critic1.params().len())?;
        let adam_critic2 = read_adam(&dir.join("adam_critic2.bin"), critic2.params().len())?;
        let scratch = Scratch::new(&actor, &critic1, meta.cfg.batch);
        Ok((
            Td3Agent {
                actor,
                actor_target,
                critic1,
                critic2,
                critic1_target,
                critic2_target,
                adam_actor,
                adam_critic1,
                adam_critic2,
                cfg: meta.cfg,
                action_map: meta.action_map,
                critic_updates: meta.critic_updates,
                target_updates: meta.target_updates,
                scratch,
            },
            policy,
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct AgentMeta {
    cfg: Td3Config,
    action_map: ActionMap,
    critic_updates: u64,
    target_updates: u64,
}

fn write_adam(path: &Path, st: &AdamState) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + st.m.len() * 16);
    bytes.extend_from_slice(&st.t.to_le_bytes());
    bytes.extend_from_slice(&st.lr.to_le_bytes());
    for v in st.m.iter().chain(st.v.iter()) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_adam(path: &Path, n: usize) -> Result<AdamState> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() != 16 + n * 16 {
        return Err(Error::Checkpoint(format!(
            "adam state size mismatch in {}",
            path.display()
        )));
    }
    let t = u64::from_le_bytes(bytes[0..8].try_into().unwrap());
    let lr = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let mut vals = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut st = AdamState::new(n, lr);
    st.t = t;
    for i in 0..n {
        st.m[i] = vals.next().unwrap();
    }
    for i in 0..n {
        st.v[i] = vals.next().unwrap();
    }
    Ok(st)
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: u64,
    pub steps: u32,
    pub ret: f64,
    pub first_success: bool,
    pub wall_ms: u64,
}

pub fn write_training_log(path: impl AsRef<Path>, rows: &[EpisodeLog]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(f);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(w, "episode,steps,return,first_success_flag,wall_ms").map_err(io_err)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.episode,
            r.steps,
            r.ret,
            if r.first_success { 1 } else { 0 },
            r.wall_ms
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Where and how a teacher trains.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    /// Task region (inside the env's region).
    pub region: RegionBounds,
    pub d_min_km: f64,
    pub d_max_km: f64,
    /// Per-element deficit floors forwarded to the task generator.
    pub deficit_floors: crate::env::DeficitFloors,
    /// Root seed; substreams are derived under `label`.
    pub seed: u64,
    /// Namespace for RNG substreams, e.g. "train/A/ST/seed0".
    pub label: String,
    pub checkpoint_dir: Option<PathBuf>,
    /// Abort the loop after this many env steps without writing the final
    /// checkpoint; simulates an interrupted process for resume testing.
    pub interrupt_after_steps: Option<u64>,
}

pub struct TrainOutcome {
    pub agent: Td3Agent,
    pub episodes: Vec<EpisodeLog>,
    pub first_success_episode: Option<u64>,
    pub env_steps: u64,
    pub interrupted: bool,
    /// Actor with the best noiseless validation success rate, when
    /// validation was enabled; falls back to the final actor otherwise.
    pub best_actor: Mlp,
    pub best_validation_sr: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ResumeState {
    env_steps: u64,
    episodes_done: u64,
    first_success_episode: Option<u64>,
    best_validation_sr: Option<f64>,
    episodes: Vec<EpisodeLog>,
    rng_tasks: crate::rng::RngSnapshot,
    rng_actions: crate::rng::RngSnapshot,
    rng_updates: crate::rng::RngSnapshot,
}

/// Train one teacher in its region: act with exploration, store transitions,
/// one gradient update per environment step after warmup. Fully seeded and
/// single-threaded; reruns with the same setup produce identical logs (wall
/// time aside). Picks up from a resume checkpoint when one is present in
/// `checkpoint_dir`.
pub fn train_teacher(env: &mut NavEnv, cfg: &Td3Config, setup: &TrainSetup) -> Result<TrainOutcome> {
    let policy_meta = PolicyMeta {
        normalizer: env.normalizer(),
        action_map: env.action_map(),
    };
    let mut rng_init = rng_from(setup.seed, &format!("{}/init", setup.label));
    let mut rng_tasks = rng_from(setup.seed, &format!("{}/tasks", setup.label));
    let mut rng_actions = rng_from(setup.seed, &format!("{}/actions", setup.label));
    let mut rng_updates = rng_from(setup.seed, &format!("{}/updates", setup.label));

    // Held-out validation tasks for best-checkpoint selection; a substream of
    // their own, full evaluation episode budget.
    let validation_tasks = if cfg.validation_every_steps.is_some() {
        let mut rng_val = rng_from(setup.seed, &format!("{}/validation", setup.label));
        generate_tasks(
            env.provider(),
            env.frame(),
            &setup.region,
            cfg.validation_tasks,
            setup.d_min_km,
            setup.d_max_km,
            env.config().zeta,
            env.config().max_steps,
            &setup.deficit_floors,
            &mut rng_val,
        )?
    } else {
        Vec::new()
    };

    let mut agent = Td3Agent::new(cfg.clone(), env.action_map(), &mut rng_init)?;
    let mut replay = ReplayBuffer::new(cfg.replay_capacity);
    let mut episodes: Vec<EpisodeLog> = Vec::new();
    let mut first_success: Option<u64> = None;
    let mut steps_done: u64 = 0;
    let mut episodes_done: u64 = 0;
    let mut best_actor: Option<Mlp> = None;
    let mut best_sr: Option<f64> = None;
    let mut last_validation: u64 = 0;

    if let Some(dir) = &setup.checkpoint_dir {
        let state_path = dir.join("resume.toml");
        if state_path.exists() {
            let text = std::fs::read_to_string(&state_path)
                .map_err(|e| Error::io(state_path.display().to_string(), e))?;
            let st: ResumeState = toml::from_str(&text).map_err(|e| Error::Toml {
                path: state_path.display().to_string(),
                msg: e.to_string(),
            })?;
            let (loaded, _) = Td3Agent::load(dir)?;
            agent = loaded;
            replay = read_replay(&dir.join("replay.bin"))?;
            steps_done = st.env_steps;
            episodes_done = st.episodes_done;
            first_success = st.first_success_episode;
            best_sr = st.best_validation_sr;
            episodes = st.episodes;
            rng_tasks = st.rng_tasks.restore();
            rng_actions = st.rng_actions.restore();
            rng_updates = st.rng_updates.restore();
            let best_path = dir.join("policy.mlp");
            if best_path.exists() {
                best_actor = Some(load_mlp(&best_path)?.0);
            }
            last_validation = steps_done;
        }
    }

    let mut last_checkpoint = steps_done;
    let mut interrupted = false;
    while steps_done < cfg.total_env_steps {
        if let Some(max_ep) = cfg.max_episodes {
            if episodes_done >= max_ep {
                break;
            }
        }
        let task = generate_tasks(
            env.provider(),
            env.frame(),
            &setup.region,
            1,
            setup.d_min_km,
            setup.d_max_km,
            env.config().zeta,
            cfg.train_max_steps.unwrap_or(env.config().max_steps),
            &setup.deficit_floors,
            &mut rng_tasks,
        )?[0];
        let (_, mut obs) = env.reset(&task)?;
        let t0 = Instant::now();
        let mut ret = 0.0;
        let mut ep_steps: u32 = 0;
        let mut reached_goal = false;

        loop {
            let action_norm: [f64; ACT_DIM] = if steps_done < cfg.warmup_steps {
                [
                    rng_actions.gen_range(-1.0..=1.0),
                    rng_actions.gen_range(-1.0..=1.0),
                ]
            } else {
                agent.select_action(&obs, true, &mut rng_actions)?
            };
            let action = agent.action_map.denormalize(&action_norm);
            let out = env.step(&action)?;
            replay.push(Transition {
                obs: obs.0,
                action: action_norm,
                reward: out.reward_total,
                next_obs: out.obs.0,
                done_goal: out.termination == Some(Termination::Goal),
            });
            obs = out.obs;
            ret += out.reward_total;
            ep_steps += 1;
            steps_done += 1;

            if steps_done >= cfg.warmup_steps && replay.len() >= cfg.batch {
                for _ in 0..cfg.updates_per_step.max(1) {
                    agent.critic_update(&replay, &mut rng_updates)?;
                    if agent.critic_updates % cfg.policy_delay as u64 == 0 {
                        agent.actor_update(&replay, &mut rng_updates)?;
                    }
                }
            }

            if out.done {
                reached_goal = out.termination == Some(Termination::Goal);
                break;
            }
            if steps_done >= cfg.total_env_steps {
                break;
            }
        }

        let first = reached_goal && first_success.is_none();
        if first {
            first_success = Some(episodes_done);
        }
        episodes.push(EpisodeLog {
            episode: episodes_done,
            steps: ep_steps,
            ret,
            first_success: first,
            wall_ms: t0.elapsed().as_millis() as u64,
        });
        episodes_done += 1;

        let validation_due = cfg
            .validation_every_steps
            .map(|k| steps_done - last_validation >= k || steps_done >= cfg.total_env_steps)
            .unwrap_or(false);
        if validation_due && steps_done > cfg.warmup_steps {
            last_validation = steps_done;
            let sr = validate_actor(env, &agent, &validation_tasks)?;
            if best_sr.map_or(true, |b| sr >= b) {
                best_sr = Some(sr);
                best_actor = Some(agent.actor.clone());
                if let Some(dir) = &setup.checkpoint_dir {
                    std::fs::create_dir_all(dir)
                        .map_err(|e| Error::io(dir.display().to_string(), e))?;
                    save_mlp(dir.join("policy.mlp"), &agent.actor, Some(&policy_meta))?;
                }
            }
        }

        if let Some(dir) = &setup.checkpoint_dir {
            let due = cfg
                .checkpoint_every_steps
                .map(|k| steps_done - last_checkpoint >= k)
                .unwrap_or(false);
            if due && steps_done < cfg.total_env_steps {
                save_resume_checkpoint(
                    dir,
                    &agent,
                    &policy_meta,
                    &replay,
                    &ResumeState {
                        env_steps: steps_done,
                        episodes_done,
                        first_success_episode: first_success,
                        best_validation_sr: best_sr,
                        episodes: episodes.clone(),
                        rng_tasks: crate::rng::RngSnapshot::capture(&rng_tasks),
                        rng_actions: crate::rng::RngSnapshot::capture(&rng_actions),
                        rng_updates: crate::rng::RngSnapshot::capture(&rng_updates),
                    },
                )?;
                last_checkpoint = steps_done;
            }
        }

        if let Some(cut) = setup.interrupt_after_steps {
            if steps_done >= cut && steps_done < cfg.total_env_steps {
                interrupted = true;
                break;
            }
        }
    }

    if !interrupted {
        if let Some(dir) = &setup.checkpoint_dir {
            agent.save(dir, &policy_meta)?;
            if best_actor.is_none() {
                // No validation configured: the final actor is the policy.
                save_mlp(dir.join("policy.mlp"), &agent.actor, Some(&policy_meta))?;
            }
            let _ = std::fs::remove_file(dir.join("resume.toml"));
            let _ = std::fs::remove_file(dir.join("replay.bin"));
        }
    }

    let best = best_actor.unwrap_or_else(|| agent.actor.clone());
    Ok(TrainOutcome {
        agent,
        episodes,
        first_success_episode: first_success,
        env_steps: steps_done,
        interrupted,
        best_actor: best,
        best_validation_sr: best_sr,
    })
}

/// Noiseless success rate of the agent's current actor over fixed tasks.
fn validate_actor(
    env: &mut NavEnv,
    agent: &Td3Agent,
    tasks: &[crate::env::NavTask],
) -> Result<f64> {
    if tasks.is_empty() {
        return Ok(0.0);
    }
    let mut rng = rng_from(0, "validation/noiseless");
    let mut hits = 0usize;
    for task in tasks {
        let (_, mut obs) = env.reset(task)?;
        loop {
            let u = agent.select_action(&obs, false, &mut rng)?;
            let out = env.step(&agent.action_map.denormalize(&u))?;
            obs = out.obs;
            if out.done {
                if out.termination == Some(Termination::Goal) {
                    hits += 1;
                }
                break;
            }
        }
    }
    Ok(1000.0 * hits as f64 / tasks.len() as f64)
}

fn save_resume_checkpoint(
    dir: &Path,
    agent: &Td3Agent,
    policy: &PolicyMeta,
    replay: &ReplayBuffer,
    st: &ResumeState,
) -> Result<()> {
    agent.save(dir, policy)?;
    write_replay(&dir.join("replay.bin"), replay)?;
    let text = toml::to_string(st).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(dir.join("resume.toml"), text)
        .map_err(|e| Error::io(dir.display().to_string(), e))
}

fn write_replay(path: &Path, replay: &ReplayBuffer) -> Result<()> {
    let mut bytes = Vec::with_capacity(24 + replay.len() * (15 * 8 + 1));
    bytes.extend_from_slice(&(replay.capacity as u64).to_le_bytes());
    bytes.extend_from_slice(&(replay.data.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&(replay.cursor as u64).to_le_bytes());
    for t in &replay.data {
        for v in t
            .obs
            .iter()
            .chain(t.action.iter())
            .chain(std::iter::once(&t.reward))
            .chain(t.next_obs.iter())
        {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.push(t.done_goal as u8);
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_replay(path: &Path) -> Result<ReplayBuffer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() < 24 {
        return Err(Error::Checkpoint("replay file truncated".into()));
    }
    let capacity = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cursor = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let rec = 15 * 8 + 1;
    if bytes.len() != 24 + len * rec || capacity == 0 || len > capacity {
        return Err(Error::Checkpoint("replay file size mismatch".into()));
    }
    let mut replay = ReplayBuffer::new(capacity);
    for r in 0..len {
        let base = 24 + r * rec;
        let f = |k: usize| -> f64 {
            f64::from_le_bytes(bytes[base + k * 8..base + (k + 1) * 8].try_into().unwrap())
        };
        let mut t = Transition {
            obs: [0.0; OBS_DIM],
            action: [f(6), f(7)],
            reward: f(8),
            next_obs: [0.0; OBS_DIM],
            done_goal: bytes[base + rec - 1] != 0,
        };
        for i in 0..OBS_DIM {
            t.obs[i] = f(i);
            t.next_obs[i] = f(9 + i);
        }
        replay.data.push(t);
    }
    replay.cursor = cursor;
    Ok(replay)
}
