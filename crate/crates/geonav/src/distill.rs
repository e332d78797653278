//! Multi-teacher policy distillation: roll frozen teacher actors through
//! their source regions to build state-action datasets, then regress a single
//! student actor onto all of them with evenly interleaved minibatches.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{generate_tasks, NavEnv, Observation};
use crate::error::{Error, Result};
use crate::geo::RegionBounds;
use crate::neural::{adam_step, AdamState, BatchTrace, Mlp};
use crate::rng::{fnv1a64, rng_from};
use crate::td3::{ACT_DIM, OBS_DIM};
use rand::seq::SliceRandom;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub samples_per_teacher: usize,
    pub epochs: u32,
    pub batch: usize,
    pub lr: f64,
    /// Fraction of each dataset held out for per-teacher validation.
    pub holdout_frac: f64,
    /// Roll out the current student and relabel actions by the teacher,
    /// instead of rolling out the teacher itself.
    pub on_student_policy: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            samples_per_teacher: 50_000,
            epochs: 20,
            batch: 256,
            lr: 3e-4,
            holdout_frac: 0.1,
            on_student_policy: false,
        }
    }
}

/// State-action pairs gathered from one teacher. Actions are stored in
/// normalized [-1, 1]^2 units.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillDataset {
    pub teacher_id: String,
    pub region: String,
    pub seed: u64,
    pub obs: Vec<[f64; OBS_DIM]>,
    pub act: Vec<[f64; ACT_DIM]>,
}

impl DistillDataset {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    fn payload_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(self.len() * 8 * 8);
        for (o, a) in self.obs.iter().zip(self.act.iter()) {
            for v in o.iter().chain(a.iter()) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    /// Write the manifest at `path` and the raw record block at `path`.bin
    /// (8 little-endian f64 per record: 6 observation + 2 action).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let payload = self.payload_bytes();
        let manifest = DatasetManifest {
            version: 1,
            teacher_id: self.teacher_id.clone(),
            region: self.region.clone(),
            seed_hex: format!("{:016x}", self.seed),
            count: self.len(),
            checksum_fnv1a64: format!("{:016x}", fnv1a64(&payload)),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
        let side = sidecar(path);
        std::fs::write(&side, payload).map_err(|e| Error::io(side.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let manifest: DatasetManifest = toml::from_str(&text).map_err(|e| Error::Toml {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let side = sidecar(path);
        let payload =
            std::fs::read(&side).map_err(|e| Error::io(side.display().to_string(), e))?;
        if payload.len() != manifest.count * 8 * 8 {
            return Err(Error::Checkpoint(format!(
                "dataset payload holds {} bytes, manifest expects {}",
                payload.len(),
                manifest.count * 64
            )));
        }
        let sum = format!("{:016x}", fnv1a64(&payload));
        if sum != manifest.checksum_fnv1a64 {
            return Err(Error::Checkpoint(format!(
                "dataset checksum mismatch: {} vs {}",
                sum, manifest.checksum_fnv1a64
            )));
        }
        let mut obs = Vec::with_capacity(manifest.count);
        let mut act = Vec::with_capacity(manifest.count);
        for rec in payload.chunks_exact(64) {
            let f = |k: usize| f64::from_le_bytes(rec[k * 8..(k + 1) * 8].try_into().unwrap());
            obs.push([f(0), f(1), f(2), f(3), f(4), f(5)]);
            act.push([f(6), f(7)]);
        }
        let seed = u64::from_str_radix(&manifest.seed_hex, 16)
            .map_err(|e| Error::Checkpoint(format!("bad seed in manifest: {e}")))?;
        Ok(DistillDataset {
            teacher_id: manifest.teacher_id,
            region: manifest.region,
            seed,
            obs,
            act,
        })
    }
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".bin");
    std::path::PathBuf::from(os)
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    version: u32,
    teacher_id: String,
    region: String,
    // Hex: TOML integers are signed 64-bit, derived seeds use the full range.
    seed_hex: String,
    count: usize,
    checksum_fnv1a64: String,
}

/// Where dataset collection runs: region and task distance window.
#[derive(Debug, Clone)]
pub struct CollectSetup {
    pub teacher_id: String,
    pub region: RegionBounds,
    pub region_name: String,
    pub d_min_km: f64,
    pub d_max_km: f64,
    pub deficit_floors: crate::env::DeficitFloors,
    pub seed: u64,
    pub label: String,
}

fn actor_normalized_action(actor: &Mlp, env: &NavEnv, obs: &Observation) -> Result<[f64; 2]> {
    let phys = actor.forward(&obs.0)?;
    Ok(env.action_map().normalize(&crate::env::Action {
        psi_rad: phys[0],
        dist_km: phys[1],
    }))
}

/// Run noiseless episodes on freshly generated tasks, recording
/// `(s, pi_T(s))` each step until `n` pairs are collected. When
/// `rollout_actor` differs from `label_actor`, the former drives the vehicle
/// and the latter provides the recorded action (on-student-policy mode).
pub fn collect_dataset_with(
    rollout_actor: &Mlp,
    label_actor: &Mlp,
    env: &mut NavEnv,
    setup: &CollectSetup,
    n: usize,
) -> Result<DistillDataset> {
    let mut rng = rng_from(setup.seed, &format!("{}/collect", setup.label));
    let mut obs_out = Vec::with_capacity(n);
    let mut act_out = Vec::with_capacity(n);
    while obs_out.len() < n {
        let task = generate_tasks(
            env.provider(),
            env.frame(),
            &setup.region,
            1,
            setup.d_min_km,
            setup.d_max_km,
            env.config().zeta,
            env.config().max_steps,
            &setup.deficit_floors,
            &mut rng,
        )?[0];
        let (_, mut obs) = env.reset(&task)?;
        loop {
            let drive = actor_normalized_action(rollout_actor, env, &obs)?;
            let label = if std::ptr::eq(rollout_actor, label_actor) {
                drive
            } else {
                actor_normalized_action(label_actor, env, &obs)?
            };
            obs_out.push(obs.0);
            act_out.push(label);
            if obs_out.len() >= n {
                break;
            }
            let out = env.step(&env.action_map().denormalize(&drive))?;
            obs = out.obs;
            if out.done {
                break;
            }
        }
    }
    Ok(DistillDataset {
        teacher_id: setup.teacher_id.clone(),
        region: setup.region_name.clone(),
        seed: setup.seed,
        obs: obs_out,
        act: act_out,
    })
}

/// On-teacher-policy collection: the teacher both drives and labels.
pub fn collect_dataset(
    teacher_actor: &Mlp,
    env: &mut NavEnv,
    setup: &CollectSetup,
    n: usize,
) -> Result<DistillDataset> {
    collect_dataset_with(teacher_actor, teacher_actor, env, setup, n)
}

/// Mean over pairs and action dimensions of the squared difference.
pub fn distill_loss(
    teacher_actions: &[[f64; ACT_DIM]],
    student_actions: &[[f64; ACT_DIM]],
) -> Result<f64> {
    if teacher_actions.len() != student_actions.len() {
        return Err(Error::ShapeMismatch(format!(
            "action counts differ: {} vs {}",
            teacher_actions.len(),
            student_actions.len()
        )));
    }
    if teacher_actions.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (t, s) in teacher_actions.iter().zip(student_actions.iter()) {
        for d in 0..ACT_DIM {
            let e = t[d] - s[d];
            sum += e * e;
        }
    }
    Ok(sum / (teacher_actions.len() * ACT_DIM) as f64)
}

/// Per-epoch, per-teacher held-out regression error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationRow {
    pub epoch: u32,
    pub teacher_index: usize,
    pub holdout_mse: f64,
    pub minibatches_consumed: u64,
}

pub struct DistillOutcome {
    pub student: Mlp,
    pub validation: Vec<ValidationRow>,
}

/// Train a student actor by round-robin minibatch regression: one minibatch
/// from every teacher per round, repeated for the epoch budget. The student
/// shares the teachers' architecture; pass `init` to start from an existing
/// actor instead of a fresh random one.
pub fn train_student(
    datasets: &[DistillDataset],
    reference_actor: &Mlp,
    action_map: &crate::env::ActionMap,
    cfg: &DistillConfig,
    seed: u64,
    label: &str,
    init: Option<&Mlp>,
) -> Result<DistillOutcome> {
    if datasets.is_empty() {
        return Err(Error::Config(
            "distillation needs at least one dataset".into(),
        ));
    }
    for d in datasets {
        if d.is_empty() {
            return Err(Error::Config(format!(
                "dataset for teacher {} is empty",
                d.teacher_id
            )));
        }
        for a in &d.act {
            if !(a[0].is_finite() && a[1].is_finite()) {
                return Err(Error::NonFinite("dataset action"));
            }
        }
    }
    let mut rng = rng_from(seed, &format!("{label}/student"));
    let mut student = match init {
        Some(net) => {
            if !net.same_arch(reference_actor) {
                return Err(Error::ArchMismatch {
                    expected: reference_actor.arch_string(),
                    got: net.arch_string(),
                });
            }
            net.clone()
        }
        None => Mlp::new(
            reference_actor.dims(),
            reference_actor.output_activation().clone(),
            &mut rng,
        )?,
    };
    let mut adam = AdamState::new(student.params().len(), cfg.lr);
    let mut trace = BatchTrace::new(&student, cfg.batch);
    let mut grads = vec![0.0; student.params().len()];

    // Deterministic split: shuffle indices once, carve off the holdout tail.
    let mut train_idx: Vec<Vec<usize>> = Vec::new();
    let mut holdout_idx: Vec<Vec<usize>> = Vec::new();
    for (k, d) in datasets.iter().enumerate() {
        let mut idx: Vec<usize> = (0..d.len()).collect();
        idx.shuffle(&mut rng_from(seed, &format!("{label}/split{k}")));
        let n_hold = ((d.len() as f64 * cfg.holdout_frac) as usize).min(d.len() - 1);
        let cut = d.len() - n_hold;
        holdout_idx.push(idx.split_off(cut));
        train_idx.push(idx);
    }

    let rounds_per_epoch = train_idx
        .iter()
        .map(|idx| idx.len().div_ceil(cfg.batch))
        .max()
        .unwrap()
        .max(1);

    let mut consumed = vec![0u64; datasets.len()];
    let mut validation = Vec::new();
    let mut inputs = vec![0.0; cfg.batch * OBS_DIM];
    let mut upstream = vec![0.0; cfg.batch * ACT_DIM];

    for epoch in 0..cfg.epochs {
        for (k, idx) in train_idx.iter_mut().enumerate() {
            idx.shuffle(&mut rng_from(seed, &format!("{label}/shuffle{k}/{epoch}")));
        }
        let mut offsets = vec![0usize; datasets.len()];
        for _round in 0..rounds_per_epoch {
            // One minibatch from each teacher, in fixed order.
            for k in 0..datasets.len() {
                let d = &datasets[k];
                let idx = &train_idx[k];
                let batch = cfg.batch.min(idx.len());
                for b in 0..batch {
                    // Cycle the shuffled order when a dataset is shorter than
                    // the round schedule.
                    let j = idx[(offsets[k] + b) % idx.len()];
                    inputs[b * OBS_DIM..(b + 1) * OBS_DIM].copy_from_slice(&d.obs[j]);
                }
                student.forward_batch(&inputs[..batch * OBS_DIM], batch, &mut trace)?;
                let mut loss = 0.0;
                for b in 0..batch {
                    let out = &trace.output()[b * ACT_DIM..(b + 1) * ACT_DIM];
                    let u = action_map.normalize(&crate::env::Action {
                        psi_rad: out[0],
                        dist_km: out[1],
                    });
                    let j = idx[(offsets[k] + b) % idx.len()];
                    let t = &d.act[j];
                    for dim in 0..ACT_DIM {
                        let e = u[dim] - t[dim];
                        loss += e * e;
                        // d(mse)/d(physical output), chained through the
                        // normalization map.
                        let scale = match dim {
                            0 => 1.0 / action_map.psi_max_rad,
                            _ => 2.0 / action_map.dist_max_km,
                        };
                        upstream[b * ACT_DIM + dim] = 2.0 * e * scale / (batch * ACT_DIM) as f64;
                    }
                }
                loss /= (batch * ACT_DIM) as f64;
                if !loss.is_finite() {
                    return Err(Error::NonFinite("distillation loss"));
                }
                grads.iter_mut().for_each(|g| *g = 0.0);
                student.backward_batch(&mut trace, &upstream[..batch * ACT_DIM], &mut grads)?;
                adam_step(student.params_mut(), &grads, &mut adam)?;
                offsets[k] += batch;
                consumed[k] += 1;
            }
        }
        for (k, d) in datasets.iter().enumerate() {
            let mse = holdout_mse(&student, action_map, d, &holdout_idx[k])?;
            validation.push(ValidationRow {
                epoch,
                teacher_index: k,
                holdout_mse: mse,
                minibatches_consumed: consumed[k],
            });
        }
        // Interleaving fairness: every teacher consumes the same number of
        // minibatches in every round.
        debug_assert!(consumed.iter().all(|&c| c == consumed[0]));
    }
    Ok(DistillOutcome {
        student,
        validation,
    })
}

fn holdout_mse(
    student: &Mlp,
    action_map: &crate::env::ActionMap,
    d: &DistillDataset,
    holdout: &[usize],
) -> Result<f64> {
    if holdout.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for &j in holdout {
        let out = student.forward(&d.obs[j])?;
        let u = action_map.normalize(&crate::env::Action {
            psi_rad: out[0],
            dist_km: out[1],
        });
        for dim in 0..ACT_DIM {
            let e = u[dim] - d.act[j][dim];
            sum += e * e;
        }
    }
    Ok(sum / (holdout.len() * ACT_DIM) as f64)
}

pub fn write_validation_log(path: impl AsRef<Path>, rows: &[ValidationRow]) -> Result<()> {
    use std::io::Write as _;
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(f);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(w, "epoch,teacher_index,holdout_mse,minibatches_consumed").map_err(io_err)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.epoch, r.teacher_index, r.holdout_mse, r.minibatches_consumed
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
