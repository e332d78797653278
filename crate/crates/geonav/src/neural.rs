//! Minimal dense-network core: forward pass, exact reverse-mode gradients,
//! Adam, and Polyak target tracking. Everything is 64-bit and allocation is
//! kept out of the per-batch hot path by reusing traces.
//!
//! Parameters live in one flat vector, laid out per layer as the weight
//! matrix (rows = output units, row-major) followed by the bias vector. The
//! checkpoint sidecar writes exactly this layout.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{ActionMap, ObsNormalizer};
use crate::error::{Error, Result};
use crate::rng::Rng;
use rand::Rng as _;

/// Hidden layers are always ReLU; the output head is one of these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    /// Per-dimension tanh scaled into [lo_i, hi_i]; keeps outputs in bounds
    /// by construction.
    TanhBounded { lo: Vec<f64>, hi: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct Mlp {
    dims: Vec<usize>,
    out_act: OutputActivation,
    params: Vec<f64>,
}

fn layer_param_count(din: usize, dout: usize) -> usize {
    din * dout + dout
}

impl Mlp {
    pub fn new(dims: &[usize], out_act: OutputActivation, rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::ShapeMismatch(
                "an MLP needs at least input and output dims".into(),
            ));
        }
        if let OutputActivation::TanhBounded { lo, hi } = &out_act {
            let dout = *dims.last().unwrap();
            if lo.len() != dout || hi.len() != dout {
                return Err(Error::ShapeMismatch(format!(
                    "output bounds length {} vs output dim {dout}",
                    lo.len()
                )));
            }
        }
        let n: usize = dims
            .windows(2)
            .map(|w| layer_param_count(w[0], w[1]))
            .sum();
        let mut params = vec![0.0; n];
        // Uniform +-1/sqrt(fan_in) for weights and biases of each layer.
        let mut off = 0;
        for w in dims.windows(2) {
            let (din, dout) = (w[0], w[1]);
            let bound = 1.0 / (din as f64).sqrt();
            for p in params[off..off + layer_param_count(din, dout)].iter_mut() {
                *p = rng.gen_range(-bound..bound);
            }
            off += layer_param_count(din, dout);
        }
        Ok(Mlp {
            dims: dims.to_vec(),
            out_act,
            params,
        })
    }

    pub fn zeroed(dims: &[usize], out_act: OutputActivation) -> Result<Self> {
        let mut rng = crate::rng::rng_from(0, "zeroed");
        let mut net = Mlp::new(dims, out_act, &mut rng)?;
        net.params.iter_mut().for_each(|p| *p = 0.0);
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn output_activation(&self) -> &OutputActivation {
        &self.out_act
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn arch_string(&self) -> String {
        let act = match &self.out_act {
            OutputActivation::Identity => "identity".to_string(),
            OutputActivation::TanhBounded { .. } => "tanh_bounded".to_string(),
        };
        format!("{:?}/{act}", self.dims)
    }

    pub fn same_arch(&self, other: &Mlp) -> bool {
        self.dims == other.dims && self.out_act == other.out_act
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (offset, din, dout) per layer
        let mut off = 0;
        self.dims.windows(2).map(move |w| {
            let t = (off, w[0], w[1]);
            off += layer_param_count(w[0], w[1]);
            t
        })
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input length {} vs input dim {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut trace = BatchTrace::new(self, 1);
        self.forward_batch(input, 1, &mut trace)?;
        Ok(trace.output().to_vec())
    }

    /// Batched forward pass; activations are kept in `trace` for backward.
    /// `inputs` is row-major `(batch, input_dim)`.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize, trace: &mut BatchTrace) -> Result<()> {
        if inputs.len() != batch * self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "inputs length {} vs batch {batch} x {}",
                inputs.len(),
                self.input_dim()
            )));
        }
        trace.ensure(self, batch);
        trace.acts[0][..inputs.len()].copy_from_slice(inputs);
        let n_layers = self.n_layers();
        for (k, (off, din, dout)) in self.layer_offsets().enumerate() {
            let w = &self.params[off..off + din * dout];
            let b = &self.params[off + din * dout..off + din * dout + dout];
            let (prev, rest) = trace.acts.split_at_mut(k + 1);
            let a_in = &prev[k][..batch * din];
            let a_out = &mut rest[0][..batch * dout];
            for bi in 0..batch {
                let xin = &a_in[bi * din..(bi + 1) * din];
                let xout = &mut a_out[bi * dout..(bi + 1) * dout];
                for (o, out) in xout.iter_mut().enumerate() {
                    let row = &w[o * din..(o + 1) * din];
                    let mut acc = b[o];
                    for i in 0..din {
                        acc += row[i] * xin[i];
                    }
                    *out = acc;
                }
            }
            let last = k + 1 == n_layers;
            if !last {
                for v in a_out.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            } else {
                match &self.out_act {
                    OutputActivation::Identity => {}
                    OutputActivation::TanhBounded { lo, hi } => {
                        for bi in 0..batch {
                            for o in 0..dout {
                                let u = a_out[bi * dout + o].tanh();
                                a_out[bi * dout + o] =
                                    lo[o] + (hi[o] - lo[o]) * 0.5 * (u + 1.0);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Reverse-mode gradients for the batch held in `trace`.
    ///
    /// `upstream` is dLoss/dOutput, row-major `(batch, output_dim)`, already
    /// carrying any 1/batch factor. Parameter gradients are accumulated into
    /// `grads` (zero it first for overwrite semantics); the return buffer in
    /// `trace.d_input` is dLoss/dInput.
    pub fn backward_batch(
        &self,
        trace: &mut BatchTrace,
        upstream: &[f64],
        grads: &mut [f64],
    ) -> Result<()> {
        self.backward_batch_reg(trace, upstream, 0.0, grads)
    }

    /// [`Mlp::backward_batch`] plus an L2 penalty of `head_reg * z^2` on the
    /// pre-activations of a bounded output head. The penalty gradient attacks
    /// z directly, so it stays alive where the tanh derivative has vanished;
    /// it is the standard guard against bounded heads saturating permanently.
    pub fn backward_batch_reg(
        &self,
        trace: &mut BatchTrace,
        upstream: &[f64],
        head_reg: f64,
        grads: &mut [f64],
    ) -> Result<()> {
        let batch = trace.batch;
        let dout_total = self.output_dim();
        if upstream.len() != batch * dout_total {
            return Err(Error::ShapeMismatch(format!(
                "upstream length {} vs batch {batch} x {dout_total}",
                upstream.len()
            )));
        }
        if grads.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "grads length {} vs params {}",
                grads.len(),
                self.params.len()
            )));
        }
        let n_layers = self.n_layers();
        // dz of the output layer: chain through the head activation.
        trace.dz.resize(upstream.len().max(trace.dz.len()), 0.0);
        let mut dz: Vec<f64> = upstream.to_vec();
        if let OutputActivation::TanhBounded { lo, hi } = &self.out_act {
            let a_out = &trace.acts[n_layers][..batch * dout_total];
            for bi in 0..batch {
                for o in 0..dout_total {
                    let a = a_out[bi * dout_total + o];
                    let u = (a - lo[o]) / (hi[o] - lo[o]) * 2.0 - 1.0; // = tanh(z)
                    dz[bi * dout_total + o] *= (hi[o] - lo[o]) * 0.5 * (1.0 - u * u);
                    if head_reg > 0.0 {
                        let z = 0.5 * ((1.0 + u.clamp(-1.0 + 1e-12, 1.0 - 1e-12))
                            / (1.0 - u.clamp(-1.0 + 1e-12, 1.0 - 1e-12)))
                        .ln();
                        dz[bi * dout_total + o] += 2.0 * head_reg * z / batch as f64;
                    }
                }
            }
        }

        let offsets: Vec<(usize, usize, usize)> = self.layer_offsets().collect();
        for k in (0..n_layers).rev() {
            let (off, din, dout) = offsets[k];
            let w = &self.params[off..off + din * dout];
            let a_in = &trace.acts[k][..batch * din];
            let (gw, gb) = {
                let g = &mut grads[off..off + din * dout + dout];
                g.split_at_mut(din * dout)
            };
            // Weight and bias gradients.
            for o in 0..dout {
                let grow = &mut gw[o * din..(o + 1) * din];
                let mut bacc = 0.0;
                for bi in 0..batch {
                    let d = dz[bi * dout + o];
                    if d == 0.0 {
                        continue;
                    }
                    bacc += d;
                    let arow = &a_in[bi * din..(bi + 1) * din];
                    for i in 0..din {
                        grow[i] += d * arow[i];
                    }
                }
                gb[o] += bacc;
            }
            // Gradient w.r.t. this layer's input.
            let da = &mut trace.d_input;
            da.clear();
            da.resize(batch * din, 0.0);
            for bi in 0..batch {
                let darow = &mut da[bi * din..(bi + 1) * din];
                for o in 0..dout {
                    let d = dz[bi * dout + o];
                    if d == 0.0 {
                        continue;
                    }
                    let wrow = &w[o * din..(o + 1) * din];
                    for i in 0..din {
                        darow[i] += d * wrow[i];
                    }
                }
            }
            if k > 0 {
                // Chain through the ReLU of the previous layer:
                // subgradient 0 at exactly 0 (mask on activation > 0).
                let a_prev = &trace.acts[k][..batch * din];
                dz.clear();
                dz.extend_from_slice(da);
                for (v, &a) in dz.iter_mut().zip(a_prev.iter()) {
                    if a <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        Ok(())
    }

    /// dLoss/dInput from the most recent `backward_batch`.
    pub fn input_gradient<'t>(&self, trace: &'t BatchTrace) -> &'t [f64] {
        &trace.d_input
    }
}

/// Reusable forward/backward buffers for one (network shape, batch) pair.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    batch: usize,
    dims: Vec<usize>,
    /// acts[0] = input, acts[k+1] = post-activation output of layer k.
    acts: Vec<Vec<f64>>,
    dz: Vec<f64>,
    d_input: Vec<f64>,
}

impl BatchTrace {
    pub fn new(net: &Mlp, batch: usize) -> Self {
        let mut t = BatchTrace {
            batch: 0,
            dims: Vec::new(),
            acts: Vec::new(),
            dz: Vec::new(),
            d_input: Vec::new(),
        };
        t.ensure(net, batch);
        t
    }

    fn ensure(&mut self, net: &Mlp, batch: usize) {
        if self.batch == batch && self.dims == net.dims {
            return;
        }
        self.batch = batch;
        self.dims = net.dims.clone();
        self.acts = net.dims.iter().map(|&d| vec![0.0; batch * d]).collect();
        self.dz.clear();
        self.d_input.clear();
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Output of the most recent forward pass, row-major `(batch, output_dim)`.
    pub fn output(&self) -> &[f64] {
        let d = *self.dims.last().unwrap();
        &self.acts[self.dims.len() - 1][..self.batch * d]
    }
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }
}

/// One Adam update. Aborts (without touching parameters) when any gradient is
/// non-finite so the caller can surface diagnostics.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    state.t += 1;
    let b1t = 1.0 - state.beta1.powi(state.t as i32);
    let b2t = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let mhat = state.m[i] / b1t;
        let vhat = state.v[i] / b2t;
        params[i] -= state.lr * mhat / (vhat.sqrt() + state.eps);
    }
    Ok(())
}

/// target <- tau * online + (1 - tau) * target, elementwise.
pub fn polyak_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !target.same_arch(online) {
        return Err(Error::ArchMismatch {
            expected: online.arch_string(),
            got: target.arch_string(),
        });
    }
    for (t, o) in target.params.iter_mut().zip(online.params.iter()) {
        *t += tau * (*o - *t);
    }
    Ok(())
}

/// Extra metadata stored with actor checkpoints so a policy file is
/// self-contained: how observations were normalized and how normalized
/// actions map to physical bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub normalizer: ObsNormalizer,
    pub action_map: ActionMap,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    layer_dims: Vec<usize>,
    hidden_activation: String,
    output: OutputActivation,
    n_params: usize,
    policy: Option<PolicyMeta>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".bin");
    PathBuf::from(os)
}

/// Write a checkpoint: a versioned text manifest at `path` plus a flat
/// little-endian f64 parameter block at `path`.bin.
pub fn save_mlp(path: impl AsRef<Path>, net: &Mlp, policy: Option<&PolicyMeta>) -> Result<()> {
    let path = path.as_ref();
    let manifest = Manifest {
        version: 1,
        layer_dims: net.dims.clone(),
        hidden_activation: "relu".into(),
        output: net.out_act.clone(),
        n_params: net.params.len(),
        policy: policy.copied(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
    let side = sidecar_path(path);
    let mut f = File::create(&side).map_err(|e| Error::io(side.display().to_string(), e))?;
    let mut bytes = Vec::with_capacity(net.params.len() * 8);
    for p in &net.params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    f.write_all(&bytes)
        .map_err(|e| Error::io(side.display().to_string(), e))
}

pub fn load_mlp(path: impl AsRef<Path>) -> Result<(Mlp, Option<PolicyMeta>)> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Toml {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    if manifest.version != 1 {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            manifest.version
        )));
    }
    let side = sidecar_path(path);
    let mut bytes = Vec::new();
    File::open(&side)
        .map_err(|e| Error::io(side.display().to_string(), e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(side.display().to_string(), e))?;
    if bytes.len() != manifest.n_params * 8 {
        return Err(Error::Checkpoint(format!(
            "parameter block holds {} bytes, manifest expects {}",
            bytes.len(),
            manifest.n_params * 8
        )));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let expected: usize = manifest
        .layer_dims
        .windows(2)
        .map(|w| layer_param_count(w[0], w[1]))
        .sum();
    if expected != params.len() {
        return Err(Error::Checkpoint(
            "parameter count does not match layer dims".into(),
        ));
    }
    Ok((
        Mlp {
            dims: manifest.layer_dims,
            out_act: manifest.output,
            params,
        },
        manifest.policy,
    ))
}
