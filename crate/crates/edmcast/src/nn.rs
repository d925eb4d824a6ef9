//! Neural-network building blocks on top of the autodiff [`Tape`](crate::tensor::Tape):
//! linear layers, small MLPs, softmax attention, the AdamW optimizer, and a
//! versioned checkpoint format.
//!
//! Parameters live in their layers as plain [`Tensor`]s. Each forward pass
//! pushes them onto a fresh tape through a [`Forward`] context, which records
//! a `path -> Var` binding; after `backward`, [`AdamW::step`] walks the same
//! paths (via [`ParamSet`]) to apply updates. Paths are stable
//! (`"base.layer0.weight"`, ...), so checkpoints are a flat map from path to
//! shape + values.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rng::ChaCha8Rng;
use crate::tensor::{Gradients, Tape, Tensor, Var};
use crate::Result;

/// Join a path prefix and a component, omitting the separator for an empty
/// prefix so roots do not leak leading dots.
pub fn path_join(prefix: &str, leaf: &str) -> String {
    if prefix.is_empty() {
        leaf.to_string()
    } else {
        format!("{prefix}.{leaf}")
    }
}

/// Anything that exposes named parameters under a path prefix.
///
/// Implementations must visit parameters in a fixed order; optimizer slots
/// and checkpoints rely on it.
pub trait ParamSet {
    /// Visit every parameter as `(path, tensor)`.
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    /// Mutable variant of [`ParamSet::for_each`] with the same order.
    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));

    /// Total number of scalar parameters.
    fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each("", &mut |_, t| n += t.numel());
        n
    }
}

/// Per-pass context tying parameters to tape leaves.
///
/// `train` gates dropout; the dropout RNG is owned here so a forward pass is
/// a pure function of (parameters, input, mode, rng state).
pub struct Forward<'t> {
    pub tape: &'t mut Tape,
    train: bool,
    dropout_rng: ChaCha8Rng,
    binding: Vec<(String, Var)>,
}

impl<'t> Forward<'t> {
    pub fn new(tape: &'t mut Tape, train: bool, dropout_rng: ChaCha8Rng) -> Self {
        Forward { tape, train, dropout_rng, binding: Vec::new() }
    }

    /// Evaluation-mode context (dropout disabled; RNG never drawn from).
    pub fn eval(tape: &'t mut Tape) -> Self {
        Forward::new(tape, false, crate::rng::stream(0, "eval-unused"))
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Push a parameter onto the tape as a gradient-requiring leaf and
    /// record its path. The path must match the one the owner's
    /// [`ParamSet`] visit produces, or the optimizer will not see the
    /// gradient.
    pub fn param(&mut self, path: String, tensor: &Tensor) -> Var {
        let v = self
            .tape
            .leaf(Tensor::new(tensor.shape().to_vec(), tensor.data().to_vec()).requires_grad(true));
        self.binding.push((path, v));
        v
    }

    /// Inverted dropout, active only in training mode and when `p > 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if self.train && p > 0.0 {
            self.tape.dropout(x, p, &mut self.dropout_rng)
        } else {
            x
        }
    }

    /// The `path -> Var` pairs recorded so far.
    pub fn binding(&self) -> &[(String, Var)] {
        &self.binding
    }

    /// Consume the context, returning the recorded binding.
    pub fn into_binding(self) -> Vec<(String, Var)> {
        self.binding
    }
}

/// Fully connected layer `y = x W^T + b`.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    /// `[out, in]` weight matrix.
    pub weight: Tensor,
    /// `[out]` bias.
    pub bias: Tensor,
}

impl LinearLayer {
    /// Initialize with weights drawn from `U(-1/sqrt(in), +1/sqrt(in))` and
    /// zero bias, reading the RNG in row-major order so initialization is a
    /// pure function of the stream.
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(in_dim > 0 && out_dim > 0, "linear layer dims must be positive");
        let bound = 1.0 / (in_dim as f64).sqrt();
        let data = (0..in_dim * out_dim).map(|_| rng.gen_range(-bound..bound)).collect();
        LinearLayer {
            weight: Tensor::new([out_dim, in_dim], data),
            bias: Tensor::zeros([out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Apply to `[..., in]` input (2-d `[n, in]` or 3-d `[b, n, in]`),
    /// producing the same leading shape with `in` replaced by `out`.
    pub fn forward(&self, fw: &mut Forward, path: &str, x: Var) -> Var {
        let w = fw.param(path_join(path, "weight"), &self.weight);
        let b = fw.param(path_join(path, "bias"), &self.bias);
        let xs = fw.tape.value(x).shape().to_vec();
        let (flat, restore): (Var, Option<Vec<usize>>) = match xs.len() {
            2 => (x, None),
            3 => {
                let mut out_shape = xs.clone();
                *out_shape.last_mut().expect("rank 3") = self.out_dim();
                (fw.tape.reshape(x, [xs[0] * xs[1], xs[2]]), Some(out_shape))
            }
            _ => panic!("linear layer expects rank-2 or rank-3 input, got {xs:?}"),
        };
        let wt = fw.tape.transpose_last2(w);
        let y = fw.tape.matmul(flat, wt);
        let y = fw.tape.add(y, b);
        match restore {
            Some(shape) => fw.tape.reshape(y, shape),
            None => y,
        }
    }
}

impl ParamSet for LinearLayer {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&path_join(prefix, "weight"), &self.weight);
        f(&path_join(prefix, "bias"), &self.bias);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&path_join(prefix, "weight"), &mut self.weight);
        f(&path_join(prefix, "bias"), &mut self.bias);
    }
}

/// Multi-layer perceptron: every layer but the last is followed by GELU and
/// dropout; the final layer is affine. A single-layer MLP is therefore a
/// plain linear map.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<LinearLayer>,
    pub dropout_p: f64,
}

impl Mlp {
    /// Build from a dimension chain `[in, hidden..., out]`.
    ///
    /// # Panics
    /// Panics if fewer than two dims are given or `dropout_p` is outside
    /// `[0, 1)`.
    pub fn new(dims: &[usize], dropout_p: f64, rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least [in, out] dims, got {dims:?}");
        assert!((0.0..1.0).contains(&dropout_p), "dropout_p must be in [0, 1), got {dropout_p}");
        let layers = dims.windows(2).map(|w| LinearLayer::new(w[0], w[1], rng)).collect();
        Mlp { layers, dropout_p }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().expect("non-empty MLP").in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty MLP").out_dim()
    }

    pub fn forward(&self, fw: &mut Forward, path: &str, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(fw, &path_join(path, &format!("layer{i}")), h);
            if i < last {
                h = fw.tape.gelu(h);
                h = fw.dropout(h, self.dropout_p);
            }
        }
        h
    }
}

impl ParamSet for Mlp {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.for_each(&path_join(prefix, &format!("layer{i}")), f);
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.for_each_mut(&path_join(prefix, &format!("layer{i}")), f);
        }
    }
}

/// Kernel-weighted average of `values` under a softmax attention kernel:
/// `out = softmax(Q K^T / temperature) V`.
///
/// Each output row is a convex combination of value rows, so it lies inside
/// their coordinate-wise hull — the property the forecaster's kernel
/// regression relies on.
///
/// # Panics
/// Panics if `temperature <= 0` or the shapes are inconsistent
/// (`queries [n_q, m]`, `keys [n, m]`, `values [n, m_v]`).
pub fn attention(tape: &mut Tape, queries: Var, keys: Var, values: Var, temperature: f64) -> Var {
    assert!(temperature > 0.0, "attention temperature must be positive, got {temperature}");
    let (qs, ks, vs) = (
        tape.value(queries).shape().to_vec(),
        tape.value(keys).shape().to_vec(),
        tape.value(values).shape().to_vec(),
    );
    assert!(
        qs.len() == 2 && ks.len() == 2 && vs.len() == 2 && qs[1] == ks[1] && ks[0] == vs[0],
        "attention shape mismatch: queries {qs:?}, keys {ks:?}, values {vs:?}"
    );
    let kt = tape.transpose_last2(keys);
    let scores = tape.matmul(queries, kt);
    let scores = tape.scale(scores, 1.0 / temperature);
    let weights = tape.softmax(scores, 1);
    tape.matmul(weights, values)
}

/// Batched form of [`attention`] over a leading dimension:
/// `queries [b, n_q, m]`, `keys [b, n, m]`, `values [b, n, m_v]`.
pub fn attention_batched(
    tape: &mut Tape,
    queries: Var,
    keys: Var,
    values: Var,
    temperature: f64,
) -> Var {
    assert!(temperature > 0.0, "attention temperature must be positive, got {temperature}");
    let kt = tape.transpose_last2(keys);
    let scores = tape.bmm(queries, kt);
    let scores = tape.scale(scores, 1.0 / temperature);
    let weights = tape.softmax(scores, 2);
    tape.bmm(weights, values)
}

/// Decoupled-weight-decay Adam.
///
/// Update per parameter: first-moment and second-moment EMAs with bias
/// correction, then `p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)`.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u32,
    slots: Vec<AdamWState>,
}

/// Per-parameter optimizer state.
#[derive(Debug, Clone)]
struct AdamWState {
    path: String,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    /// Standard betas `(0.9, 0.999)` and `eps = 1e-8`.
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, t: 0, slots: Vec::new() }
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u32 {
        self.t
    }

    /// Apply one update. `binding` is the `path -> Var` record from the
    /// forward pass and `grads` the matching backward result; parameters
    /// whose path has no binding (e.g. a frozen head) are left untouched.
    ///
    /// Returns an error naming the parameter if its gradient contains a
    /// non-finite value. Gradients are validated up front, so a failed step
    /// changes neither the parameters nor the optimizer state.
    pub fn step(
        &mut self,
        model: &mut dyn ParamSet,
        binding: &[(String, Var)],
        grads: &Gradients,
    ) -> Result<()> {
        let by_path: HashMap<&str, Var> =
            binding.iter().map(|(p, v)| (p.as_str(), *v)).collect();

        let mut failure: Option<Error> = None;
        model.for_each("", &mut |path, _| {
            if failure.is_some() {
                return;
            }
            if let Some(g) = by_path.get(path).and_then(|var| grads.get(*var)) {
                if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                    failure = Some(Error::NonFinite(format!(
                        "gradient for parameter '{path}' contains {bad}"
                    )));
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }

        // A binding that matches no parameter path is a wiring bug (e.g. a
        // forward pass rooted at a different prefix than the ParamSet
        // visit); catch it rather than silently optimizing nothing.
        if !binding.is_empty() {
            let mut any = false;
            model.for_each("", &mut |path, _| any |= by_path.contains_key(path));
            if !any {
                return Err(Error::InvalidConfig(format!(
                    "none of the {} bound parameter paths match the model (first: '{}')",
                    binding.len(),
                    binding[0].0
                )));
            }
        }

        self.t += 1;
        let t = self.t;
        let (b1, b2) = (self.beta1, self.beta2);
        let bias1 = 1.0 - b1.powi(t as i32);
        let bias2 = 1.0 - b2.powi(t as i32);
        let (lr, eps, wd) = (self.lr, self.eps, self.weight_decay);

        let mut slot_idx = 0usize;
        let slots = &mut self.slots;
        model.for_each_mut("", &mut |path, tensor| {
            let Some(var) = by_path.get(path) else { return };
            let g = match grads.get(*var) {
                Some(g) => g,
                None => return,
            };
            if slot_idx == slots.len() {
                slots.push(AdamWState {
                    path: path.to_string(),
                    m: vec![0.0; tensor.numel()],
                    v: vec![0.0; tensor.numel()],
                });
            }
            let slot = &mut slots[slot_idx];
            assert_eq!(
                slot.path, path,
                "optimizer slot order changed between steps; parameter visitation must be stable"
            );
            slot_idx += 1;
            let mut data = tensor.data().to_vec();
            for ((p, gi), (m, v)) in
                data.iter_mut().zip(g).zip(slot.m.iter_mut().zip(slot.v.iter_mut()))
            {
                *m = b1 * *m + (1.0 - b1) * gi;
                *v = b2 * *v + (1.0 - b2) * gi * gi;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
            }
            *tensor = Tensor::new(tensor.shape().to_vec(), data);
        });
        Ok(())
    }
}

// ---- checkpoints ----------------------------------------------------------

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    params: Vec<CheckpointParam>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointParam {
    path: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Serialize all parameters of `model` to a JSON value (flat list of
/// `path -> shape + values`, with a format version).
pub fn params_to_json(model: &dyn ParamSet) -> serde_json::Value {
    let mut params = Vec::new();
    model.for_each("", &mut |path, t| {
        params.push(CheckpointParam {
            path: path.to_string(),
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        });
    });
    serde_json::to_value(CheckpointFile { format_version: CHECKPOINT_VERSION, params })
        .expect("checkpoint serialization cannot fail")
}

/// Restore parameters serialized by [`params_to_json`] into `model`.
///
/// Fails if the format version is unknown, a parameter is missing or
/// unexpected, or a shape disagrees — each error names the parameter path.
pub fn params_from_json(value: serde_json::Value, model: &mut dyn ParamSet) -> Result<()> {
    let file: CheckpointFile = serde_json::from_value(value)
        .map_err(|e| Error::InvalidConfig(format!("malformed checkpoint: {e}")))?;
    if file.format_version != CHECKPOINT_VERSION {
        return Err(Error::InvalidConfig(format!(
            "checkpoint format version {} is not supported (expected {CHECKPOINT_VERSION})",
            file.format_version
        )));
    }
    let mut stored: HashMap<String, CheckpointParam> =
        file.params.into_iter().map(|p| (p.path.clone(), p)).collect();
    let mut failure: Option<Error> = None;
    model.for_each_mut("", &mut |path, tensor| {
        if failure.is_some() {
            return;
        }
        match stored.remove(path) {
            None => {
                failure =
                    Some(Error::InvalidConfig(format!("checkpoint is missing parameter '{path}'")));
            }
            Some(p) if p.shape != tensor.shape() => {
                failure = Some(Error::InvalidConfig(format!(
                    "checkpoint shape {:?} for parameter '{path}' does not match model shape {:?}",
                    p.shape,
                    tensor.shape()
                )));
            }
            Some(p) => {
                *tensor = Tensor::new(p.shape, p.data);
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(extra) = stored.keys().next() {
        return Err(Error::InvalidConfig(format!(
            "checkpoint contains parameter '{extra}' not present in the model"
        )));
    }
    Ok(())
}

/// Write `model`'s parameters to `path` as JSON, atomically
/// (temp file + rename).
pub fn save_checkpoint(path: &Path, model: &dyn ParamSet) -> Result<()> {
    let json = params_to_json(model);
    let bytes = serde_json::to_vec(&json)
        .map_err(|e| Error::InvalidConfig(format!("checkpoint serialization: {e}")))?;
    crate::ioutil::atomic_write(path, &bytes)
}

/// Load a checkpoint written by [`save_checkpoint`] into `model`.
pub fn load_checkpoint(path: &Path, model: &mut dyn ParamSet) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: format!("invalid checkpoint JSON: {e}"),
    })?;
    params_from_json(value, model)
}
