//! The forecaster: per-window normalization, a base MLP that drafts a
//! forecast, and refinement blocks that re-embed the draft, retrieve similar
//! in-window latents with a softmax kernel, and decode a correction blended
//! through a learned gate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding;
use crate::error::Error;
use crate::ioutil::atomic_write;
use crate::nn::{
    attention_batched, load_checkpoint, path_join, save_checkpoint, Forward, LinearLayer, Mlp,
    ParamSet,
};
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};
use crate::Result;

/// Pointwise error norm used inside the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Mae,
    Mse,
}

/// Channels whose lookback standard deviation falls below this are treated
/// as constant: normalized to zeros instead of amplifying rounding noise.
pub const REVIN_DEGENERATE_STD: f64 = 1e-8;

/// Hyperparameters of the forecaster.
///
/// The model is strictly channel-independent: every component is shared
/// across channels, so the channel count is a property of the data, not of
/// the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Lookback length T: samples the model conditions on.
    pub t_lookback: usize,
    /// Forecast length H: samples the model emits.
    pub horizon: usize,
    /// Delay-vector dimension used when re-embedding the extended series.
    pub delta_t: usize,
    /// Stride between delay-vector lags.
    pub tau: usize,
    /// Latent dimension M each delay vector is projected to.
    pub latent_dim: usize,
    /// Refinement blocks stacked after the base predictor (1..=3).
    pub n_blocks: usize,
    /// Linear layers in the base predictor (1..=3); one means a pure
    /// linear map.
    pub base_mlp_layers: usize,
    /// Hidden width of the base predictor (used when it has 2+ layers).
    pub base_hidden: usize,
    /// Hidden width of each block's decoder.
    pub dec_hidden: usize,
    /// Dropout probability after non-final MLP layers (training mode only).
    pub dropout_p: f64,
    /// Softmax temperature of the kernel regression.
    pub temperature: f64,
    /// Error norm the training objective applies.
    pub loss_mode: LossMode,
    /// Reweight the objective per sample by how often the forecast's first
    /// differences disagree in sign with the target's.
    pub adaptive_lambda: bool,
    /// Use the raw delay vectors as kernel-regression values instead of
    /// their encoded latents (the decoder then consumes delta_t * horizon
    /// inputs per channel).
    pub raw_delay_values: bool,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl ModelConfig {
    /// Defaults for a given window pair; every field stays adjustable.
    pub fn new(t_lookback: usize, horizon: usize) -> Self {
        ModelConfig {
            t_lookback,
            horizon,
            delta_t: 5,
            tau: 1,
            latent_dim: 64,
            n_blocks: 1,
            base_mlp_layers: 2,
            base_hidden: 2 * t_lookback,
            dec_hidden: 2 * horizon,
            dropout_p: 0.1,
            temperature: 1.0,
            loss_mode: LossMode::Mae,
            adaptive_lambda: true,
            raw_delay_values: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.t_lookback == 0 || self.horizon == 0 {
            return bad(format!(
                "lookback and horizon must be positive, got {} and {}",
                self.t_lookback, self.horizon
            ));
        }
        if self.delta_t == 0 || self.tau == 0 {
            return bad(format!(
                "delta_t and tau must be positive, got {} and {}",
                self.delta_t, self.tau
            ));
        }
        if self.latent_dim < self.delta_t {
            return bad(format!(
                "latent_dim {} must be at least delta_t {}",
                self.latent_dim, self.delta_t
            ));
        }
        if !(1..=3).contains(&self.n_blocks) {
            return bad(format!("n_blocks must be 1..=3, got {}", self.n_blocks));
        }
        if !(1..=3).contains(&self.base_mlp_layers) {
            return bad(format!("base_mlp_layers must be 1..=3, got {}", self.base_mlp_layers));
        }
        if self.base_mlp_layers > 1 && self.base_hidden == 0 {
            return bad("base_hidden must be positive for a multi-layer base".into());
        }
        if self.dec_hidden == 0 {
            return bad("dec_hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p must be in [0, 1), got {}", self.dropout_p));
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        Ok(())
    }

    /// Dimension of the vectors the kernel regression averages.
    fn value_dim(&self) -> usize {
        if self.raw_delay_values {
            self.delta_t
        } else {
            self.latent_dim
        }
    }
}

/// Per-channel statistics of one lookback window, kept so the forecast can
/// be mapped back to the data's scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevinState {
    /// Per-channel mean of the lookback.
    pub mean: Vec<f64>,
    /// Per-channel standard deviation; recorded as 0 for channels the
    /// normalizer treated as constant.
    pub std: Vec<f64>,
    /// Stabilizer added to std on both the forward and inverse paths.
    pub eps: f64,
}

/// Normalize each channel of a lookback window to zero mean and unit
/// variance, returning the statistics needed to invert the map.
///
/// Channels with standard deviation below [`REVIN_DEGENERATE_STD`] are
/// normalized to exact zeros (and restored to their mean by the inverse).
pub fn revin(series: &[Vec<f64>]) -> (Vec<Vec<f64>>, RevinState) {
    let eps = REVIN_DEGENERATE_STD;
    let mut mean = Vec::with_capacity(series.len());
    let mut std = Vec::with_capacity(series.len());
    let mut normalized = Vec::with_capacity(series.len());
    for row in series {
        assert!(!row.is_empty(), "cannot normalize an empty channel");
        let n = row.len() as f64;
        let mu = crate::tensor::pairwise_sum(row) / n;
        let sq: Vec<f64> = row.iter().map(|v| (v - mu) * (v - mu)).collect();
        let sigma = (crate::tensor::pairwise_sum(&sq) / n).sqrt();
        if sigma < REVIN_DEGENERATE_STD {
            normalized.push(vec![0.0; row.len()]);
            mean.push(mu);
            std.push(0.0);
        } else {
            normalized.push(row.iter().map(|v| (v - mu) / (sigma + eps)).collect());
            mean.push(mu);
            std.push(sigma);
        }
    }
    (normalized, RevinState { mean, std, eps })
}

/// Invert [`revin`]: rescale by the recorded std (plus eps) and re-add the
/// mean, channel by channel.
///
/// # Panics
/// Panics if the channel count differs from the recorded statistics.
pub fn revin_inverse(series: &[Vec<f64>], state: &RevinState) -> Vec<Vec<f64>> {
    assert_eq!(
        series.len(),
        state.mean.len(),
        "channel count {} does not match the {} recorded statistics",
        series.len(),
        state.mean.len()
    );
    series
        .iter()
        .zip(state.mean.iter().zip(&state.std))
        .map(|(row, (&mu, &sigma))| row.iter().map(|v| v * (sigma + state.eps) + mu).collect())
        .collect()
}

/// Kernel regression over an encoded sequence `z` of length `t_lookback +
/// horizon` (shape `[D, T+H, M]`).
///
/// For forecast step `h` (0-based), the query is the latent at position
/// `T - 1 + h`, the keys are the `T` lookback latents, and the values are
/// the latents one step after each key, so each output row is a softmax
/// kernel-weighted average of where the in-window trajectory went next.
/// Returns `[D, H, M]`.
///
/// # Panics
/// Panics if `z` is not rank 3 with temporal length `t_lookback + horizon`,
/// or if `t_lookback`, `horizon`, or `temperature` is not positive.
pub fn kernel_regress(
    tape: &mut Tape,
    z: Var,
    t_lookback: usize,
    horizon: usize,
    temperature: f64,
) -> Var {
    let values = slice_values(tape, z, t_lookback);
    kernel_regress_values(tape, z, values, t_lookback, horizon, temperature)
}

/// The value rows of a kernel regression: positions 1..=T of `seq`.
fn slice_values(tape: &mut Tape, seq: Var, t_lookback: usize) -> Var {
    tape.slice(seq, 1, 1, t_lookback + 1)
}

fn kernel_regress_values(
    tape: &mut Tape,
    z: Var,
    values: Var,
    t_lookback: usize,
    horizon: usize,
    temperature: f64,
) -> Var {
    let sp = tape.value(z).shape().to_vec();
    assert!(t_lookback >= 1 && horizon >= 1, "kernel regression needs T >= 1 and H >= 1");
    assert!(
        sp.len() == 3 && sp[1] == t_lookback + horizon,
        "kernel regression expects [D, T+H, M] = [_, {}, _], got {sp:?}",
        t_lookback + horizon
    );
    let queries = tape.slice(z, 1, t_lookback - 1, t_lookback + horizon - 1);
    let keys = tape.slice(z, 1, 0, t_lookback);
    attention_batched(tape, queries, keys, values, temperature)
}

/// One refinement block: re-embed the draft forecast together with its
/// lookback, project delay vectors to latents, kernel-regress a retrieved
/// forecast, decode a correction, and blend it with the draft through a
/// sigmoid gate.
#[derive(Debug, Clone)]
pub struct DeepEdmBlock {
    /// Shared linear projection from delay vectors to latents.
    pub encoder: LinearLayer,
    /// Per-channel decoder from the flattened retrieval to a correction.
    pub decoder: Mlp,
    /// Gate producing the per-step blend weight from the incoming draft.
    pub gate: LinearLayer,
}

impl DeepEdmBlock {
    fn new(cfg: &ModelConfig, rng: &mut rng::ChaCha8Rng) -> Self {
        let encoder = LinearLayer::new(cfg.delta_t, cfg.latent_dim, rng);
        let decoder = Mlp::new(
            &[cfg.value_dim() * cfg.horizon, cfg.dec_hidden, cfg.horizon],
            cfg.dropout_p,
            rng,
        );
        let mut gate = LinearLayer::new(cfg.horizon, cfg.horizon, rng);
        // Bias the gate open so a fresh stack starts out passing the base
        // forecast through and learns how much correction to let in.
        gate.bias = Tensor::new([cfg.horizon], vec![2.0; cfg.horizon]);
        DeepEdmBlock { encoder, decoder, gate }
    }

    /// `lookback_norm` is `[D, T]`, `forecast_in` is `[D, H]`; returns the
    /// refined `[D, H]` forecast.
    fn forward(
        &self,
        cfg: &ModelConfig,
        fw: &mut Forward,
        path: &str,
        lookback_norm: Var,
        forecast_in: Var,
    ) -> Var {
        let (t, h) = (cfg.t_lookback, cfg.horizon);
        let extended = fw.tape.concat(1, &[lookback_norm, forecast_in]);
        let emb = fw.tape.delay_embed(extended, cfg.delta_t, cfg.tau);
        let z = self.encoder.forward(fw, &path_join(path, "encoder"), emb);
        let values = if cfg.raw_delay_values {
            slice_values(fw.tape, emb, t)
        } else {
            slice_values(fw.tape, z, t)
        };
        let ybar = kernel_regress_values(fw.tape, z, values, t, h, cfg.temperature);
        // [D, H, V] -> [D, V, H] -> [D, V*H]: flatten value-major so each
        // retrieved coordinate's horizon run stays contiguous.
        let ybar = fw.tape.transpose_last2(ybar);
        let d = fw.tape.value(ybar).shape()[0];
        let flat = fw.tape.reshape(ybar, [d, cfg.value_dim() * h]);
        let correction = self.decoder.forward(fw, &path_join(path, "decoder"), flat);
        let gate_pre = self.gate.forward(fw, &path_join(path, "gate"), forecast_in);
        let g = fw.tape.sigmoid(gate_pre);
        let ones = fw.tape.constant([d, h], vec![1.0; d * h]);
        let inv_g = fw.tape.sub(ones, g);
        let keep = fw.tape.mul(g, forecast_in);
        let add_in = fw.tape.mul(inv_g, correction);
        fw.tape.add(keep, add_in)
    }
}

impl ParamSet for DeepEdmBlock {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.encoder.for_each(&path_join(prefix, "encoder"), f);
        self.decoder.for_each(&path_join(prefix, "decoder"), f);
        self.gate.for_each(&path_join(prefix, "gate"), f);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.encoder.for_each_mut(&path_join(prefix, "encoder"), f);
        self.decoder.for_each_mut(&path_join(prefix, "decoder"), f);
        self.gate.for_each_mut(&path_join(prefix, "gate"), f);
    }
}

/// The full forecaster: base MLP plus stacked refinement blocks, all shared
/// across channels.
#[derive(Debug, Clone)]
pub struct DeepEdm {
    cfg: ModelConfig,
    /// Draft predictor mapping each normalized channel row to a forecast.
    pub base: Mlp,
    /// Refinement blocks, applied in order.
    pub blocks: Vec<DeepEdmBlock>,
}

impl DeepEdm {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::stream(cfg.seed, "model/init");
        let mut dims = vec![cfg.t_lookback];
        dims.extend(std::iter::repeat(cfg.base_hidden).take(cfg.base_mlp_layers - 1));
        dims.push(cfg.horizon);
        let base = Mlp::new(&dims, cfg.dropout_p, &mut rng);
        let blocks = (0..cfg.n_blocks).map(|_| DeepEdmBlock::new(&cfg, &mut rng)).collect();
        Ok(DeepEdm { cfg, base, blocks })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Run the model on a `[D, T]` lookback, leaving the whole computation
    /// on `fw`'s tape. Returns the denormalized `[D, H]` forecast and the
    /// normalization state it used.
    ///
    /// Channel count is free (rows are processed independently), which is
    /// also how training batches windows: stacked as extra channels.
    pub fn forward_on_tape(
        &self,
        fw: &mut Forward,
        lookback: &[Vec<f64>],
    ) -> Result<(Var, RevinState)> {
        if lookback.is_empty() {
            return Err(Error::InvalidConfig("forecast input needs at least one channel".into()));
        }
        let t = self.cfg.t_lookback;
        for (i, row) in lookback.iter().enumerate() {
            if row.len() != t {
                return Err(Error::InvalidConfig(format!(
                    "lookback channel {i} has {} samples, the model expects {t}",
                    row.len()
                )));
            }
        }
        let (norm, state) = revin(lookback);
        let d = lookback.len();
        let flat: Vec<f64> = norm.iter().flatten().copied().collect();
        let x = fw.tape.constant([d, t], flat);
        let mut y = self.base.forward(fw, "base", x);
        for (i, block) in self.blocks.iter().enumerate() {
            y = block.forward(&self.cfg, fw, &format!("block{i}"), x, y);
        }
        let h = self.cfg.horizon;
        let scale: Vec<f64> =
            state.std.iter().flat_map(|s| std::iter::repeat(s + state.eps).take(h)).collect();
        let shift: Vec<f64> =
            state.mean.iter().flat_map(|m| std::iter::repeat(*m).take(h)).collect();
        let sc = fw.tape.constant([d, h], scale);
        let mc = fw.tape.constant([d, h], shift);
        let y = fw.tape.mul(y, sc);
        let y = fw.tape.add(y, mc);
        Ok((y, state))
    }

    /// Forecast a `[D, T]` lookback in evaluation mode (dropout off).
    pub fn predict(&self, lookback: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let mut fw = Forward::eval(&mut tape);
        let (y, _) = self.forward_on_tape(&mut fw, lookback)?;
        let out = fw.tape.value(y);
        Ok(out.data().chunks(self.cfg.horizon).map(|c| c.to_vec()).collect())
    }

    /// Project every position of a scalar series into the first block's
    /// latent space: standardize the series, delay-embed it with the
    /// model's own lag structure, and apply the encoder. Positions earlier
    /// than a full delay vector use the embedding's zero padding.
    ///
    /// This is the representation the neighbor-recall experiment ranks by
    /// inner product.
    pub fn encode_series(&self, series: &[f64]) -> Result<Vec<Vec<f64>>> {
        if series.is_empty() {
            return Err(Error::SeriesTooShort { what: "series to encode", needed: 1, got: 0 });
        }
        let (norm, _) = revin(&[series.to_vec()]);
        let emb = embedding::delay_embed(&norm, self.cfg.delta_t, self.cfg.tau)?;
        let enc = &self.blocks[0].encoder;
        let (m, dt) = (enc.out_dim(), enc.in_dim());
        let w = enc.weight.data();
        let b = enc.bias.data();
        let mut out = Vec::with_capacity(series.len());
        for t in 0..series.len() {
            let v = emb.vector(0, t);
            let mut z = Vec::with_capacity(m);
            for row in 0..m {
                let wr = &w[row * dt..(row + 1) * dt];
                let dot: f64 = wr.iter().zip(&v).map(|(a, b)| a * b).sum();
                z.push(dot + b[row]);
            }
            out.push(z);
        }
        Ok(out)
    }

    /// Write the parameters and a config echo into `dir`
    /// (`checkpoint.json` + `model.json`).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_checkpoint(&dir.join("checkpoint.json"), self)?;
        let cfg = serde_json::to_vec_pretty(&self.cfg).expect("config serializes");
        atomic_write(&dir.join("model.json"), &cfg)
    }

    /// Rebuild a model saved with [`DeepEdm::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let cfg_path = dir.join("model.json");
        let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let cfg: ModelConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: cfg_path.clone(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        let mut model = DeepEdm::new(cfg)?;
        load_checkpoint(&dir.join("checkpoint.json"), &mut model)?;
        Ok(model)
    }
}

impl ParamSet for DeepEdm {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.base.for_each(&path_join(prefix, "base"), f);
        for (i, block) in self.blocks.iter().enumerate() {
            block.for_each(&path_join(prefix, &format!("block{i}")), f);
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.base.for_each_mut(&path_join(prefix, "base"), f);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.for_each_mut(&path_join(prefix, &format!("block{i}")), f);
        }
    }
}
