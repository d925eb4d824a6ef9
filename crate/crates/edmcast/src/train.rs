//! Training: the composite objective (pointwise error blended with a
//! first-difference term, weighted adaptively by sign agreement) and an
//! AdamW loop with early stopping on validation loss.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::ioutil::atomic_write;
use crate::model::{DeepEdm, LossMode};
use crate::nn::{params_from_json, params_to_json, Forward};
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};
use crate::Result;

/// Configuration of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Norm of the pointwise error term.
    pub err_norm: LossMode,
    /// Reweight per sample by the fraction of first differences whose sign
    /// the forecast gets wrong; otherwise `fixed_lambda` is used.
    pub adaptive_lambda: bool,
    /// Blend weight when `adaptive_lambda` is off: 1 is the pure pointwise
    /// loss, 0 the pure difference loss.
    pub fixed_lambda: f64,
}

impl LossConfig {
    /// The weighting a model's own configuration asks for.
    pub fn from_model(cfg: &crate::model::ModelConfig) -> Self {
        LossConfig {
            err_norm: cfg.loss_mode,
            adaptive_lambda: cfg.adaptive_lambda,
            fixed_lambda: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fixed_lambda) {
            return Err(Error::InvalidConfig(format!(
                "fixed_lambda must be in [0, 1], got {}",
                self.fixed_lambda
            )));
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { err_norm: LossMode::Mae, adaptive_lambda: true, fixed_lambda: 1.0 }
    }
}

/// Optimizer and loop settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Maximum epochs.
    pub epochs: usize,
    /// Windows per optimizer step; the final short batch still trains.
    pub batch_size: usize,
    /// AdamW learning rate.
    pub lr: f64,
    /// AdamW decoupled weight decay.
    pub weight_decay: f64,
    /// Consecutive non-improving validation epochs tolerated before
    /// stopping; 0 stops at the first epoch that fails to improve.
    pub patience: usize,
    /// Offset between consecutive training windows.
    pub stride: usize,
    /// Seed for window shuffling and dropout masks.
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        TrainConfig {
            epochs: 250,
            batch_size: 32,
            lr: 5e-4,
            weight_decay: 1e-4,
            patience: 10,
            stride: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.epochs == 0 || self.batch_size == 0 || self.stride == 0 {
            return bad(format!(
                "epochs, batch_size, and stride must be positive, got {}, {}, {}",
                self.epochs, self.batch_size, self.stride
            ));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad(format!(
                "lr and weight_decay must be non-negative, got {} and {}",
                self.lr, self.weight_decay
            ));
        }
        Ok(())
    }
}

/// One (lookback, target) training pair, all channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// `[D][T]` conditioning slice.
    pub lookback: Vec<Vec<f64>>,
    /// `[D][H]` slice immediately after the lookback.
    pub target: Vec<Vec<f64>>,
}

/// Slide a `(t_lookback, horizon)` window pair over a `[D][L]` series.
///
/// With stride 1 this yields `L - T - H + 1` windows.
pub fn make_windows(
    series: &[Vec<f64>],
    t_lookback: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<Window>> {
    if series.is_empty() {
        return Err(Error::InvalidConfig("window extraction needs at least one channel".into()));
    }
    if stride == 0 || t_lookback == 0 || horizon == 0 {
        return Err(Error::InvalidConfig(format!(
            "window extraction needs positive lookback, horizon, and stride, got {t_lookback}, {horizon}, {stride}"
        )));
    }
    let len = series[0].len();
    if let Some(bad) = series.iter().find(|row| row.len() != len) {
        return Err(Error::InvalidConfig(format!(
            "channels have unequal lengths: {} vs {}",
            len,
            bad.len()
        )));
    }
    let span = t_lookback + horizon;
    if len < span {
        return Err(Error::SeriesTooShort { what: "window extraction", needed: span, got: len });
    }
    let mut out = Vec::with_capacity((len - span) / stride + 1);
    let mut origin = 0;
    while origin + span <= len {
        let lookback =
            series.iter().map(|row| row[origin..origin + t_lookback].to_vec()).collect();
        let target = series
            .iter()
            .map(|row| row[origin + t_lookback..origin + span].to_vec())
            .collect();
        out.push(Window { lookback, target });
        origin += stride;
    }
    Ok(out)
}

// ---- loss terms -------------------------------------------------------------

/// Mean pointwise error between `yhat` and `y` (same shape), absolute or
/// squared per `norm`, averaged over every element.
///
/// # Panics
/// Panics on shape mismatch (tape misuse).
pub fn loss_err(tape: &mut Tape, yhat: Var, y: Var, norm: LossMode) -> Var {
    let e = tape.sub(yhat, y);
    let pointwise = match norm {
        LossMode::Mae => tape.abs(e),
        LossMode::Mse => tape.mul(e, e),
    };
    tape.mean(pointwise)
}

/// Mean absolute error between the first differences of `yhat` and `y`
/// (`[N, H]` each).
///
/// With `anchor` (`[N, 1]`, the final lookback column) the first difference
/// of step 0 is taken against it, giving H terms per row; without an anchor
/// the differences start inside the forecast (H-1 terms), which makes the
/// loss invariant to a constant offset.
///
/// # Panics
/// Panics if `horizon < 2` and no anchor is given, or on shape mismatch.
pub fn loss_td(tape: &mut Tape, yhat: Var, y: Var, anchor: Option<Var>) -> Var {
    let h = tape.value(yhat).shape()[1];
    let diffs = |tape: &mut Tape, x: Var| match anchor {
        Some(a) => {
            let shifted =
                if h == 1 { a } else { let head = tape.slice(x, 1, 0, h - 1); tape.concat(1, &[a, head]) };
            tape.sub(x, shifted)
        }
        None => {
            assert!(h >= 2, "first-difference loss needs horizon >= 2 when no anchor is given");
            let tail = tape.slice(x, 1, 1, h);
            let head = tape.slice(x, 1, 0, h - 1);
            tape.sub(tail, head)
        }
    };
    let dyhat = diffs(tape, yhat);
    let dy = diffs(tape, y);
    let e = tape.sub(dyhat, dy);
    let e = tape.abs(e);
    tape.mean(e)
}

fn sgn(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Count sign disagreements between anchored first differences, row by row.
fn count_disagreements(yhat: &[f64], y: &[f64], anchor: &[f64], h: usize) -> usize {
    let mut count = 0;
    for (row, &a) in anchor.iter().enumerate() {
        let (mut prev_yhat, mut prev_y) = (a, a);
        for i in 0..h {
            let (vh, vy) = (yhat[row * h + i], y[row * h + i]);
            if sgn(vh - prev_yhat) != sgn(vy - prev_y) {
                count += 1;
            }
            prev_yhat = vh;
            prev_y = vy;
        }
    }
    count
}

/// Fraction of forecast steps whose first difference (anchored at the final
/// lookback value) has a different sign than the target's. Always in
/// `[0, 1]`; zero differences count as sign 0.
///
/// The result is used as a loss weight but is a plain number: gradients
/// never flow through it.
///
/// # Panics
/// Panics if shapes disagree or `anchor` has fewer entries than rows.
pub fn adaptive_lambda(yhat: &Tensor, y: &Tensor, anchor: &[f64]) -> f64 {
    assert_eq!(yhat.shape(), y.shape(), "adaptive lambda needs matching shapes");
    let h = *yhat.shape().last().expect("non-empty shape");
    let rows = yhat.numel() / h;
    assert_eq!(rows, anchor.len(), "one anchor per row");
    if yhat.numel() == 0 {
        return 0.0;
    }
    count_disagreements(yhat.data(), y.data(), anchor, h) as f64 / (rows * h) as f64
}

/// The training objective for one batch: `lambda * L_err + (1 - lambda) *
/// L_td`, with the first-difference term anchored at `anchor` (`[N, 1]`).
///
/// Rows are grouped into samples of `channels_per_sample` consecutive rows;
/// with adaptive weighting, lambda is the mean of the per-sample
/// disagreement fractions. Returns the loss node and the lambda used
/// (which gradients do not flow through). Fixed lambda 1 or 0 returns the
/// single surviving term untouched.
///
/// # Panics
/// Panics if row counts are not a multiple of `channels_per_sample` or on
/// shape mismatch.
pub fn composite_loss(
    tape: &mut Tape,
    yhat: Var,
    y: Var,
    anchor: Var,
    channels_per_sample: usize,
    cfg: &LossConfig,
) -> (Var, f64) {
    let shape = tape.value(yhat).shape().to_vec();
    assert_eq!(shape.len(), 2, "composite loss expects [rows, horizon]");
    let (rows, h) = (shape[0], shape[1]);
    assert!(
        channels_per_sample > 0 && rows % channels_per_sample == 0,
        "{rows} rows do not split into samples of {channels_per_sample} channels"
    );
    let lambda = if cfg.adaptive_lambda {
        let yhat_v = tape.value(yhat).data().to_vec();
        let y_v = tape.value(y).data().to_vec();
        let anchor_v = tape.value(anchor).data().to_vec();
        let c = channels_per_sample;
        let samples = rows / c;
        let total: f64 = (0..samples)
            .map(|s| {
                count_disagreements(
                    &yhat_v[s * c * h..(s + 1) * c * h],
                    &y_v[s * c * h..(s + 1) * c * h],
                    &anchor_v[s * c..(s + 1) * c],
                    h,
                ) as f64
                    / (c * h) as f64
            })
            .sum();
        total / samples as f64
    } else {
        cfg.fixed_lambda
    };
    let loss = if lambda == 1.0 {
        loss_err(tape, yhat, y, cfg.err_norm)
    } else if lambda == 0.0 {
        loss_td(tape, yhat, y, Some(anchor))
    } else {
        let err = loss_err(tape, yhat, y, cfg.err_norm);
        let td = loss_td(tape, yhat, y, Some(anchor));
        let err = tape.scale(err, lambda);
        let td = tape.scale(td, 1.0 - lambda);
        tape.add(err, td)
    };
    (loss, lambda)
}

// ---- training loop ----------------------------------------------------------

/// Loss history of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Mean training loss, weighted by windows.
    pub train_loss: f64,
    /// Validation loss after the epoch.
    pub val_loss: f64,
    /// Mean loss weight over the epoch's training batches.
    pub lambda_mean: f64,
}

/// What [`train`] did and how it went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    /// Epoch whose parameters the model was left holding.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Write the per-epoch history as CSV (`epoch,train_loss,val_loss,lambda_mean`).
pub fn save_history_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in history {
        w.serialize(row).map_err(|e| Error::InvalidConfig(format!("history row: {e}")))?;
    }
    let bytes = w.into_inner().expect("in-memory writer cannot fail");
    atomic_write(path, &bytes)
}

/// Stack a set of windows into one forward pass: lookback rows `[B*D, T]`,
/// flattened targets, and the per-row anchor (final lookback value).
fn assemble(windows: &[Window], idxs: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let mut lookback = Vec::new();
    let mut target = Vec::new();
    let mut anchor = Vec::new();
    for &i in idxs {
        for (lb, tg) in windows[i].lookback.iter().zip(&windows[i].target) {
            anchor.push(*lb.last().expect("non-empty lookback"));
            lookback.push(lb.clone());
            target.extend_from_slice(tg);
        }
    }
    (lookback, target, anchor)
}

/// Composite loss of `model` over `windows` in evaluation mode, batched by
/// `batch_size` and weighted by window count (so the answer does not depend
/// on the batching).
pub fn validation_loss(
    model: &DeepEdm,
    windows: &[Window],
    batch_size: usize,
    loss_cfg: &LossConfig,
) -> Result<f64> {
    assert!(!windows.is_empty(), "validation needs at least one window");
    let h = model.config().horizon;
    let idxs: Vec<usize> = (0..windows.len()).collect();
    let mut total = 0.0;
    for chunk in idxs.chunks(batch_size.max(1)) {
        let (lookback, target, anchor) = assemble(windows, chunk);
        let channels = lookback.len() / chunk.len();
        let mut tape = Tape::new();
        let mut fw = Forward::eval(&mut tape);
        let (yhat, _) = model.forward_on_tape(&mut fw, &lookback)?;
        drop(fw);
        let rows = lookback.len();
        let y = tape.constant([rows, h], target);
        let a = tape.constant([rows, 1], anchor);
        let (loss, _) = composite_loss(&mut tape, yhat, y, a, channels, loss_cfg);
        total += tape.value(loss).data()[0] * chunk.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

/// Train `model` on sliding windows of `train_series`, early-stopping on
/// the composite loss over `val_series` windows, and leave it holding the
/// parameters of its best validation epoch.
///
/// Deterministic for a fixed `cfg.seed`: the same window order and dropout
/// masks are drawn every run. No final short batch is dropped.
pub fn train(
    model: &mut DeepEdm,
    train_series: &[Vec<f64>],
    val_series: &[Vec<f64>],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    loss_cfg.validate()?;
    let (t, h) = (model.config().t_lookback, model.config().horizon);
    let train_windows = make_windows(train_series, t, h, cfg.stride)?;
    let val_windows = make_windows(val_series, t, h, 1)?;

    let mut opt = crate::nn::AdamW::new(cfg.lr, cfg.weight_decay);
    let mut history = Vec::new();
    let mut best: Option<(f64, serde_json::Value, usize)> = None;
    let mut bad_epochs = 0usize;
    let mut epochs_run = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        epochs_run = epoch;
        let mut order: Vec<usize> = (0..train_windows.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &format!("train/epoch{epoch}")));

        let mut loss_sum = 0.0;
        let mut lambda_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = b + 1;
            let (lookback, target, anchor) = assemble(&train_windows, chunk);
            let channels = lookback.len() / chunk.len();
            let mut tape = Tape::new();
            let mut fw = Forward::new(
                &mut tape,
                true,
                rng::stream(cfg.seed, &format!("dropout/epoch{epoch}/batch{batch}")),
            );
            let (yhat, _) = model.forward_on_tape(&mut fw, &lookback)?;
            let binding = fw.into_binding();
            let rows = lookback.len();
            let y = tape.constant([rows, h], target);
            let a = tape.constant([rows, 1], anchor);
            let (loss, lambda) = composite_loss(&mut tape, yhat, y, a, channels, loss_cfg);
            let loss_value = tape.value(loss).data()[0];
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss became {loss_value} at epoch {epoch}, batch {batch}"
                )));
            }
            let grads = tape.backward(loss);
            opt.step(model, &binding, &grads).map_err(|e| {
                Error::NonFinite(format!("epoch {epoch}, batch {batch}: {e}"))
            })?;
            loss_sum += loss_value * chunk.len() as f64;
            lambda_sum += lambda * chunk.len() as f64;
        }

        let train_loss = loss_sum / train_windows.len() as f64;
        let lambda_mean = lambda_sum / train_windows.len() as f64;
        let val_loss = validation_loss(model, &val_windows, cfg.batch_size, loss_cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "validation loss became {val_loss} after epoch {epoch}"
            )));
        }
        history.push(EpochStats { epoch, train_loss, val_loss, lambda_mean });

        let improved = best.as_ref().map_or(true, |(b, _, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, params_to_json(model), epoch));
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_val_loss, params, best_epoch) = best.expect("at least one epoch ran");
    params_from_json(params, model)?;
    Ok(TrainReport { history, best_epoch, best_val_loss, epochs_run, stopped_early })
}
