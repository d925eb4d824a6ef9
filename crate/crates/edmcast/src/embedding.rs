//! Time-delay embedding of scalar and multivariate series.
//!
//! The delay vector at time `t` with `delta_t` lags and stride `tau` is
//! `[x_t, x_{t-tau}, ..., x_{t-(delta_t-1)tau}]` — most recent value first.
//! Positions before the start of the series are zero-padded, so every time
//! step has a vector and the embedding is the same length as the input. By
//! Takens' theorem such vectors reconstruct the underlying system state for
//! a generic observable, which is what makes nearest-neighbor forecasting on
//! them work.

use crate::error::Error;
use crate::Result;

/// Delay embedding of a `[D, L]` series, stored as `data[d][j][t]` =
/// `series[d][t - j*tau]` (0 when `t < j*tau`): axis order is channel, lag,
/// time.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayEmbedding {
    data: Vec<f64>,
    channels: usize,
    delta_t: usize,
    len: usize,
    tau: usize,
}

impl DelayEmbedding {
    /// Number of channels `D`.
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of lags per delay vector.
    pub fn delta_t(&self) -> usize {
        self.delta_t
    }

    /// Series length `L` (embedding positions).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Lag stride.
    pub fn tau(&self) -> usize {
        self.tau
    }

    /// Element `data[d, j, t]`.
    pub fn at(&self, d: usize, j: usize, t: usize) -> f64 {
        assert!(
            d < self.channels && j < self.delta_t && t < self.len,
            "index ({d}, {j}, {t}) out of bounds for embedding [{}, {}, {}]",
            self.channels,
            self.delta_t,
            self.len
        );
        self.data[(d * self.delta_t + j) * self.len + t]
    }

    /// Lag row `j` of channel `d` across all times.
    pub fn lag_row(&self, d: usize, j: usize) -> &[f64] {
        assert!(d < self.channels && j < self.delta_t, "lag row ({d}, {j}) out of bounds");
        let base = (d * self.delta_t + j) * self.len;
        &self.data[base..base + self.len]
    }

    /// The delay vector at `(d, t)`, most recent value first.
    pub fn vector(&self, d: usize, t: usize) -> Vec<f64> {
        (0..self.delta_t).map(|j| self.at(d, j, t)).collect()
    }

    /// First position whose vector contains no zero padding.
    pub fn first_complete(&self) -> usize {
        (self.delta_t - 1) * self.tau
    }

    /// Raw `[D, delta_t, L]` buffer, row-major.
    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

fn validate(series: &[Vec<f64>], delta_t: usize, tau: usize) -> Result<usize> {
    if delta_t == 0 {
        return Err(Error::InvalidConfig("delay embedding needs delta_t >= 1".into()));
    }
    if tau == 0 {
        return Err(Error::InvalidConfig("delay embedding needs tau >= 1".into()));
    }
    let len = series.first().map(Vec::len).unwrap_or(0);
    if series.is_empty() || len == 0 {
        return Err(Error::SeriesTooShort { what: "delay embedding", needed: 1, got: 0 });
    }
    if series.iter().any(|c| c.len() != len) {
        return Err(Error::InvalidConfig("all channels must have the same length".into()));
    }
    Ok(len)
}

/// Embed a `[D, L]` series (one `Vec` per channel).
pub fn delay_embed(series: &[Vec<f64>], delta_t: usize, tau: usize) -> Result<DelayEmbedding> {
    let len = validate(series, delta_t, tau)?;
    let channels = series.len();
    let mut data = vec![0.0; channels * delta_t * len];
    for (d, chan) in series.iter().enumerate() {
        for j in 0..delta_t {
            let row = &mut data[(d * delta_t + j) * len..(d * delta_t + j + 1) * len];
            for (t, slot) in row.iter_mut().enumerate().skip(j * tau) {
                *slot = chan[t - j * tau];
            }
        }
    }
    Ok(DelayEmbedding { data, channels, delta_t, len, tau })
}

/// Embed the concatenation of a lookback window and a forecast: channel `d`
/// becomes `[lookback[d], forecast[d]]` of length `T + H`, then is delay
/// embedded as usual. Delay vectors near the seam mix forecast values with
/// the observed tail, which is exactly what a forecaster refining its own
/// prediction needs.
pub fn embed_extended(
    lookback: &[Vec<f64>],
    forecast: &[Vec<f64>],
    delta_t: usize,
    tau: usize,
) -> Result<DelayEmbedding> {
    if lookback.len() != forecast.len() {
        return Err(Error::InvalidConfig(format!(
            "lookback has {} channels but forecast has {}",
            lookback.len(),
            forecast.len()
        )));
    }
    let extended: Vec<Vec<f64>> = lookback
        .iter()
        .zip(forecast)
        .map(|(lb, fc)| {
            let mut c = Vec::with_capacity(lb.len() + fc.len());
            c.extend_from_slice(lb);
            c.extend_from_slice(fc);
            c
        })
        .collect();
    delay_embed(&extended, delta_t, tau)
}
