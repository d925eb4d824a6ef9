//! Forecast accuracy metrics and the reference forecasters they are scored
//! against.
//!
//! Definitions follow the usual forecasting-competition conventions:
//! percentage errors are on a 0–100 scale (0–200 for the symmetric variant),
//! the scaled error normalizes by the in-sample seasonal-naive error, and the
//! overall weighted average halves the SMAPE and MASE ratios against a
//! seasonally adjusted naive reference. All aggregation uses pairwise
//! summation so results do not drift with window count.

use crate::error::Error;
use crate::tensor::pairwise_sum;
use crate::Result;
use serde::{Deserialize, Serialize};

/// Aggregate scores for one (dataset, model, horizon) evaluation.
///
/// `owa` is present only when a reference forecaster was supplied and scored
/// nonzero on both of its component metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub mae: f64,
    pub smape: f64,
    pub mape: f64,
    pub mase: f64,
    pub owa: Option<f64>,
    pub n_windows: usize,
}

/// Span the scaled-error denominator averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaseScope {
    /// In-sample window concatenated with the target — the literal
    /// competition formula, averaging `|c_j - c_{j-m}|` over the full span.
    InsampleAndTarget,
    /// In-sample window alone.
    InsampleOnly,
}

fn mean(terms: &[f64]) -> f64 {
    assert!(!terms.is_empty(), "mean of an empty slice");
    pairwise_sum(terms) / terms.len() as f64
}

fn paired<'a>(y: &'a [f64], yhat: &'a [f64]) -> impl Iterator<Item = (f64, f64)> + 'a {
    assert_eq!(y.len(), yhat.len(), "target and forecast lengths differ");
    assert!(!y.is_empty(), "metrics need at least one element");
    y.iter().copied().zip(yhat.iter().copied())
}

/// Mean squared error over all elements.
pub fn mse(y: &[f64], yhat: &[f64]) -> f64 {
    let terms: Vec<f64> = paired(y, yhat).map(|(a, b)| (a - b) * (a - b)).collect();
    mean(&terms)
}

/// Mean absolute error over all elements.
pub fn mae(y: &[f64], yhat: &[f64]) -> f64 {
    let terms: Vec<f64> = paired(y, yhat).map(|(a, b)| (a - b).abs()).collect();
    mean(&terms)
}

fn smape_term(y: f64, yhat: f64) -> f64 {
    let denom = y.abs() + yhat.abs();
    if denom == 0.0 {
        0.0 // both values zero: a perfect forecast contributes no error
    } else {
        (y - yhat).abs() / denom
    }
}

/// Symmetric mean absolute percentage error, in [0, 200].
pub fn smape(y: &[f64], yhat: &[f64]) -> f64 {
    let terms: Vec<f64> = paired(y, yhat).map(|(a, b)| smape_term(a, b)).collect();
    200.0 * mean(&terms)
}

/// Mean absolute percentage error on a 0–100 scale. Elements whose true
/// value is exactly zero contribute 0 (the percentage is undefined there).
pub fn mape(y: &[f64], yhat: &[f64]) -> f64 {
    let terms: Vec<f64> = paired(y, yhat)
        .map(|(a, b)| if a == 0.0 { 0.0 } else { (a - b).abs() / a.abs() })
        .collect();
    100.0 * mean(&terms)
}

/// Mean absolute scaled error: forecast MAE divided by the mean absolute
/// `m`-step difference of the series (over `scope`). Scale-free, so doubling
/// target, forecast, and in-sample window together leaves it unchanged.
pub fn mase(y: &[f64], yhat: &[f64], insample: &[f64], m: usize, scope: MaseScope) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidConfig("seasonality period m must be >= 1".into()));
    }
    if insample.len() < m + 1 {
        return Err(Error::SeriesTooShort {
            what: "scaled-error in-sample window",
            needed: m + 1,
            got: insample.len(),
        });
    }
    let numerator = mae(y, yhat);
    let span: Vec<f64> = match scope {
        MaseScope::InsampleAndTarget => insample.iter().chain(y).copied().collect(),
        MaseScope::InsampleOnly => insample.to_vec(),
    };
    let diffs: Vec<f64> = (m..span.len()).map(|j| (span[j] - span[j - m]).abs()).collect();
    let denominator = mean(&diffs);
    if denominator <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "scaled-error denominator is zero: the series is constant at period {m}"
        )));
    }
    Ok(numerator / denominator)
}

/// Overall weighted average: half the sum of the SMAPE and MASE ratios
/// against a reference forecaster. 1.0 means parity with the reference.
pub fn owa(smape: f64, mase: f64, smape_ref: f64, mase_ref: f64) -> Result<f64> {
    if smape_ref <= 0.0 || mase_ref <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "reference scores must be positive for a ratio metric, got SMAPE {smape_ref} and MASE {mase_ref}"
        )));
    }
    Ok(0.5 * (smape / smape_ref + mase / mase_ref))
}

/// Repeat the last observed value `h` times.
pub fn naive_forecast(lookback: &[f64], h: usize) -> Result<Vec<f64>> {
    match lookback.last() {
        Some(&last) => Ok(vec![last; h]),
        None => Err(Error::SeriesTooShort { what: "naive forecast lookback", needed: 1, got: 0 }),
    }
}

/// Per-channel [`naive_forecast`].
pub fn naive_multivariate(lookback: &[Vec<f64>], h: usize) -> Result<Vec<Vec<f64>>> {
    lookback.iter().map(|c| naive_forecast(c, h)).collect()
}

/// Lag-`i` autocorrelation of the demeaned series; 0 for a constant series.
fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let xbar = mean(x);
    let centered: Vec<f64> = x.iter().map(|v| v - xbar).collect();
    let sq: Vec<f64> = centered.iter().map(|v| v * v).collect();
    let var = pairwise_sum(&sq);
    if var == 0.0 {
        return 0.0;
    }
    let cross: Vec<f64> = (lag..x.len()).map(|t| centered[t] * centered[t - lag]).collect();
    pairwise_sum(&cross) / var
}

/// 90%-level autocorrelation significance test at lag `m`.
fn is_seasonal(x: &[f64], m: usize) -> bool {
    if m < 2 || x.len() < m + 2 {
        return false;
    }
    let r_m = autocorrelation(x, m);
    let sum_sq: Vec<f64> = (1..m).map(|i| autocorrelation(x, i).powi(2)).collect();
    let crit = 1.645 * ((1.0 + 2.0 * pairwise_sum(&sum_sq)) / x.len() as f64).sqrt();
    r_m.abs() > crit
}

/// Centered moving-average trend of window `m`; `None` where the window does
/// not fit. Even `m` uses an (m+1)-point window with half weights at the ends.
fn centered_trend(x: &[f64], m: usize) -> Vec<Option<f64>> {
    let n = x.len();
    let mut trend = vec![None; n];
    let half = m / 2;
    if m % 2 == 1 {
        for t in half..n.saturating_sub(half) {
            trend[t] = Some(mean(&x[t - half..=t + half]));
        }
    } else {
        for t in half..n.saturating_sub(half) {
            let window = &x[t - half..=t + half];
            let inner: Vec<f64> = window[1..window.len() - 1].to_vec();
            let s = pairwise_sum(&inner) + 0.5 * (window[0] + window[window.len() - 1]);
            trend[t] = Some(s / m as f64);
        }
    }
    trend
}

/// Multiplicative seasonal indices at period `m`, normalized to mean 1.
/// Phases never covered by a full trend window default to 1.
fn seasonal_indices(x: &[f64], m: usize) -> Vec<f64> {
    let trend = centered_trend(x, m);
    let mut phase_terms: Vec<Vec<f64>> = vec![Vec::new(); m];
    for (t, tr) in trend.iter().enumerate() {
        if let Some(tr) = tr {
            if *tr > 0.0 {
                phase_terms[t % m].push(x[t] / tr);
            }
        }
    }
    let mut indices: Vec<f64> =
        phase_terms.iter().map(|v| if v.is_empty() { 1.0 } else { mean(v) }).collect();
    let scale = mean(&indices);
    if scale > 0.0 {
        for s in &mut indices {
            *s /= scale;
        }
    }
    indices
}

/// Seasonally adjusted naive forecast: when the lookback passes a seasonality
/// test at period `m`, divide out multiplicative seasonal indices, repeat the
/// last adjusted value, and restore the indices over the forecast steps.
/// With `m == 1`, a failed test, or non-positive data (where a multiplicative
/// adjustment is undefined) this reduces to [`naive_forecast`].
pub fn naive2_forecast(lookback: &[f64], h: usize, m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::InvalidConfig("seasonality period m must be >= 1".into()));
    }
    if lookback.len() < m {
        return Err(Error::SeriesTooShort {
            what: "seasonally adjusted naive lookback",
            needed: m,
            got: lookback.len(),
        });
    }
    let n = lookback.len();
    if m == 1 || lookback.iter().any(|&v| v <= 0.0) || !is_seasonal(lookback, m) {
        return naive_forecast(lookback, h);
    }
    let indices = seasonal_indices(lookback, m);
    let last_adjusted = lookback[n - 1] / indices[(n - 1) % m];
    Ok((0..h).map(|i| last_adjusted * indices[(n + i) % m]).collect())
}

/// One evaluation window: a forecast, its target, and the lookback it was
/// issued from (needed by scale-normalized metrics).
#[derive(Debug, Clone, Copy)]
pub struct ForecastCase<'a> {
    pub target: &'a [f64],
    pub forecast: &'a [f64],
    pub insample: &'a [f64],
}

/// Score a batch of forecast windows.
///
/// Squared, absolute, and percentage errors are averaged over all elements of
/// all windows; the scaled error is averaged per window (its denominator is
/// window-specific). When `reference` forecasts are supplied (one per case,
/// same lengths), `owa` relates the batch to that reference; it is `None` if
/// the reference scores zero — a ratio against a perfect reference is
/// undefined. Windows whose scaled-error denominator is zero propagate an
/// error, as does an empty batch.
pub fn report(
    cases: &[ForecastCase<'_>],
    m: usize,
    scope: MaseScope,
    reference: Option<&[Vec<f64>]>,
) -> Result<MetricReport> {
    if cases.is_empty() {
        return Err(Error::InvalidConfig("no forecast windows to score".into()));
    }
    let mut se = Vec::new();
    let mut ae = Vec::new();
    let mut sm = Vec::new();
    let mut mp = Vec::new();
    let mut mase_terms = Vec::with_capacity(cases.len());
    for case in cases {
        for (y, yhat) in paired(case.target, case.forecast) {
            se.push((y - yhat) * (y - yhat));
            ae.push((y - yhat).abs());
            sm.push(smape_term(y, yhat));
            mp.push(if y == 0.0 { 0.0 } else { (y - yhat).abs() / y.abs() });
        }
        mase_terms.push(mase(case.target, case.forecast, case.insample, m, scope)?);
    }
    let smape_all = 200.0 * mean(&sm);
    let mase_all = mean(&mase_terms);
    let owa_all = match reference {
        None => None,
        Some(refs) => {
            assert_eq!(refs.len(), cases.len(), "one reference forecast per case");
            let mut ref_sm = Vec::new();
            let mut ref_mase = Vec::with_capacity(cases.len());
            for (case, rf) in cases.iter().zip(refs) {
                for (y, yhat) in paired(case.target, rf) {
                    ref_sm.push(smape_term(y, yhat));
                }
                ref_mase.push(mase(case.target, rf, case.insample, m, scope)?);
            }
            let smape_ref = 200.0 * mean(&ref_sm);
            let mase_ref = mean(&ref_mase);
            if smape_ref > 0.0 && mase_ref > 0.0 {
                Some(0.5 * (smape_all / smape_ref + mase_all / mase_ref))
            } else {
                None
            }
        }
    };
    Ok(MetricReport {
        mse: mean(&se),
        mae: mean(&ae),
        smape: smape_all,
        mape: mean(&mp) * 100.0,
        mase: mase_all,
        owa: owa_all,
        n_windows: cases.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn squared_and_absolute_errors_match_hand_values() {
        let y = [0.0, 3.0];
        let yhat = [1.0, 1.0];
        assert_eq!(mse(&y, &yhat), 2.5);
        assert_eq!(mae(&y, &yhat), 1.5);
        assert_eq!(mse(&y, &y), 0.0);
        assert_eq!(mae(&y, &y), 0.0);
        // errors all of magnitude one
        assert_eq!(mse(&[1.0, 1.0], &[0.0, 2.0]), 1.0);
        assert_eq!(mae(&[1.0, 1.0], &[0.0, 2.0]), 1.0);
    }

    #[test]
    fn smape_hand_values_and_conventions() {
        assert_eq!(smape(&[1.0], &[3.0]), 100.0);
        assert_eq!(smape(&[5.0], &[5.0]), 0.0);
        assert_eq!(smape(&[0.0], &[0.0]), 0.0);
        // symmetric in its arguments
        assert_eq!(smape(&[2.0, -1.0], &[0.5, 4.0]), smape(&[0.5, 4.0], &[2.0, -1.0]));
    }

    #[test]
    fn mape_skips_zero_targets() {
        assert_eq!(mape(&[1.0, 2.0], &[2.0, 4.0]), 100.0);
        assert_eq!(mape(&[0.0, 1.0], &[5.0, 2.0]), 50.0);
    }

    #[test]
    fn scaled_error_hand_value_on_periodic_series_with_trend() {
        // Period 4 with +1 per cycle; every 4-step difference is exactly 1.
        let insample = [1.0, 2.0, 3.0, 4.0, 2.0, 3.0, 4.0, 5.0];
        let y = [3.0, 4.0, 5.0, 6.0];
        let yhat = [2.0, 3.0, 4.0, 5.0]; // seasonal-naive: repeat last cycle
        let got = mase(&y, &yhat, &insample, 4, MaseScope::InsampleAndTarget).unwrap();
        assert!((got - 1.0).abs() < 1e-12, "expected 1.0, got {got}");
        assert_eq!(mase(&y, &y, &insample, 4, MaseScope::InsampleAndTarget).unwrap(), 0.0);
    }

    #[test]
    fn scaled_error_is_scale_invariant() {
        let insample = [1.0, 3.0, 2.0, 5.0, 4.0];
        let y = [4.5, 2.0];
        let yhat = [3.0, 3.0];
        let base = mase(&y, &yhat, &insample, 1, MaseScope::InsampleAndTarget).unwrap();
        let double: Vec<f64> = insample.iter().map(|v| v * 2.0).collect();
        let y2: Vec<f64> = y.iter().map(|v| v * 2.0).collect();
        let yhat2: Vec<f64> = yhat.iter().map(|v| v * 2.0).collect();
        let scaled = mase(&y2, &yhat2, &double, 1, MaseScope::InsampleAndTarget).unwrap();
        assert!((base - scaled).abs() < 1e-12);
    }

    #[test]
    fn scaled_error_rejects_constant_series_and_short_insample() {
        let err = mase(&[5.0], &[5.0], &[5.0, 5.0, 5.0], 1, MaseScope::InsampleAndTarget);
        assert!(err.is_err());
        let err = mase(&[1.0], &[2.0], &[1.0], 1, MaseScope::InsampleAndTarget);
        assert!(matches!(err, Err(crate::Error::SeriesTooShort { .. })));
    }

    #[test]
    fn insample_only_scope_ignores_the_target() {
        let insample = [0.0, 1.0, 0.0, 1.0];
        let y = [100.0];
        let yhat = [99.0];
        let within = mase(&y, &yhat, &insample, 1, MaseScope::InsampleOnly).unwrap();
        assert!((within - 1.0).abs() < 1e-12); // denominator 1 from insample alone
        let literal = mase(&y, &yhat, &insample, 1, MaseScope::InsampleAndTarget).unwrap();
        assert!(literal < within); // the 1 -> 100 jump inflates the denominator
    }

    #[test]
    fn overall_weighted_average_hand_values() {
        assert_eq!(owa(10.0, 2.0, 10.0, 2.0).unwrap(), 1.0);
        assert_eq!(owa(5.0, 1.0, 10.0, 2.0).unwrap(), 0.5);
        assert_eq!(owa(5.0, 3.0, 10.0, 2.0).unwrap(), 1.0); // ratios 0.5 and 1.5
        assert!(owa(1.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn naive_repeats_the_last_value() {
        assert_eq!(naive_forecast(&[1.0, 2.0, 7.0], 3).unwrap(), vec![7.0, 7.0, 7.0]);
        assert_eq!(naive_forecast(&[4.0], 0).unwrap(), Vec::<f64>::new());
        assert!(naive_forecast(&[], 2).is_err());
        let multi = naive_multivariate(&[vec![1.0, 2.0], vec![5.0, -3.0]], 2).unwrap();
        assert_eq!(multi, vec![vec![2.0, 2.0], vec![-3.0, -3.0]]);
    }

    #[test]
    fn seasonal_naive_reduces_to_naive_at_period_one() {
        let x = [3.0, 1.0, 4.0, 1.0, 5.0];
        assert_eq!(naive2_forecast(&x, 4, 1).unwrap(), naive_forecast(&x, 4).unwrap());
    }

    #[test]
    fn seasonal_naive_continues_an_exactly_periodic_series() {
        let x: Vec<f64> = [2.0, 6.0].iter().cycle().take(12).copied().collect();
        let got = naive2_forecast(&x, 4, 2).unwrap();
        let want = [2.0, 6.0, 2.0, 6.0];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-9, "got {got:?}");
        }
    }

    #[test]
    fn seasonal_naive_handles_degenerate_inputs() {
        let constant = [5.0; 10];
        assert_eq!(naive2_forecast(&constant, 3, 2).unwrap(), vec![5.0; 3]);
        // Non-positive data: multiplicative adjustment undefined, fall back.
        let mixed = [-1.0, 2.0, -1.0, 2.0, -1.0, 2.0];
        assert_eq!(naive2_forecast(&mixed, 2, 2).unwrap(), vec![2.0, 2.0]);
        assert!(naive2_forecast(&[1.0], 2, 4).is_err());
    }

    #[test]
    fn report_aggregates_and_scores_against_a_reference() {
        let insample = [1.0, 2.0, 1.0, 2.0];
        let case = ForecastCase { target: &[1.0, 2.0], forecast: &[2.0, 2.0], insample: &insample };
        let rep = report(&[case], 1, MaseScope::InsampleAndTarget, None).unwrap();
        assert_eq!(rep.mse, 0.5);
        assert_eq!(rep.mae, 0.5);
        assert_eq!(rep.n_windows, 1);
        assert!(rep.owa.is_none());

        // Duplicating a window changes nothing: all metrics are means.
        let rep2 = report(&[case, case], 1, MaseScope::InsampleAndTarget, None).unwrap();
        assert_eq!((rep.mse, rep.mae, rep.smape, rep.mape, rep.mase), (rep2.mse, rep2.mae, rep2.smape, rep2.mape, rep2.mase));

        // Scoring a forecast against itself as reference gives parity.
        let refs = vec![vec![2.0, 2.0]];
        let rep3 = report(&[case], 1, MaseScope::InsampleAndTarget, Some(&refs)).unwrap();
        assert_eq!(rep3.owa, Some(1.0));

        // A perfect reference makes the ratio undefined.
        let perfect = vec![vec![1.0, 2.0]];
        let rep4 = report(&[case], 1, MaseScope::InsampleAndTarget, Some(&perfect)).unwrap();
        assert!(rep4.owa.is_none());
    }

    proptest! {
        /// Mean squared error dominates squared mean absolute error
        /// (Cauchy–Schwarz for means).
        #[test]
        fn mean_square_dominates_squared_mean(
            y in proptest::collection::vec(-100.0f64..100.0, 1..40),
            shift in proptest::collection::vec(-10.0f64..10.0, 1..40),
        ) {
            let yhat: Vec<f64> = y.iter().zip(shift.iter().cycle()).map(|(a, s)| a + s).collect();
            prop_assert!(mse(&y, &yhat) + 1e-12 >= mae(&y, &yhat).powi(2));
        }

        /// The symmetric percentage error is bounded by 200 and nonnegative.
        #[test]
        fn smape_stays_in_range(
            y in proptest::collection::vec(-1e6f64..1e6, 1..40),
            yhat in proptest::collection::vec(-1e6f64..1e6, 1..40),
        ) {
            let n = y.len().min(yhat.len());
            let s = smape(&y[..n], &yhat[..n]);
            prop_assert!((0.0..=200.0).contains(&s));
        }
    }
}
