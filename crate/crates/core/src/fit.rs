//! Robust estimation of a camera's clock model from decoded samples.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Sample, TimeModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("no samples to fit")]
    Empty,
    #[error("no two samples agree on a clock model (largest consensus {consensus})")]
    IrreconcilableSamples { consensus: usize },
    #[error("fitted drift {0} is outside the plausible range")]
    ImplausibleDrift(f64),
    #[error("non-finite sample")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    /// Absolute residual (ms) below which a sample supports a model.
    pub threshold_ms: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { iterations: 1000, threshold_ms: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: TimeModel,
    pub inliers: Vec<bool>,
    /// RMS residual over the inliers (ms).
    pub rmse_residual_ms: f64,
}

impl FitResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// Closed-form least-squares line through the samples, computed on
/// centred sums. `None` when all local timestamps coincide.
pub fn least_squares(samples: &[Sample]) -> Option<TimeModel> {
    if samples.is_empty() {
        return None;
    }
    let n = samples.len() as f64;
    let ml = samples.iter().map(|s| s.local_ts).sum::<f64>() / n;
    let mg = samples.iter().map(|s| s.global_start).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for s in samples {
        let dl = s.local_ts - ml;
        sxx += dl * dl;
        sxy += dl * (s.global_start - mg);
    }
    if sxx <= 0.0 {
        return None;
    }
    let alpha = sxy / sxx;
    Some(TimeModel { alpha, beta: mg - alpha * ml })
}

fn residual(m: &TimeModel, s: &Sample) -> f64 {
    s.global_start - m.local_to_global(s.local_ts)
}

pub fn fit_time_model(samples: &[Sample], seed: u64) -> Result<FitResult, FitError> {
    fit_time_model_with(samples, seed, &RansacParams::default())
}

/// Fits `global = alpha * local + beta`.
///
/// A single sample fixes `alpha = 1`. Otherwise RANSAC draws pairs of
/// samples with distinct local timestamps, keeps the model with the largest
/// support (ties broken by the smaller summed inlier residual) and refits
/// it by least squares on its inliers.
pub fn fit_time_model_with(samples: &[Sample], seed: u64, params: &RansacParams) -> Result<FitResult, FitError> {
    if samples.is_empty() {
        return Err(FitError::Empty);
    }
    if samples.iter().any(|s| !s.local_ts.is_finite() || !s.global_start.is_finite()) {
        return Err(FitError::NonFinite);
    }
    if samples.len() == 1 {
        let s = samples[0];
        let model = TimeModel { alpha: 1.0, beta: s.global_start - s.local_ts };
        return Ok(FitResult { model, inliers: vec![true], rmse_residual_ms: 0.0 });
    }
    let n = samples.len();
    let support = |m: &TimeModel| -> (usize, f64, Vec<bool>) {
        let mut count = 0;
        let mut sum = 0.0;
        let mask = samples
            .iter()
            .map(|s| {
                let r = residual(m, s).abs();
                let inlier = r <= params.threshold_ms;
                if inlier {
                    count += 1;
                    sum += r;
                }
                inlier
            })
            .collect();
        (count, sum, mask)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, f64, Vec<bool>)> = None;
    for _ in 0..params.iterations {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n - 1);
        let j = if j >= i { j + 1 } else { j };
        let (a, b) = (samples[i], samples[j]);
        if a.local_ts == b.local_ts {
            continue;
        }
        let alpha = (b.global_start - a.global_start) / (b.local_ts - a.local_ts);
        let m = TimeModel { alpha, beta: a.global_start - alpha * a.local_ts };
        let cand = support(&m);
        let better = match &best {
            None => true,
            Some((c, s, _)) => cand.0 > *c || (cand.0 == *c && cand.1 < *s),
        };
        if better {
            best = Some(cand);
        }
    }
    let Some((count, _, mut mask)) = best else {
        return Err(FitError::IrreconcilableSamples { consensus: 1 });
    };
    if count < 2 {
        return Err(FitError::IrreconcilableSamples { consensus: count });
    }
    let mut model = TimeModel::IDENTITY;
    for _ in 0..5 {
        let chosen: Vec<Sample> = samples.iter().zip(&mask).filter(|(_, &m)| m).map(|(s, _)| *s).collect();
        model = least_squares(&chosen).ok_or(FitError::IrreconcilableSamples { consensus: chosen.len() })?;
        let (c, _, next) = support(&model);
        if next == mask || c < 2 {
            break;
        }
        mask = next;
    }
    if !model.is_plausible() {
        return Err(FitError::ImplausibleDrift(model.alpha));
    }
    let inl: Vec<f64> = samples.iter().zip(&mask).filter(|(_, &m)| m).map(|(s, _)| residual(&model, s)).collect();
    let rmse = (inl.iter().map(|r| r * r).sum::<f64>() / inl.len() as f64).sqrt();
    Ok(FitResult { model, inliers: mask, rmse_residual_ms: rmse })
}

/// Applies the model to every local timestamp.
pub fn retime(model: &TimeModel, local_ts: &[f64]) -> Vec<f64> {
    local_ts.iter().map(|&t| model.local_to_global(t)).collect()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RmseError {
    #[error("pairing is empty")]
    EmptyPairing,
    #[error("pair {pair} refers to frame {frame} outside a stream")]
    OutOfRange { pair: usize, frame: usize },
}

/// Root-mean-square difference of paired global timestamps (ms).
pub fn pairwise_rmse(a: &[f64], b: &[f64], pairing: &[(usize, usize)]) -> Result<f64, RmseError> {
    if pairing.is_empty() {
        return Err(RmseError::EmptyPairing);
    }
    let mut sum = 0.0;
    for (k, &(i, j)) in pairing.iter().enumerate() {
        let ta = *a.get(i).ok_or(RmseError::OutOfRange { pair: k, frame: i })?;
        let tb = *b.get(j).ok_or(RmseError::OutOfRange { pair: k, frame: j })?;
        sum += (ta - tb) * (ta - tb);
    }
    Ok((sum / pairing.len() as f64).sqrt())
}

/// Per-stream input of the fitting stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamManifest {
    pub stream_id: String,
    pub fps_nominal: f64,
    pub n_frames: usize,
    /// `[local_ts, global_start]` pairs.
    pub samples: Vec<[f64; 2]>,
}

impl StreamManifest {
    pub fn samples(&self) -> Vec<Sample> {
        self.samples.iter().map(|s| Sample::new(s[0], s[1])).collect()
    }

    /// Nominal local timestamps `i * 1000 / fps` of every frame.
    pub fn local_timestamps(&self) -> Vec<f64> {
        (0..self.n_frames).map(|i| i as f64 * 1000.0 / self.fps_nominal).collect()
    }
}

/// Fitted clock model of one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FittedModel {
    pub stream_id: String,
    pub alpha: f64,
    pub beta: f64,
    pub inliers: Vec<bool>,
    pub rmse_residual_ms: f64,
}

impl FittedModel {
    pub fn new(stream_id: impl Into<String>, fit: &FitResult) -> Self {
        Self {
            stream_id: stream_id.into(),
            alpha: fit.model.alpha,
            beta: fit.model.beta,
            inliers: fit.inliers.clone(),
            rmse_residual_ms: fit.rmse_residual_ms,
        }
    }

    pub fn model(&self) -> TimeModel {
        TimeModel { alpha: self.alpha, beta: self.beta }
    }
}

/// A stream's timestamps and samples together with its fit.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamRecord {
    pub stream_id: String,
    pub fps_nominal: f64,
    pub local_ts: Vec<f64>,
    pub samples: Vec<Sample>,
    pub fitted: Option<FitResult>,
}

impl StreamRecord {
    pub fn from_manifest(m: &StreamManifest) -> Self {
        Self { stream_id: m.stream_id.clone(), fps_nominal: m.fps_nominal, local_ts: m.local_timestamps(), samples: m.samples(), fitted: None }
    }

    pub fn fit(&mut self, seed: u64) -> Result<&FitResult, FitError> {
        self.fitted = Some(fit_time_model(&self.samples, seed)?);
        Ok(self.fitted.as_ref().expect("just set"))
    }

    /// Global timestamps of every frame, if fitted.
    pub fn retimed(&self) -> Option<Vec<f64>> {
        self.fitted.as_ref().map(|f| retime(&f.model, &self.local_ts))
    }
}

#[cfg(test)]
mod tests {
    use super::{fit_time_model, least_squares, pairwise_rmse, retime, FitError, RmseError, StreamManifest, StreamRecord};
    use crate::clock::{Sample, TimeModel};
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Uniform};

    #[test]
    fn two_sample_closed_form() {
        let s = [Sample::new(0.0, 5000.0), Sample::new(600_000.0, 605_060.0)];
        let f = fit_time_model(&s, 1).unwrap();
        assert!((f.model.alpha - 1.0001).abs() < 1e-12);
        assert!((f.model.beta - 5000.0).abs() < 1e-6);
        let g = retime(&f.model, &[300_000.0]);
        assert!((g[0] - 305_030.0).abs() < 1e-6);
    }

    #[test]
    fn single_sample_sets_unit_drift() {
        let f = fit_time_model(&[Sample::new(100.0, 1100.0)], 1).unwrap();
        assert_eq!(f.model, TimeModel { alpha: 1.0, beta: 1000.0 });
    }

    #[test]
    fn errors() {
        assert_eq!(fit_time_model(&[], 0), Err(FitError::Empty));
        let same = [Sample::new(5.0, 1.0), Sample::new(5.0, 9.0)];
        assert!(matches!(fit_time_model(&same, 0), Err(FitError::IrreconcilableSamples { .. })));
        let far = [Sample::new(0.0, 0.0), Sample::new(1000.0, 0.0), Sample::new(2000.0, 5000.0)];
        assert!(matches!(fit_time_model(&far, 0), Err(FitError::IrreconcilableSamples { .. }) | Err(FitError::ImplausibleDrift(_))));
        let steep = [Sample::new(0.0, 0.0), Sample::new(1000.0, 2000.0)];
        assert!(matches!(fit_time_model(&steep, 0), Err(FitError::ImplausibleDrift(_))));
    }

    #[test]
    fn identity_retime_echoes_input() {
        let t = [0.0, 33.3, 66.7];
        assert_eq!(retime(&TimeModel::IDENTITY, &t), t.to_vec());
    }

    #[test]
    fn rmse_examples() {
        let a = [0.0, 10.0, 20.0];
        assert_eq!(pairwise_rmse(&a, &a, &[(0, 0), (1, 1), (2, 2)]).unwrap(), 0.0);
        let b = [1.0, 11.0, 21.0];
        assert!((pairwise_rmse(&a, &b, &[(0, 0), (1, 1), (2, 2)]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(pairwise_rmse(&a, &b, &[]), Err(RmseError::EmptyPairing));
        assert!(pairwise_rmse(&a, &b, &[(5, 0)]).is_err());
    }

    #[test]
    fn manifest_json_shape() {
        let m: StreamManifest = serde_json::from_str(r#"{"stream_id":"a","fps_nominal":30,"n_frames":3,"samples":[[0,5000],[600000,605060]]}"#).unwrap();
        assert_eq!(m.local_timestamps(), vec![0.0, 1000.0 / 30.0, 2000.0 / 30.0]);
        let mut rec = StreamRecord::from_manifest(&m);
        rec.fit(0).unwrap();
        assert_eq!(rec.retimed().unwrap().len(), 3);
    }

    /// Inliers on a line with bounded jitter plus gross outliers.
    fn contaminated(seed: u64, n_in: usize, n_out: usize, alpha: f64, beta: f64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = Uniform::new(-0.5, 0.5).unwrap();
        let mut s: Vec<Sample> = (0..n_in)
            .map(|i| {
                let l = i as f64 * 20_000.0 + rng.random_range(0.0..1000.0);
                Sample::new(l, alpha * l + beta + jitter.sample(&mut rng))
            })
            .collect();
        for k in 0..n_out {
            let l = rng.random_range(0.0..(n_in as f64 * 20_000.0));
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            s.push(Sample::new(l, alpha * l + beta + sign * rng.random_range(25.0..600.0)));
        }
        s
    }

    proptest! {
        #[test]
        fn noise_free_fit_is_exact(alpha in 0.95f64..1.05, beta in -1e6f64..1e6, n in 2usize..30, seed in any::<u64>()) {
            let s: Vec<Sample> = (0..n).map(|i| { let l = i as f64 * 1234.5; Sample::new(l, alpha * l + beta) }).collect();
            let f = fit_time_model(&s, seed).unwrap();
            for x in &s {
                prop_assert!((f.model.local_to_global(x.local_ts) - x.global_start).abs() < 1e-6);
            }
        }

        #[test]
        fn shifting_local_time_moves_beta(alpha in 0.95f64..1.05, beta in -1e5f64..1e5, c in -1e5f64..1e5) {
            let s: Vec<Sample> = (0..6).map(|i| { let l = i as f64 * 5000.0; Sample::new(l, alpha * l + beta) }).collect();
            let shifted: Vec<Sample> = s.iter().map(|x| Sample::new(x.local_ts + c, x.global_start)).collect();
            let a = least_squares(&s).unwrap();
            let b = least_squares(&shifted).unwrap();
            prop_assert!((a.alpha - b.alpha).abs() < 1e-9);
            prop_assert!((b.beta - (a.beta - a.alpha * c)).abs() < 1e-5);
        }

        #[test]
        fn ransac_survives_forty_percent_outliers(seed in any::<u64>(), n_in in 10usize..25) {
            let n_out = (n_in as f64 * 0.4 / 0.6).floor() as usize;
            let s = contaminated(seed, n_in, n_out, 1.00003, 1234.0);
            let f = fit_time_model(&s, seed ^ 0xabc).unwrap();
            prop_assert!((f.model.alpha - 1.00003).abs() < 1e-5);
            prop_assert!(f.inliers[..n_in].iter().filter(|&&b| b).count() >= n_in - 1);
            prop_assert!(f.inliers[n_in..].iter().all(|&b| !b));
        }
    }
}
