//! Diagnostic instruments for a frozen bundle: the spoofing sweep (override
//! the conditioning scale, watch accuracy), per-rank ridge probes of the
//! bottleneck latent against the generator's block energies, and gate-curve
//! export.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{GatedLoraAdapter, TierLayout};
use crate::data::{block_energies, GenConfig, Sample};
use crate::error::TrainError;
use crate::model::{eval_correctness, AdapterStack, ModelBundle};
use crate::resolver::effective_scale_eval;
use crate::tensor::matmul;
use crate::Tensor;

// ---- spoofing sweep ---------------------------------------------------------

/// Log-spaced grid of spoofed GSD values, meters/pixel.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpoofGrid {
    pub min_g: f64,
    pub max_g: f64,
    pub points: usize,
}

impl Default for SpoofGrid {
    fn default() -> Self {
        SpoofGrid {
            min_g: 0.01,
            max_g: 30.0,
            points: 13,
        }
    }
}

impl SpoofGrid {
    pub fn values(&self) -> Vec<f64> {
        let n = self.points.max(2);
        let lo = self.min_g.log10();
        let hi = self.max_g.log10();
        (0..n)
            .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (n - 1) as f64))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpoofPoint {
    pub g: f64,
    pub accuracy: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl SpoofPoint {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_hi - self.ci_lo)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpoofReport {
    pub variant: String,
    pub true_g: f64,
    pub points: Vec<SpoofPoint>,
}

impl SpoofReport {
    pub fn peak_index(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.points.iter().enumerate() {
            if p.accuracy > self.points[best].accuracy {
                best = i;
            }
        }
        best
    }

    pub fn max_minus_min(&self) -> f64 {
        let accs: Vec<f64> = self.points.iter().map(|p| p.accuracy).collect();
        let max = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = accs.iter().cloned().fold(f64::INFINITY, f64::min);
        max - min
    }
}

/// Percentile bootstrap interval for a mean of correctness bits.
pub fn bootstrap_ci(hits: &[bool], resamples: usize, seed: u64) -> (f64, f64) {
    let n = hits.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut acc = 0usize;
        for _ in 0..n {
            if hits[rng.gen_range(0..n)] {
                acc += 1;
            }
        }
        means.push(acc as f64 / n as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let at = |q: f64| means[(q * (resamples - 1) as f64).round() as usize];
    (at(0.025), at(0.975))
}

/// Evaluate the frozen bundle with the conditioning scale forced to each
/// grid value while samples and labels stay fixed.
pub fn spoof_sweep(
    bundle: &ModelBundle,
    test: &[Sample],
    true_g: f64,
    grid: &SpoofGrid,
    resamples: usize,
    seed: u64,
) -> Result<SpoofReport, TrainError> {
    if test.is_empty() {
        return Err(TrainError::Contract("spoof sweep needs a non-empty test set".into()));
    }
    let mut points = Vec::with_capacity(grid.points);
    for (i, g) in grid.values().into_iter().enumerate() {
        let hits = eval_correctness(bundle, test, Some(g.log10()))?;
        let accuracy = hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64;
        let (ci_lo, ci_hi) = bootstrap_ci(&hits, resamples, seed.wrapping_add(i as u64));
        points.push(SpoofPoint {
            g,
            accuracy,
            ci_lo,
            ci_hi,
        });
    }
    Ok(SpoofReport {
        variant: bundle.variant.name().to_string(),
        true_g,
        points,
    })
}

pub fn spoof_csv(reports: &[SpoofReport]) -> String {
    let mut out = String::from("g,acc,ci_lo,ci_hi,variant\n");
    for r in reports {
        for p in &r.points {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.g, p.accuracy, p.ci_lo, p.ci_hi, r.variant
            ));
        }
    }
    out
}

// ---- per-rank ridge probe -----------------------------------------------------

pub const PROBE_RIDGE: f64 = 1e-3;
pub const PROBE_FOLDS: usize = 5;
pub const FACTOR_NAMES: [&str; 3] = ["texture", "geometry", "semantic"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Held-out R^2 per rank dimension and factor, floored at zero.
    pub r2: Vec<[f64; 3]>,
    pub tier_layout: TierLayout,
    /// Mean R^2 over the ranks of each tier, per factor.
    pub per_tier_factor_means: [[f64; 3]; 3],
    /// Trained per-rank thresholds; thresholds are unconstrained during
    /// training, so their drift from the tier initialization is reported
    /// here rather than clamped away.
    pub tau: Vec<f64>,
}

impl ProbeReport {
    /// Mean absolute threshold drift from the tier initialization, per tier.
    pub fn tau_drift(&self) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (t, range) in self.tier_layout.tier_ranges().into_iter().enumerate() {
            let init = crate::adapter::TAU_INIT[t];
            let len = range.len() as f64;
            out[t] = range.clone().map(|k| (self.tau[k] - init).abs()).sum::<f64>() / len;
        }
        out
    }

    /// Mean matched-factor R^2 (object-texture, structure-geometry,
    /// semantic-semantic).
    pub fn matched_mean(&self) -> f64 {
        (0..3).map(|t| self.per_tier_factor_means[t][t]).sum::<f64>() / 3.0
    }

    /// Mean over the six mismatched tier/factor pairs.
    pub fn mismatched_mean(&self) -> f64 {
        let mut acc = 0.0;
        for t in 0..3 {
            for f in 0..3 {
                if t != f {
                    acc += self.per_tier_factor_means[t][f];
                }
            }
        }
        acc / 6.0
    }
}

/// Scalar ridge regression with per-fold standardization; pooled held-out
/// R^2 over `folds` contiguous splits, floored at zero. Constant latents or
/// targets report zero.
pub fn ridge_r2_cv(x: &[f64], y: &[f64], ridge: f64, folds: usize) -> f64 {
    let n = x.len();
    assert_eq!(n, y.len());
    if n < folds || folds < 2 {
        return 0.0;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gy = mean(y);
    let ss_tot: f64 = y.iter().map(|v| (v - gy) * (v - gy)).sum();
    if ss_tot <= 0.0 {
        return 0.0; // constant target
    }
    let mut ss_res = 0.0;
    for fold in 0..folds {
        let lo = fold * n / folds;
        let hi = (fold + 1) * n / folds;
        let train: Vec<usize> = (0..n).filter(|i| *i < lo || *i >= hi).collect();
        let mx = train.iter().map(|&i| x[i]).sum::<f64>() / train.len() as f64;
        let my = train.iter().map(|&i| y[i]).sum::<f64>() / train.len() as f64;
        let var_x =
            train.iter().map(|&i| (x[i] - mx) * (x[i] - mx)).sum::<f64>() / train.len() as f64;
        let sx = var_x.sqrt();
        if sx < 1e-12 {
            // constant latent on this fold: predict the train mean
            ss_res += y[lo..hi].iter().map(|v| (v - my) * (v - my)).sum::<f64>();
            continue;
        }
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for &i in &train {
            let xs = (x[i] - mx) / sx;
            sxy += xs * (y[i] - my);
            sxx += xs * xs;
        }
        let slope = sxy / (sxx + ridge);
        for i in lo..hi {
            let pred = my + slope * (x[i] - mx) / sx;
            ss_res += (y[i] - pred) * (y[i] - pred);
        }
    }
    (1.0 - ss_res / ss_tot).max(0.0)
}

/// Magnitude of the bottleneck latent `h(s) ⊙ (A x)` of the first adapted
/// layer for one sample under the evaluation-time scale rule. The probe
/// regresses magnitudes because the latent's sign tracks class identity,
/// not content strength.
fn bottleneck_latent(
    bundle: &ModelBundle,
    adapter: &GatedLoraAdapter,
    sample: &Sample,
) -> Result<Vec<f64>, TrainError> {
    let eff = effective_scale_eval(&sample.gsd, 0.0);
    let s = if eff.through_estimate {
        bundle.estimate_scale(&sample.features)?.mu
    } else {
        eff.value
    };
    let gate = adapter
        .gate(s)
        .map_err(|e| TrainError::Contract(e.to_string()))?;
    let task_features =
        crate::model::mask_scale_channels(&sample.features, bundle.dims.scale_channels);
    let x = Tensor::vector(task_features);
    let ax = matmul(&adapter.a, &x)?;
    Ok(ax
        .data()
        .iter()
        .zip(&gate.h)
        .map(|(&v, &h)| (v * h).abs())
        .collect())
}

/// Fit three independent ridge probes per rank dimension against the block
/// energies of the probe set.
pub fn tau_probe(
    bundle: &ModelBundle,
    probe_set: &[Sample],
    gen_config: &GenConfig,
) -> Result<ProbeReport, TrainError> {
    if probe_set.len() < 100 {
        return Err(TrainError::Contract(format!(
            "probe needs at least 100 samples, got {}",
            probe_set.len()
        )));
    }
    let adapter = match &bundle.adapters {
        AdapterStack::Gated(ads) => &ads[0],
        _ => {
            return Err(TrainError::Contract(format!(
                "probe requires the gated variant, bundle is {}",
                bundle.variant.name()
            )))
        }
    };
    let n = probe_set.len();
    let r = adapter.rank;
    let mut latents = vec![vec![0.0; n]; r];
    let mut factors = vec![vec![0.0; n]; 3];
    for (i, sample) in probe_set.iter().enumerate() {
        let lat = bottleneck_latent(bundle, adapter, sample)?;
        for k in 0..r {
            latents[k][i] = lat[k];
        }
        let e = block_energies(&sample.features, gen_config);
        for f in 0..3 {
            factors[f][i] = e[f];
        }
    }
    let mut r2 = vec![[0.0; 3]; r];
    for k in 0..r {
        for f in 0..3 {
            r2[k][f] = ridge_r2_cv(&latents[k], &factors[f], PROBE_RIDGE, PROBE_FOLDS);
        }
    }
    let layout = adapter.tier_layout;
    let mut per_tier = [[0.0; 3]; 3];
    for (t, range) in layout.tier_ranges().into_iter().enumerate() {
        let count = range.len() as f64;
        for f in 0..3 {
            per_tier[t][f] = range.clone().map(|k| r2[k][f]).sum::<f64>() / count;
        }
    }
    Ok(ProbeReport {
        r2,
        tier_layout: layout,
        per_tier_factor_means: per_tier,
        tau: adapter.tau.data().to_vec(),
    })
}

pub fn probe_csv(report: &ProbeReport) -> String {
    let mut out = String::from("rank,tier,factor,r2\n");
    for (k, row) in report.r2.iter().enumerate() {
        let tier = ["object", "structure", "semantic"][report.tier_layout.tier_of_rank(k)];
        for (f, val) in row.iter().enumerate() {
            out.push_str(&format!("{},{},{},{}\n", k, tier, FACTOR_NAMES[f], val));
        }
    }
    out
}

// ---- gate curves ---------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateCurve {
    pub s: Vec<f64>,
    pub object: Vec<f64>,
    pub structure: Vec<f64>,
    pub semantic: Vec<f64>,
}

/// Mean gate value per tier over an s-grid (default [-2, 2], 200 points).
pub fn export_gate_curves(
    adapter: &GatedLoraAdapter,
    s_min: f64,
    s_max: f64,
    points: usize,
) -> Result<GateCurve, TrainError> {
    let n = points.max(2);
    let mut curve = GateCurve {
        s: Vec::with_capacity(n),
        object: Vec::with_capacity(n),
        structure: Vec::with_capacity(n),
        semantic: Vec::with_capacity(n),
    };
    let layout = adapter.tier_layout;
    for i in 0..n {
        let s = s_min + (s_max - s_min) * i as f64 / (n - 1) as f64;
        let gate = adapter
            .gate(s)
            .map_err(|e| TrainError::Contract(e.to_string()))?;
        let mean_over = |range: std::ops::Range<usize>| {
            let len = range.len() as f64;
            range.map(|k| gate.h[k]).sum::<f64>() / len
        };
        curve.s.push(s);
        curve.object.push(mean_over(layout.object()));
        curve.structure.push(mean_over(layout.structure()));
        curve.semantic.push(mean_over(layout.semantic()));
    }
    Ok(curve)
}

pub fn gates_csv(curve: &GateCurve) -> String {
    let mut out = String::from("s,h_object,h_structure,h_semantic\n");
    for i in 0..curve.s.len() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            curve.s[i], curve.object[i], curve.structure[i], curve.semantic[i]
        ));
    }
    out
}
