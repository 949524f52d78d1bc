//! Heteroscedastic scale estimation: a layer-normed trunk with two linear
//! heads predicting the mean and log-variance of a Gaussian over log10-GSD,
//! trained with the Gaussian negative log-likelihood.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DiffError, TrainError};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Log-variance clamp bounds; sigma stays within [exp(-5), exp(2)].
pub const LOG_VAR_LO: f64 = -10.0;
pub const LOG_VAR_HI: f64 = 4.0;

/// Point estimate of log10-GSD with its clamped uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleEstimate {
    pub mu: f64,
    pub log_var: f64,
    pub sigma: f64,
}

impl ScaleEstimate {
    pub fn new(mu: f64, raw_log_var: f64) -> Self {
        let log_var = raw_log_var.clamp(LOG_VAR_LO, LOG_VAR_HI);
        ScaleEstimate {
            mu,
            log_var,
            sigma: (0.5 * log_var).exp(),
        }
    }
}

/// Layer-norm + trunk + two linear heads over a pooled feature vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SseuHead {
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
    pub trunk: Tensor,
    pub mean_head: Tensor,
    pub var_head: Tensor,
}

/// Tape handles for the head's trainable tensors.
#[derive(Debug, Clone, Copy)]
pub struct SseuNodes {
    pub ln_gain: NodeId,
    pub ln_bias: NodeId,
    pub trunk: NodeId,
    pub mean_head: NodeId,
    pub var_head: NodeId,
}

/// Mean and clamped log-variance as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct EstimateNodes {
    pub mu: NodeId,
    pub log_var: NodeId,
}

impl SseuHead {
    /// Trunk weights small random, heads zero so the initial estimate is
    /// mu=0, log-var=0 (one meter, unit sigma).
    pub fn init(feature_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (feature_dim as f64).sqrt();
        let trunk: Vec<f64> = (0..hidden * feature_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        SseuHead {
            ln_gain: Tensor::vector(vec![1.0; feature_dim]),
            ln_bias: Tensor::zeros(vec![feature_dim]),
            trunk: Tensor::new(vec![hidden, feature_dim], trunk).expect("trunk shape"),
            mean_head: Tensor::zeros(vec![1, hidden]),
            var_head: Tensor::zeros(vec![1, hidden]),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.trunk.shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.trunk.shape()[0]
    }

    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> SseuNodes {
        let mut ins = |t: &Tensor| {
            if trainable {
                graph.param(t.clone())
            } else {
                graph.leaf(t.clone())
            }
        };
        SseuNodes {
            ln_gain: ins(&self.ln_gain),
            ln_bias: ins(&self.ln_bias),
            trunk: ins(&self.trunk),
            mean_head: ins(&self.mean_head),
            var_head: ins(&self.var_head),
        }
    }

    /// `z = GELU(W LN(f))`, `mu = W_mu z`, `log_var = clamp(W_sigma z)`.
    pub fn predict_nodes(
        &self,
        graph: &mut Graph,
        nodes: SseuNodes,
        features: NodeId,
    ) -> Result<EstimateNodes, DiffError> {
        if !graph.value(features).all_finite() {
            return Err(DiffError::NonFinite { op: "sseu_predict" });
        }
        let normed = graph.layer_norm(features, nodes.ln_gain, nodes.ln_bias)?;
        let pre = graph.matmul(nodes.trunk, normed)?;
        let z = graph.gelu(pre)?;
        let mu = graph.matmul(nodes.mean_head, z)?;
        let raw = graph.matmul(nodes.var_head, z)?;
        let log_var = graph.clamp(raw, LOG_VAR_LO, LOG_VAR_HI)?;
        Ok(EstimateNodes { mu, log_var })
    }

    /// Frozen-head prediction for a pooled feature vector.
    pub fn predict(&self, features: &Tensor) -> Result<ScaleEstimate, TrainError> {
        let mut graph = Graph::new();
        let nodes = self.bind(&mut graph, false);
        let f = graph.leaf(features.clone());
        let est = self.predict_nodes(&mut graph, nodes, f)?;
        Ok(ScaleEstimate::new(
            graph.value(est.mu).item(),
            graph.value(est.log_var).item(),
        ))
    }
}

/// Gaussian NLL of an estimate against the true log-scale.
pub fn nll(estimate: &ScaleEstimate, s_true: f64) -> f64 {
    let r = s_true - estimate.mu;
    0.5 * r * r * (-estimate.log_var).exp() + 0.5 * estimate.log_var
}

/// Mean absolute error of the means divided by mean predicted sigma.
pub fn calibration_ratio(estimates: &[ScaleEstimate], truths: &[f64]) -> Result<f64, TrainError> {
    if estimates.is_empty() || estimates.len() != truths.len() {
        return Err(TrainError::Contract(format!(
            "calibration_ratio needs matching non-empty inputs, got {} estimates and {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    let n = estimates.len() as f64;
    let mae: f64 = estimates
        .iter()
        .zip(truths)
        .map(|(e, &t)| (e.mu - t).abs())
        .sum::<f64>()
        / n;
    let mean_sigma: f64 = estimates.iter().map(|e| e.sigma).sum::<f64>() / n;
    Ok(mae / mean_sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{grad_check, GRAD_CHECK_EPS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_head_predicts_unit_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = SseuHead::init(8, 16, &mut rng);
        let f = Tensor::vector((0..8).map(|i| i as f64 * 0.25 - 1.0).collect());
        let est = head.predict(&f).unwrap();
        assert_eq!(est.mu, 0.0);
        assert_eq!(est.log_var, 0.0);
        assert_eq!(est.sigma, 1.0);
    }

    #[test]
    fn clamp_endpoints() {
        let lo = ScaleEstimate::new(0.0, -50.0);
        assert_eq!(lo.log_var, -10.0);
        assert!((lo.sigma - 6.7e-3).abs() < 1e-4);
        let hi = ScaleEstimate::new(0.0, 10.0);
        assert_eq!(hi.log_var, 4.0);
        assert!((hi.sigma - 7.389).abs() < 1e-3);
        assert!(lo.sigma >= (-5.0f64).exp() && hi.sigma <= (2.0f64).exp());
    }

    #[test]
    fn nll_hand_values() {
        let unit = ScaleEstimate::new(0.0, 0.0);
        assert_eq!(nll(&unit, 0.0), 0.0);
        assert_eq!(nll(&unit, 1.0), 0.5);
        let wide = ScaleEstimate::new(0.0, 4f64.ln());
        let want = 0.5 * (4.0 / 4.0) + 0.5 * 4f64.ln();
        assert!((nll(&wide, 2.0) - want).abs() < 1e-12);
        assert!((want - 1.1931).abs() < 1e-4);
    }

    #[test]
    fn nll_minimized_at_log_residual_squared() {
        let d: f64 = 0.7;
        let target = (d * d).ln();
        let mut best = (f64::INFINITY, f64::NAN);
        let mut lv = -3.0;
        while lv <= 3.0 {
            let est = ScaleEstimate::new(0.0, lv);
            let v = nll(&est, d);
            if v < best.0 {
                best = (v, lv);
            }
            lv += 0.001;
        }
        assert!((best.1 - target).abs() < 0.001 + 1e-9, "argmin {}", best.1);
    }

    #[test]
    fn nll_down_weighting_shape() {
        // fixed log_var: quadratic in residual
        let est = ScaleEstimate::new(0.0, 0.3);
        let a = nll(&est, 1.0);
        let b = nll(&est, 2.0);
        let c = nll(&est, 3.0);
        assert!((c - b) > (b - a));
        // fixed residual: squared term falls, penalty rises with log_var
        let r = 1.3;
        let sq = |lv: f64| 0.5 * r * r * (-lv).exp();
        let pen = |lv: f64| 0.5 * lv;
        assert!(sq(2.0) < sq(0.5));
        assert!(pen(2.0) > pen(0.5));
    }

    #[test]
    fn clamp_keeps_loss_and_gradients_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut head = SseuHead::init(6, 8, &mut rng);
        // blow up the raw variance head output
        for v in head.var_head.data_mut() {
            *v = 1e6;
        }
        for v in head.mean_head.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        let f = Tensor::vector((0..6).map(|_| rng.gen_range(-2.0..2.0)).collect());

        let mut g = Graph::new();
        let nodes = head.bind(&mut g, true);
        let fx = g.leaf(f);
        let est = head.predict_nodes(&mut g, nodes, fx).unwrap();
        let loss = g.gaussian_nll(est.mu, est.log_var, -0.5).unwrap();
        assert!(g.value(loss).item().is_finite());
        let grads = g.backward(loss).unwrap();
        for id in [nodes.ln_gain, nodes.ln_bias, nodes.trunk, nodes.mean_head, nodes.var_head] {
            if let Some(t) = grads.get(id) {
                assert!(t.all_finite());
            }
        }
    }

    #[test]
    fn gradient_check_nll_through_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut head = SseuHead::init(6, 8, &mut rng);
        // move heads off zero but keep raw log-var inside the clamp
        for v in head.mean_head.data_mut() {
            *v = rng.gen_range(-0.3..0.3);
        }
        for v in head.var_head.data_mut() {
            *v = rng.gen_range(-0.3..0.3);
        }
        let f = Tensor::vector((0..6).map(|_| rng.gen_range(-2.0..2.0)).collect());

        let mut g = Graph::new();
        let nodes = head.bind(&mut g, true);
        let fx = g.leaf(f);
        let est = head.predict_nodes(&mut g, nodes, fx).unwrap();
        let loss = g.gaussian_nll(est.mu, est.log_var, 0.8).unwrap();
        let leaves = [nodes.ln_gain, nodes.ln_bias, nodes.trunk, nodes.mean_head, nodes.var_head];
        let report = grad_check(&mut g, loss, &leaves, GRAD_CHECK_EPS).unwrap();
        assert!(report.worst < 1e-5, "worst {}", report.worst);
    }

    #[test]
    fn calibration_ratio_cases() {
        let exact: Vec<ScaleEstimate> =
            (0..10).map(|i| ScaleEstimate::new(i as f64, 0.0)).collect();
        let truths: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(calibration_ratio(&exact, &truths).unwrap(), 0.0);

        // residuals ~ N(0, sigma_i^2) with sigma reported: ratio -> sqrt(2/pi)
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let mut ests = Vec::with_capacity(n);
        let mut tr = Vec::with_capacity(n);
        for _ in 0..n {
            let sigma = rng.gen_range(0.5..2.0);
            // Box-Muller
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            let resid = sigma * z;
            ests.push(ScaleEstimate::new(resid, (sigma * sigma).ln()));
            tr.push(0.0);
        }
        let ratio = calibration_ratio(&ests, &tr).unwrap();
        let want = (2.0 / std::f64::consts::PI).sqrt();
        assert!((ratio - want).abs() < 0.05, "ratio {ratio}");

        // halving sigma doubles the ratio
        let halved: Vec<ScaleEstimate> = ests
            .iter()
            .map(|e| ScaleEstimate::new(e.mu, e.log_var + (0.25f64).ln()))
            .collect();
        let ratio2 = calibration_ratio(&halved, &tr).unwrap();
        assert!((ratio2 - 2.0 * ratio).abs() < 1e-9);

        assert!(calibration_ratio(&[], &[]).is_err());
    }
}
