//! Joint training of the adapters, scale head and classifier over the
//! frozen backbone: cross-entropy under the per-sample effective scale plus
//! a scheduled Gaussian-NLL term on exact-annotated samples, plain SGD with
//! linear warmup, cosine decay and global gradient clipping.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{balanced_batches, Sample, SamplerConfig};
use crate::error::TrainError;
use crate::graph::{Graph, NodeId};
use crate::model::{
    forward_sample, hex_string, AdapterStack, BundleNodes, ModelBundle, ModelDims, PlainLora,
    ScaleWire, Variant,
};
use crate::resolver::{effective_scale_train, ResolverConfig};
use crate::sseu::{calibration_ratio, ScaleEstimate};
use crate::tensor::matmul;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_frac: f64,
    pub lambda_early: f64,
    pub lambda_late: f64,
    pub early_fraction: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub variant: Variant,
    pub rank: usize,
    pub lora_scale: f64,
    pub hidden: usize,
    pub scale_channels: usize,
    pub eval_interval: usize,
    pub resolver: ResolverConfig,
    pub sampler: SamplerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 10_000,
            batch_size: 8,
            learning_rate: 0.05,
            warmup_frac: 0.05,
            lambda_early: 0.3,
            lambda_late: 0.1,
            early_fraction: 0.10,
            grad_clip: 5.0,
            seed: 0,
            variant: Variant::CsHlora,
            rank: 16,
            lora_scale: 8.0,
            hidden: 64,
            scale_channels: 2,
            eval_interval: 50,
            resolver: ResolverConfig::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("steps and batch_size must be positive".into()));
        }
        if !(self.early_fraction > 0.0 && self.early_fraction < 1.0) {
            return Err(TrainError::Config(format!(
                "early_fraction must lie in (0, 1), got {}",
                self.early_fraction
            )));
        }
        if self.lambda_early < 0.0 || self.lambda_late < 0.0 {
            return Err(TrainError::Config("lambda values must be non-negative".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) {
            return Err(TrainError::Config(
                "learning_rate and grad_clip must be positive".into(),
            ));
        }
        self.resolver
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        self.sampler.validate().map_err(TrainError::Data)?;
        if self.sampler.batch_size != self.batch_size {
            return Err(TrainError::Config(format!(
                "sampler batch_size {} disagrees with batch_size {}",
                self.sampler.batch_size, self.batch_size
            )));
        }
        Ok(())
    }

    /// Loss weight of the scale-estimation term at step `t` of `steps`.
    pub fn lambda_at(&self, t: usize) -> f64 {
        if (t as f64) / (self.steps as f64) < self.early_fraction {
            self.lambda_early
        } else {
            self.lambda_late
        }
    }

    /// Linear warmup into cosine decay.
    pub fn learning_rate_at(&self, t: usize) -> f64 {
        let warm = ((self.warmup_frac * self.steps as f64).ceil() as usize).max(1);
        if t < warm {
            self.learning_rate * (t + 1) as f64 / warm as f64
        } else {
            let progress = (t - warm) as f64 / (self.steps - warm).max(1) as f64;
            self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

/// Scalar summary of one batch loss.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub total: f64,
    pub task: f64,
    pub nll: f64,
    pub lambda: f64,
    pub exact_in_batch: usize,
    pub routed_exact: usize,
    pub coin_flips_exact: usize,
}

/// A built batch loss: the tape, the loss node, the bound parameters.
pub struct BatchLoss {
    pub graph: Graph,
    pub loss: NodeId,
    pub nodes: BundleNodes,
    pub breakdown: LossBreakdown,
    pub exact_estimates: Vec<(ScaleEstimate, f64)>,
}

/// Assemble the joint objective for one batch: per-sample effective scale,
/// forward under the gates, mean task cross-entropy, and the scheduled NLL
/// over the exact-annotated subset (an all-range batch simply contributes
/// nothing to the NLL term).
pub fn joint_loss(
    bundle: &ModelBundle,
    batch: &[&Sample],
    t: usize,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<BatchLoss, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Config("empty batch".into()));
    }
    let mut graph = Graph::new();
    let nodes = bundle.bind(&mut graph, true);
    let mut ce_nodes = Vec::with_capacity(batch.len());
    let mut nll_nodes = Vec::new();
    let mut exact_estimates = Vec::new();
    let mut routed_exact = 0usize;
    let mut coin_flips_exact = 0usize;

    for sample in batch {
        let coin: f64 = rng.gen_range(0.0..1.0);
        let draw: f64 = rng.gen_range(0.0..1.0);
        let eff = effective_scale_train(&sample.gsd, 0.0, &config.resolver, coin, draw);
        let wire = if eff.through_estimate {
            ScaleWire::FromEstimate
        } else {
            ScaleWire::Given(eff.value)
        };
        if sample.gsd.is_exact() {
            coin_flips_exact += 1;
            if eff.through_estimate {
                routed_exact += 1;
            }
        }
        let fwd = forward_sample(bundle, &mut graph, &nodes, &sample.features, wire)?;
        let ce = graph.softmax_cross_entropy(fwd.logits, sample.label)?;
        ce_nodes.push(ce);
        if let crate::scale::ScaleAnnotation::Exact { value } = sample.gsd {
            let s_true = value.log10();
            let nll = graph.gaussian_nll(fwd.est.mu, fwd.est.log_var, s_true)?;
            nll_nodes.push(nll);
            exact_estimates.push((
                ScaleEstimate::new(
                    graph.value(fwd.est.mu).item(),
                    graph.value(fwd.est.log_var).item(),
                ),
                s_true,
            ));
        }
    }

    let task = graph.mean(&ce_nodes)?;
    let lambda = config.lambda_at(t);
    let (loss, nll_value) = if nll_nodes.is_empty() {
        (task, 0.0)
    } else {
        let nll = graph.mean(&nll_nodes)?;
        let nll_value = graph.value(nll).item();
        let weighted = graph.scale_const(nll, lambda)?;
        (graph.add(task, weighted)?, nll_value)
    };
    let breakdown = LossBreakdown {
        total: graph.value(loss).item(),
        task: graph.value(task).item(),
        nll: nll_value,
        lambda,
        exact_in_batch: nll_nodes.len(),
        routed_exact,
        coin_flips_exact,
    };
    Ok(BatchLoss {
        graph,
        loss,
        nodes,
        breakdown,
        exact_estimates,
    })
}

/// One metrics-log row; columns match the CSV header exactly.
#[derive(Debug, Clone, Copy)]
pub struct MetricsRow {
    pub step: usize,
    pub loss_total: f64,
    pub loss_task: f64,
    pub loss_nll: f64,
    pub lambda: f64,
    pub grad_norm: f64,
    pub calib_ratio: f64,
    pub effmag_layer0: f64,
    pub effmag_layer1: f64,
}

pub const METRICS_HEADER: &str =
    "step,loss_total,loss_task,loss_nll,lambda,grad_norm,calib_ratio,effmag_layer0,effmag_layer1";

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<(), TrainError> {
    let mut out = String::new();
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.step,
            r.loss_total,
            r.loss_task,
            r.loss_nll,
            r.lambda,
            r.grad_norm,
            r.calib_ratio,
            r.effmag_layer0,
            r.effmag_layer1
        ));
    }
    std::fs::write(path, out).map_err(|e| TrainError::Checkpoint {
        path: path.display().to_string(),
        cause: e.to_string(),
    })
}

pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub metrics: Vec<MetricsRow>,
    /// Step at which the loss went non-finite; the bundle is then the last
    /// good snapshot.
    pub diverged_at: Option<usize>,
    pub routed_exact: usize,
    pub exact_coin_flips: usize,
}

fn effective_magnitudes(bundle: &ModelBundle) -> [f64; 2] {
    match &bundle.adapters {
        AdapterStack::Gated(ads) => [ads[0].effective_magnitude(), ads[1].effective_magnitude()],
        AdapterStack::Plain(ads) | AdapterStack::ScaleFeature(ads) => {
            [plain_magnitude(&ads[0]), plain_magnitude(&ads[1])]
        }
        AdapterStack::Experts(layers) => {
            let mean = |layer: &Vec<PlainLora>| {
                layer.iter().map(plain_magnitude).sum::<f64>() / layer.len() as f64
            };
            [mean(&layers[0]), mean(&layers[1])]
        }
    }
}

fn plain_magnitude(ad: &PlainLora) -> f64 {
    let ba = matmul(&ad.b, &ad.a).expect("lora product");
    ad.scale_factor() * ba.frobenius_norm()
}

/// Feature dimension and class count implied by a corpus.
pub fn corpus_dims(samples: &[Sample]) -> Result<(usize, usize), TrainError> {
    let first = samples
        .first()
        .ok_or_else(|| TrainError::Config("empty corpus".into()))?;
    let d = first.features.len();
    let mut classes = 0;
    for s in samples {
        if s.features.len() != d {
            return Err(TrainError::DimConflict(format!(
                "sample {} has {} features, expected {}",
                s.id,
                s.features.len(),
                d
            )));
        }
        classes = classes.max(s.label + 1);
    }
    Ok((d, classes.max(2)))
}

/// Full training run over a corpus. Deterministic in (config, corpus).
pub fn train(config: &TrainConfig, corpus: &[Sample]) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let (feature_dim, classes) = corpus_dims(corpus)?;
    let dims = ModelDims {
        feature_dim,
        hidden: config.hidden,
        classes,
        scale_channels: config.scale_channels,
    };
    let mut bundle = ModelBundle::new(
        config.variant,
        dims,
        config.rank,
        config.lora_scale,
        config.seed,
    )?;
    let frozen_checksum = bundle.backbone_checksum();

    let mut route_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xa076_1d64_78bd_642f);
    let mut metrics = Vec::new();
    let mut last_good = bundle.clone();
    let mut routed_exact = 0usize;
    let mut exact_coin_flips = 0usize;
    let mut diverged_at = None;

    let mut t = 0usize;
    let mut epoch = 0u64;
    'outer: while t < config.steps {
        let batches = balanced_batches(corpus, &config.sampler, config.seed.wrapping_add(epoch))?;
        if batches.is_empty() {
            return Err(TrainError::Config(
                "sampler produced no batches; corpus too small for the batch size".into(),
            ));
        }
        for batch_idx in &batches {
            if t >= config.steps {
                break 'outer;
            }
            let batch: Vec<&Sample> = batch_idx.iter().map(|&i| &corpus[i]).collect();
            let built = joint_loss(&bundle, &batch, t, config, &mut route_rng)?;
            routed_exact += built.breakdown.routed_exact;
            exact_coin_flips += built.breakdown.coin_flips_exact;

            if !built.breakdown.total.is_finite() {
                diverged_at = Some(t);
                bundle = last_good;
                return Ok(TrainOutcome {
                    bundle,
                    metrics,
                    diverged_at,
                    routed_exact,
                    exact_coin_flips,
                });
            }

            let grads = built.graph.backward(built.loss)?;
            // global norm over every trainable tensor
            let mut sq = 0.0;
            for &id in &built.nodes.trainable_ids {
                if let Some(g) = grads.get(id) {
                    sq += g.data().iter().map(|v| v * v).sum::<f64>();
                }
            }
            let grad_norm = sq.sqrt();
            let clip = if grad_norm > config.grad_clip {
                config.grad_clip / grad_norm
            } else {
                1.0
            };
            let lr = config.learning_rate_at(t);

            {
                let mut slots = bundle.params_mut();
                debug_assert_eq!(slots.len(), built.nodes.trainable_ids.len());
                for (slot, &id) in slots.iter_mut().zip(&built.nodes.trainable_ids) {
                    if let Some(g) = grads.get(id) {
                        for (p, gv) in slot.data_mut().iter_mut().zip(g.data()) {
                            *p -= lr * clip * gv;
                        }
                    }
                }
            }

            if t.is_multiple_of(config.eval_interval) || t + 1 == config.steps {
                let calib = if built.exact_estimates.is_empty() {
                    f64::NAN
                } else {
                    let (ests, truths): (Vec<_>, Vec<_>) =
                        built.exact_estimates.iter().cloned().unzip();
                    calibration_ratio(&ests, &truths)?
                };
                let mags = effective_magnitudes(&bundle);
                metrics.push(MetricsRow {
                    step: t,
                    loss_total: built.breakdown.total,
                    loss_task: built.breakdown.task,
                    loss_nll: built.breakdown.nll,
                    lambda: built.breakdown.lambda,
                    grad_norm,
                    calib_ratio: calib,
                    effmag_layer0: mags[0],
                    effmag_layer1: mags[1],
                });
                last_good = bundle.clone();
            }
            t += 1;
        }
        epoch += 1;
    }

    debug_assert_eq!(bundle.backbone_checksum(), frozen_checksum);
    if bundle.backbone_checksum() != frozen_checksum {
        return Err(TrainError::Contract(
            "frozen backbone changed during training".into(),
        ));
    }
    Ok(TrainOutcome {
        bundle,
        metrics,
        diverged_at,
        routed_exact,
        exact_coin_flips,
    })
}

// ---- checkpoints -------------------------------------------------------------

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config_fingerprint: String,
    bundle: ModelBundle,
}

/// Hex SHA-256 of a canonical JSON value, used to tie checkpoints to the
/// config that produced them.
pub fn fingerprint_json<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hex_string(&hasher.finalize())
}

pub fn save_checkpoint(
    bundle: &ModelBundle,
    config_fingerprint: &str,
    path: &Path,
) -> Result<(), TrainError> {
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        config_fingerprint: config_fingerprint.to_string(),
        bundle: bundle.clone(),
    };
    let err = |cause: String| TrainError::Checkpoint {
        path: path.display().to_string(),
        cause,
    };
    let text = serde_json::to_string(&file).map_err(|e| err(e.to_string()))?;
    let f = std::fs::File::create(path).map_err(|e| err(e.to_string()))?;
    let mut w = std::io::BufWriter::new(f);
    w.write_all(text.as_bytes()).map_err(|e| err(e.to_string()))?;
    w.flush().map_err(|e| err(e.to_string()))
}

pub struct LoadedCheckpoint {
    pub bundle: ModelBundle,
    pub config_fingerprint: String,
    pub version: u32,
}

impl LoadedCheckpoint {
    /// Warn (without failing) when the stored fingerprint disagrees.
    pub fn warn_on_mismatch(&self, expected: &str) -> bool {
        let mismatch = self.config_fingerprint != expected;
        if mismatch {
            eprintln!(
                "warning: checkpoint config fingerprint {} does not match expected {}; loading anyway",
                self.config_fingerprint, expected
            );
        }
        mismatch
    }
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint, TrainError> {
    let err = |cause: String| TrainError::Checkpoint {
        path: path.display().to_string(),
        cause,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    if file.version != CHECKPOINT_VERSION {
        return Err(err(format!(
            "unsupported checkpoint version {} (expected {})",
            file.version, CHECKPOINT_VERSION
        )));
    }
    Ok(LoadedCheckpoint {
        bundle: file.bundle,
        config_fingerprint: file.config_fingerprint,
        version: file.version,
    })
}
