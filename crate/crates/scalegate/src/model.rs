//! Surrogate model bundle: a frozen two-layer perceptron with adapters on
//! both linear maps, a scale-estimation head reading the frozen pooled
//! activation, and a trainable classifier. Four adapter variants share this
//! scaffold: the scale-gated adapter, a plain rank-matched LoRA, a
//! scale-as-extra-feature LoRA, and a bucketed three-expert mixture
//! hard-routed by tier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapter::{AdapterNodes, GatedLoraAdapter};
use crate::error::{DiffError, TrainError};
use crate::graph::{Graph, NodeId};
use crate::resolver::effective_scale_eval;
use crate::scale::TIER_BOUNDARY_HIGH_MID;
use crate::sseu::{EstimateNodes, ScaleEstimate, SseuHead, SseuNodes};
use crate::tensor::Tensor;
use crate::data::Sample;

/// Which adapter mechanism consumes the conditioning scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    CsHlora,
    VanillaLora,
    ScaleAsFeature,
    BucketedMoe,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::CsHlora,
        Variant::VanillaLora,
        Variant::ScaleAsFeature,
        Variant::BucketedMoe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::CsHlora => "cs_hlora",
            Variant::VanillaLora => "vanilla_lora",
            Variant::ScaleAsFeature => "scale_as_feature",
            Variant::BucketedMoe => "bucketed_moe",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }
}

/// Ungated low-rank pair used by the baselines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlainLora {
    pub b: Tensor,
    pub a: Tensor,
    pub rank: usize,
    pub lora_scale: f64,
}

/// Tape handles for one plain adapter.
#[derive(Debug, Clone, Copy)]
pub struct PlainLoraNodes {
    pub b: NodeId,
    pub a: NodeId,
}

impl PlainLora {
    pub fn init(rank: usize, d_out: usize, d_in: usize, lora_scale: f64, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let a: Vec<f64> = (0..rank * d_in).map(|_| rng.gen_range(-bound..bound)).collect();
        PlainLora {
            b: Tensor::zeros(vec![d_out, rank]),
            a: Tensor::new(vec![rank, d_in], a).expect("A shape"),
            rank,
            lora_scale,
        }
    }

    pub fn scale_factor(&self) -> f64 {
        self.lora_scale / self.rank as f64
    }

    pub fn param_count(&self) -> usize {
        self.b.len() + self.a.len()
    }

    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> PlainLoraNodes {
        let mut ins = |t: &Tensor| {
            if trainable {
                graph.param(t.clone())
            } else {
                graph.leaf(t.clone())
            }
        };
        PlainLoraNodes {
            b: ins(&self.b),
            a: ins(&self.a),
        }
    }

    pub fn apply_nodes(
        &self,
        graph: &mut Graph,
        nodes: PlainLoraNodes,
        x: NodeId,
    ) -> Result<NodeId, DiffError> {
        let ax = graph.matmul(nodes.a, x)?;
        let up = graph.matmul(nodes.b, ax)?;
        graph.scale_const(up, self.scale_factor())
    }
}

/// Per-variant adapter parameters for the two adapted layers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(clippy::large_enum_variant)]
pub enum AdapterStack {
    Gated([GatedLoraAdapter; 2]),
    Plain([PlainLora; 2]),
    ScaleFeature([PlainLora; 2]),
    Experts([Vec<PlainLora>; 2]),
}

#[derive(Debug, Clone)]
pub enum AdapterStackNodes {
    Gated([AdapterNodes; 2]),
    Plain([PlainLoraNodes; 2]),
    ScaleFeature([PlainLoraNodes; 2]),
    Experts([Vec<PlainLoraNodes>; 2]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    /// Trailing feature coordinates that carry sensor metadata (the scale
    /// cue). They feed the pooled path the scale head reads but are masked
    /// from the adapted task path, which receives physical scale only
    /// through its conditioning mechanism.
    pub scale_channels: usize,
}

pub const BUCKET_EXPERTS: usize = 3;

/// Hard bucket of a log-scale: 0 below the high/mid boundary, 1 below the
/// mid/low boundary, 2 otherwise.
pub fn bucket_of_log_scale(s: f64) -> usize {
    if s < TIER_BOUNDARY_HIGH_MID.log10() {
        0
    } else if s < 0.0 {
        1
    } else {
        2
    }
}

/// Per-layer expert ranks whose total parameter count best matches the
/// gated adapter's (which also owns thresholds and a sharpness scalar).
pub fn matched_expert_ranks(rank: usize, layer_dims: &[(usize, usize); 2]) -> [usize; 2] {
    let target: usize = layer_dims
        .iter()
        .map(|&(o, i)| rank * (o + i + 1) + 1)
        .sum();
    let per_expert: [usize; 2] = [
        layer_dims[0].0 + layer_dims[0].1,
        layer_dims[1].0 + layer_dims[1].1,
    ];
    let mut best = ([1usize; 2], usize::MAX);
    let guess = |l: usize| target as f64 / (2.0 * BUCKET_EXPERTS as f64 * per_expert[l] as f64);
    for r0 in candidates(guess(0)) {
        for r1 in candidates(guess(1)) {
            let total = BUCKET_EXPERTS * (r0 * per_expert[0] + r1 * per_expert[1]);
            let gap = total.abs_diff(target);
            if gap < best.1 {
                best = ([r0, r1], gap);
            }
        }
    }
    best.0
}

fn candidates(x: f64) -> [usize; 2] {
    let f = x.floor().max(1.0) as usize;
    [f, f + 1]
}

/// Frozen backbone plus all trainable components.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelBundle {
    pub variant: Variant,
    pub dims: ModelDims,
    pub rank: usize,
    pub lora_scale: f64,
    pub backbone_w1: Tensor,
    pub backbone_w2: Tensor,
    pub adapters: AdapterStack,
    pub sseu: SseuHead,
    pub classifier: Tensor,
}

impl ModelBundle {
    pub fn new(
        variant: Variant,
        dims: ModelDims,
        rank: usize,
        lora_scale: f64,
        seed: u64,
    ) -> Result<Self, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone_w1 = orthogonal_columns(dims.hidden, dims.feature_dim, &mut rng);
        let backbone_w2 = orthogonal_columns(dims.hidden, dims.hidden, &mut rng);
        let layer_dims = [(dims.hidden, dims.feature_dim), (dims.hidden, dims.hidden)];
        let adapters = match variant {
            Variant::CsHlora => AdapterStack::Gated([
                GatedLoraAdapter::init_tiers(rank, dims.hidden, dims.feature_dim, lora_scale, &mut rng)
                    .map_err(|e| TrainError::Config(e.to_string()))?,
                GatedLoraAdapter::init_tiers(rank, dims.hidden, dims.hidden, lora_scale, &mut rng)
                    .map_err(|e| TrainError::Config(e.to_string()))?,
            ]),
            Variant::VanillaLora => AdapterStack::Plain([
                PlainLora::init(rank, dims.hidden, dims.feature_dim, lora_scale, &mut rng),
                PlainLora::init(rank, dims.hidden, dims.hidden, lora_scale, &mut rng),
            ]),
            Variant::ScaleAsFeature => AdapterStack::ScaleFeature([
                // layer-1 adapter also sees the appended scale coordinate
                PlainLora::init(rank, dims.hidden, dims.feature_dim + 1, lora_scale, &mut rng),
                PlainLora::init(rank, dims.hidden, dims.hidden, lora_scale, &mut rng),
            ]),
            Variant::BucketedMoe => {
                let ranks = matched_expert_ranks(rank, &layer_dims);
                let scale_of = |re: usize| lora_scale * re as f64 / rank as f64;
                AdapterStack::Experts([
                    (0..BUCKET_EXPERTS)
                        .map(|_| {
                            PlainLora::init(
                                ranks[0],
                                dims.hidden,
                                dims.feature_dim,
                                scale_of(ranks[0]),
                                &mut rng,
                            )
                        })
                        .collect(),
                    (0..BUCKET_EXPERTS)
                        .map(|_| {
                            PlainLora::init(ranks[1], dims.hidden, dims.hidden, scale_of(ranks[1]), &mut rng)
                        })
                        .collect(),
                ])
            }
        };
        let sseu = SseuHead::init(dims.hidden, dims.hidden, &mut rng);
        let cb = 1.0 / (dims.hidden as f64).sqrt();
        let classifier = Tensor::new(
            vec![dims.classes, dims.hidden],
            (0..dims.classes * dims.hidden)
                .map(|_| rng.gen_range(-cb..cb))
                .collect(),
        )
        .expect("classifier shape");
        Ok(ModelBundle {
            variant,
            dims,
            rank,
            lora_scale,
            backbone_w1,
            backbone_w2,
            adapters,
            sseu,
            classifier,
        })
    }

    /// Trainable tensors in canonical order with stable names.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        match &self.adapters {
            AdapterStack::Gated(ads) => {
                for (l, _) in ads.iter().enumerate() {
                    for field in ["b", "a", "tau", "sharpness"] {
                        names.push(format!("adapter{l}.{field}"));
                    }
                }
            }
            AdapterStack::Plain(ads) | AdapterStack::ScaleFeature(ads) => {
                for (l, _) in ads.iter().enumerate() {
                    for field in ["b", "a"] {
                        names.push(format!("adapter{l}.{field}"));
                    }
                }
            }
            AdapterStack::Experts(layers) => {
                for (l, layer) in layers.iter().enumerate() {
                    for (k, _) in layer.iter().enumerate() {
                        for field in ["b", "a"] {
                            names.push(format!("expert{l}.{k}.{field}"));
                        }
                    }
                }
            }
        }
        for field in ["ln_gain", "ln_bias", "trunk", "mean_head", "var_head"] {
            names.push(format!("sseu.{field}"));
        }
        names.push("classifier".to_string());
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        match &self.adapters {
            AdapterStack::Gated(ads) => {
                for ad in ads {
                    out.extend([&ad.b, &ad.a, &ad.tau, &ad.free_sharpness]);
                }
            }
            AdapterStack::Plain(ads) | AdapterStack::ScaleFeature(ads) => {
                for ad in ads {
                    out.extend([&ad.b, &ad.a]);
                }
            }
            AdapterStack::Experts(layers) => {
                for layer in layers {
                    for ad in layer {
                        out.extend([&ad.b, &ad.a]);
                    }
                }
            }
        }
        out.extend([
            &self.sseu.ln_gain,
            &self.sseu.ln_bias,
            &self.sseu.trunk,
            &self.sseu.mean_head,
            &self.sseu.var_head,
        ]);
        out.push(&self.classifier);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        match &mut self.adapters {
            AdapterStack::Gated(ads) => {
                for ad in ads {
                    out.push(&mut ad.b);
                    out.push(&mut ad.a);
                    out.push(&mut ad.tau);
                    out.push(&mut ad.free_sharpness);
                }
            }
            AdapterStack::Plain(ads) | AdapterStack::ScaleFeature(ads) => {
                for ad in ads {
                    out.push(&mut ad.b);
                    out.push(&mut ad.a);
                }
            }
            AdapterStack::Experts(layers) => {
                for layer in layers {
                    for ad in layer {
                        out.push(&mut ad.b);
                        out.push(&mut ad.a);
                    }
                }
            }
        }
        out.push(&mut self.sseu.ln_gain);
        out.push(&mut self.sseu.ln_bias);
        out.push(&mut self.sseu.trunk);
        out.push(&mut self.sseu.mean_head);
        out.push(&mut self.sseu.var_head);
        out.push(&mut self.classifier);
        out
    }

    /// Adapter-only trainable parameter count (the quantity matched across
    /// variants).
    pub fn adapter_param_count(&self) -> usize {
        match &self.adapters {
            AdapterStack::Gated(ads) => ads
                .iter()
                .map(|a| a.b.len() + a.a.len() + a.tau.len() + a.free_sharpness.len())
                .sum(),
            AdapterStack::Plain(ads) | AdapterStack::ScaleFeature(ads) => {
                ads.iter().map(PlainLora::param_count).sum()
            }
            AdapterStack::Experts(layers) => layers
                .iter()
                .flat_map(|l| l.iter().map(PlainLora::param_count))
                .sum(),
        }
    }

    /// Checksum of the frozen backbone weights.
    pub fn backbone_checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for t in [&self.backbone_w1, &self.backbone_w2] {
            for v in t.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex_string(&hasher.finalize())
    }

    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> BundleNodes {
        let adapters = match &self.adapters {
            AdapterStack::Gated(ads) => {
                AdapterStackNodes::Gated([ads[0].bind(graph, trainable), ads[1].bind(graph, trainable)])
            }
            AdapterStack::Plain(ads) => {
                AdapterStackNodes::Plain([ads[0].bind(graph, trainable), ads[1].bind(graph, trainable)])
            }
            AdapterStack::ScaleFeature(ads) => AdapterStackNodes::ScaleFeature([
                ads[0].bind(graph, trainable),
                ads[1].bind(graph, trainable),
            ]),
            AdapterStack::Experts(layers) => AdapterStackNodes::Experts([
                layers[0].iter().map(|a| a.bind(graph, trainable)).collect(),
                layers[1].iter().map(|a| a.bind(graph, trainable)).collect(),
            ]),
        };
        let sseu = self.sseu.bind(graph, trainable);
        let classifier = if trainable {
            graph.param(self.classifier.clone())
        } else {
            graph.leaf(self.classifier.clone())
        };
        // backbone weights are always constants
        let backbone_w1 = graph.leaf(self.backbone_w1.clone());
        let backbone_w2 = graph.leaf(self.backbone_w2.clone());
        let mut trainable_ids = Vec::new();
        if trainable {
            match &adapters {
                AdapterStackNodes::Gated(ns) => {
                    for n in ns {
                        trainable_ids.extend([n.b, n.a, n.tau, n.free_sharpness]);
                    }
                }
                AdapterStackNodes::Plain(ns) | AdapterStackNodes::ScaleFeature(ns) => {
                    for n in ns {
                        trainable_ids.extend([n.b, n.a]);
                    }
                }
                AdapterStackNodes::Experts(layers) => {
                    for layer in layers {
                        for n in layer {
                            trainable_ids.extend([n.b, n.a]);
                        }
                    }
                }
            }
            trainable_ids.extend([sseu.ln_gain, sseu.ln_bias, sseu.trunk, sseu.mean_head, sseu.var_head]);
            trainable_ids.push(classifier);
        }
        BundleNodes {
            backbone_w1,
            backbone_w2,
            classifier,
            sseu,
            adapters,
            trainable_ids,
        }
    }

    /// Frozen-path scale estimate for a feature vector.
    pub fn estimate_scale(&self, features: &[f64]) -> Result<ScaleEstimate, TrainError> {
        let mut graph = Graph::new();
        let w1 = graph.leaf(self.backbone_w1.clone());
        let x = graph.leaf(Tensor::vector(features.to_vec()));
        let base = graph.matmul(w1, x).map_err(TrainError::Diff)?;
        let pooled = graph.gelu(base).map_err(TrainError::Diff)?;
        let nodes = self.sseu.bind(&mut graph, false);
        let est = self
            .sseu
            .predict_nodes(&mut graph, nodes, pooled)
            .map_err(TrainError::Diff)?;
        Ok(ScaleEstimate::new(
            graph.value(est.mu).item(),
            graph.value(est.log_var).item(),
        ))
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn orthogonal_columns(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    // Gram-Schmidt over columns (cols <= rows), giving norm-preserving maps.
    assert!(cols <= rows);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while columns.len() < cols {
        let mut v: Vec<f64> = (0..rows)
            .map(|_| {
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        for prev in &columns {
            let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (vi, pi) in v.iter_mut().zip(prev) {
                *vi -= dot * pi;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        for vi in &mut v {
            *vi /= norm;
        }
        columns.push(v);
    }
    let mut data = vec![0.0; rows * cols];
    for (j, col) in columns.iter().enumerate() {
        for i in 0..rows {
            data[i * cols + j] = col[i];
        }
    }
    Tensor::new(vec![rows, cols], data).expect("orthogonal shape")
}

/// Tape handles for one bound bundle.
pub struct BundleNodes {
    pub backbone_w1: NodeId,
    pub backbone_w2: NodeId,
    pub classifier: NodeId,
    pub sseu: SseuNodes,
    pub adapters: AdapterStackNodes,
    pub trainable_ids: Vec<NodeId>,
}

/// How the conditioning scale reaches the adapters for one sample.
#[derive(Debug, Clone, Copy)]
pub enum ScaleWire {
    /// A concrete log-scale value (metadata, range draw, or spoof).
    Given(f64),
    /// Route the estimated mean node so task gradients reach the head.
    FromEstimate,
}

/// Nodes produced by one sample's forward pass.
pub struct SampleForward {
    pub logits: NodeId,
    pub est: EstimateNodes,
    /// The log-scale value the adapters actually saw.
    pub s_value: f64,
}

/// Build one sample's forward pass on the tape.
pub fn forward_sample(
    bundle: &ModelBundle,
    graph: &mut Graph,
    nodes: &BundleNodes,
    features: &[f64],
    wire: ScaleWire,
) -> Result<SampleForward, TrainError> {
    if features.len() != bundle.dims.feature_dim {
        return Err(TrainError::DimConflict(format!(
            "sample has {} features but the model expects {}",
            features.len(),
            bundle.dims.feature_dim
        )));
    }
    // full features on the pooled path only; the scale head reads them
    let x_full = graph.leaf(Tensor::vector(features.to_vec()));
    let base_full = graph.matmul(nodes.backbone_w1, x_full)?;
    let pooled = graph.gelu(base_full)?;
    let est = bundle.sseu.predict_nodes(graph, nodes.sseu, pooled)?;

    let task_features = mask_scale_channels(features, bundle.dims.scale_channels);
    let x = graph.leaf(Tensor::vector(task_features.clone()));
    let base1 = graph.matmul(nodes.backbone_w1, x)?;

    let (s_node, s_value) = match wire {
        ScaleWire::Given(v) => (None, v),
        ScaleWire::FromEstimate => (Some(est.mu), graph.value(est.mu).item()),
    };

    let delta1 = match (&bundle.adapters, &nodes.adapters) {
        (AdapterStack::Gated(ads), AdapterStackNodes::Gated(ns)) => {
            let s = s_node.unwrap_or_else(|| graph.leaf(Tensor::scalar(s_value)));
            ads[0].apply_nodes(graph, ns[0], x, s)?
        }
        (AdapterStack::Plain(ads), AdapterStackNodes::Plain(ns)) => {
            ads[0].apply_nodes(graph, ns[0], x)?
        }
        (AdapterStack::ScaleFeature(ads), AdapterStackNodes::ScaleFeature(ns)) => {
            // scale enters as a plain appended feature, detached from the head
            let mut ext = task_features.clone();
            ext.push(s_value);
            let x_ext = graph.leaf(Tensor::vector(ext));
            ads[0].apply_nodes(graph, ns[0], x_ext)?
        }
        (AdapterStack::Experts(layers), AdapterStackNodes::Experts(ns)) => {
            let k = bucket_of_log_scale(s_value);
            layers[0][k].apply_nodes(graph, ns[0][k], x)?
        }
        _ => unreachable!("adapter stack and nodes always match"),
    };
    let pre1 = graph.add(base1, delta1)?;
    let h1 = graph.gelu(pre1)?;

    let base2 = graph.matmul(nodes.backbone_w2, h1)?;
    let delta2 = match (&bundle.adapters, &nodes.adapters) {
        (AdapterStack::Gated(ads), AdapterStackNodes::Gated(ns)) => {
            let s = s_node.unwrap_or_else(|| graph.leaf(Tensor::scalar(s_value)));
            ads[1].apply_nodes(graph, ns[1], h1, s)?
        }
        (AdapterStack::Plain(ads), AdapterStackNodes::Plain(ns))
        | (AdapterStack::ScaleFeature(ads), AdapterStackNodes::ScaleFeature(ns)) => {
            ads[1].apply_nodes(graph, ns[1], h1)?
        }
        (AdapterStack::Experts(layers), AdapterStackNodes::Experts(ns)) => {
            let k = bucket_of_log_scale(s_value);
            layers[1][k].apply_nodes(graph, ns[1][k], h1)?
        }
        _ => unreachable!("adapter stack and nodes always match"),
    };
    let pre2 = graph.add(base2, delta2)?;
    let h2 = graph.gelu(pre2)?;
    let logits = graph.matmul(nodes.classifier, h2)?;
    Ok(SampleForward { logits, est, s_value })
}

/// Frozen forward returning logits for a feature vector.
pub fn predict_logits(
    bundle: &ModelBundle,
    features: &[f64],
    wire: ScaleWire,
) -> Result<Vec<f64>, TrainError> {
    let mut graph = Graph::new();
    let nodes = bundle.bind(&mut graph, false);
    let f = forward_sample(bundle, &mut graph, &nodes, features, wire)?;
    Ok(graph.value(f.logits).data().to_vec())
}

/// Per-sample correctness under the evaluation-time scale rule, or under a
/// spoofed log-scale override.
pub fn eval_correctness(
    bundle: &ModelBundle,
    samples: &[Sample],
    spoof_log_scale: Option<f64>,
) -> Result<Vec<bool>, TrainError> {
    let mut out = Vec::with_capacity(samples.len());
    for sample in samples {
        let wire = match spoof_log_scale {
            Some(s) => ScaleWire::Given(s),
            None => {
                let eff = effective_scale_eval(&sample.gsd, 0.0);
                if eff.through_estimate {
                    ScaleWire::FromEstimate
                } else {
                    ScaleWire::Given(eff.value)
                }
            }
        };
        let logits = predict_logits(bundle, &sample.features, wire)?;
        let pred = argmax(&logits);
        out.push(pred == sample.label);
    }
    Ok(out)
}

pub fn accuracy(
    bundle: &ModelBundle,
    samples: &[Sample],
    spoof_log_scale: Option<f64>,
) -> Result<f64, TrainError> {
    let hits = eval_correctness(bundle, samples, spoof_log_scale)?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len().max(1) as f64)
}

/// Zero the trailing metadata coordinates for the task path.
pub fn mask_scale_channels(features: &[f64], scale_channels: usize) -> Vec<f64> {
    let mut out = features.to_vec();
    let n = out.len();
    for v in &mut out[n.saturating_sub(scale_channels)..] {
        *v = 0.0;
    }
    out
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}
