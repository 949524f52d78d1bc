//! Synthetic scale-layered corpus, balanced batch sampler, JSONL I/O.
//!
//! Every sample's features split into three equal blocks (texture, geometry,
//! semantic analogs). Block amplitudes follow sigmoid schedules of the true
//! log-scale `s`, so fine-scale samples are decodable only from the texture
//! block and coarse ones only from the semantic block. Within a block the
//! class pattern rotates slowly with `s` between two orthogonal prototypes,
//! which makes accurate conditioning on `s` pay off continuously instead of
//! only at regime boundaries. A noisy copy of `s` sits in two reserved
//! feature coordinates so scale can also be estimated from content.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::scale::{assign_tier, ScaleAnnotation, Tier};
use crate::tensor::sigmoid_scalar;

/// Sharpness of the block-amplitude schedules.
pub const BLOCK_SCHEDULE_SHARPNESS: f64 = 5.0;
/// Log-scale where texture amplitude hands over to geometry.
pub const TEXTURE_EDGE: f64 = -0.85;
/// Log-scale where geometry amplitude hands over to semantics.
pub const SEMANTIC_EDGE: f64 = 0.5;
/// Prototype rotation per unit log-scale, radians.
pub const ROTATION_RATE: f64 = 1.5;

/// One corpus record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
    pub label: usize,
    pub gsd: ScaleAnnotation,
    pub sensor: Option<String>,
    pub source: String,
}

/// Generator-side ground truth, kept apart from the corpus schema.
#[derive(Debug, Clone, Copy)]
pub struct SampleTruth {
    pub s: f64,
    pub ambiguous: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenConfig {
    pub n: usize,
    pub feature_dim: usize,
    pub classes: usize,
    /// Per-coordinate feature noise sigma.
    pub noise: f64,
    /// Base class-pattern amplitude.
    pub pattern_amp: f64,
    /// Fraction of samples whose scale cue is heavily blurred.
    pub ambiguous_frac: f64,
    pub exact_frac: f64,
    pub range_frac: f64,
    pub s_min: f64,
    pub s_max: f64,
    /// Cue noise sigma in log10 units.
    pub cue_noise: f64,
    /// Cue noise multiplier for ambiguous samples.
    pub cue_ambiguous_mult: f64,
    /// Half-width (log scale) of the per-sample, per-block amplitude
    /// jitter. Makes the three block energies informative per sample
    /// instead of deterministic functions of the scale.
    pub amp_jitter: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n: 7500,
            feature_dim: 33,
            classes: 4,
            noise: 0.25,
            pattern_amp: 1.2,
            ambiguous_frac: 0.15,
            exact_frac: 0.5,
            range_frac: 0.25,
            s_min: -1.5,
            s_max: 1.3,
            cue_noise: 0.05,
            cue_ambiguous_mult: 8.0,
            amp_jitter: 0.6,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Config(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.feature_dim < 12 || !self.feature_dim.is_multiple_of(3) {
            return bad(format!(
                "feature_dim must be >= 12 and divisible by 3, got {}",
                self.feature_dim
            ));
        }
        if self.classes < 2 {
            return bad(format!("classes must be >= 2, got {}", self.classes));
        }
        if self.feature_dim / 3 < 2 * self.classes + 2 {
            return bad(format!(
                "feature_dim/3 must be at least 2*classes+2 to hold the class basis \
                 and the scale cue; got feature_dim {} for {} classes",
                self.feature_dim, self.classes
            ));
        }
        if !(self.pattern_amp > 0.0) {
            return bad(format!("pattern_amp must be positive, got {}", self.pattern_amp));
        }
        if self.noise < 0.0 || self.cue_noise < 0.0 || self.cue_ambiguous_mult < 1.0 {
            return bad("noise parameters must be non-negative (multiplier >= 1)".into());
        }
        if !(0.0..1.0).contains(&self.amp_jitter) {
            return bad(format!("amp_jitter must lie in [0, 1), got {}", self.amp_jitter));
        }
        if !(0.0..=1.0).contains(&self.ambiguous_frac) {
            return bad(format!("ambiguous_frac out of [0,1]: {}", self.ambiguous_frac));
        }
        if self.exact_frac < 0.0 || self.range_frac < 0.0 || self.exact_frac + self.range_frac > 1.0
        {
            return bad("annotation fractions must be non-negative and sum to <= 1".into());
        }
        if !(self.s_min < self.s_max) {
            return bad(format!("need s_min < s_max, got [{}, {}]", self.s_min, self.s_max));
        }
        Ok(())
    }

    pub fn block_len(&self) -> usize {
        self.feature_dim / 3
    }

    /// (offset, content length) per block; the semantic block donates its
    /// last two coordinates to the scale cue.
    pub fn block_content(&self) -> [(usize, usize); 3] {
        let b = self.block_len();
        [(0, b), (b, b), (2 * b, b - 2)]
    }

    /// Global indices of the two reserved cue coordinates.
    pub fn cue_indices(&self) -> (usize, usize) {
        (self.feature_dim - 2, self.feature_dim - 1)
    }
}

/// Amplitude schedule of the three blocks at log-scale `s`.
pub fn block_weights(s: f64) -> [f64; 3] {
    let k = BLOCK_SCHEDULE_SHARPNESS;
    [
        sigmoid_scalar(k * (TEXTURE_EDGE - s)),
        sigmoid_scalar(k * (s - TEXTURE_EDGE)) * sigmoid_scalar(k * (SEMANTIC_EDGE - s)),
        sigmoid_scalar(k * (s - SEMANTIC_EDGE)),
    ]
}

/// Raw per-block signal energy of a feature vector (cue coordinates
/// excluded); the probe factors standing in for texture / geometry /
/// semantic content strength.
pub fn block_energies(features: &[f64], config: &GenConfig) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (j, (off, len)) in config.block_content().into_iter().enumerate() {
        out[j] = features[off..off + len].iter().map(|v| v * v).sum();
    }
    out
}

/// Class prototype pairs per block, deterministic in (seed, dims, classes).
pub struct Prototypes {
    /// `p[block][class]` and `q[block][class]` are orthonormal directions.
    pub p: Vec<Vec<Vec<f64>>>,
    pub q: Vec<Vec<Vec<f64>>>,
}

impl Prototypes {
    pub fn build(config: &GenConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(17));
        let c = config.classes;
        let mut p = Vec::with_capacity(3);
        let mut q = Vec::with_capacity(3);
        for (_, len) in config.block_content() {
            let basis = orthonormal_rows(2 * c, len, &mut rng);
            p.push(basis[..c].to_vec());
            q.push(basis[c..].to_vec());
        }
        Prototypes { p, q }
    }

    /// Pattern of class `y` in block `j` at log-scale `s`.
    pub fn pattern(&self, j: usize, y: usize, s: f64) -> Vec<f64> {
        let angle = ROTATION_RATE * s;
        let (cw, sw) = (angle.cos(), angle.sin());
        self.p[j][y]
            .iter()
            .zip(&self.q[j][y])
            .map(|(&pv, &qv)| cw * pv + sw * qv)
            .collect()
    }
}

fn orthonormal_rows(rows: usize, cols: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    assert!(rows <= cols, "cannot build {rows} orthonormal rows in {cols} dims");
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(rows);
    while out.len() < rows {
        let mut v: Vec<f64> = (0..cols).map(|_| gaussian(rng)).collect();
        for prev in &out {
            let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (vi, pi) in v.iter_mut().zip(prev) {
                *vi -= dot * pi;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue; // degenerate draw, retry
        }
        for vi in &mut v {
            *vi /= norm;
        }
        out.push(v);
    }
    out
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller; one value per call keeps the stream simple to reason about
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generate the corpus along with its hidden truth.
pub fn generate_with_truth(
    config: &GenConfig,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<SampleTruth>), DataError> {
    config.validate()?;
    let protos = Prototypes::build(config, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(config.n);
    let mut truths = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let s = rng.gen_range(config.s_min..config.s_max);
        let label = rng.gen_range(0..config.classes);
        let ambiguous = rng.gen_range(0.0..1.0) < config.ambiguous_frac;
        let features = render_features(config, &protos, s, label, ambiguous, &mut rng);
        let g = 10f64.powf(s);
        let kind: f64 = rng.gen_range(0.0..1.0);
        let gsd = if kind < config.exact_frac {
            ScaleAnnotation::Exact { value: g }
        } else if kind < config.exact_frac + config.range_frac {
            ScaleAnnotation::Range { lo: g / 2.0, hi: g * 2.0 }
        } else {
            ScaleAnnotation::Unknown
        };
        samples.push(Sample {
            id: format!("synth-{i:06}"),
            features,
            label,
            gsd,
            sensor: None,
            source: "synthetic".to_string(),
        });
        truths.push(SampleTruth { s, ambiguous });
    }
    Ok((samples, truths))
}

pub fn generate(config: &GenConfig, seed: u64) -> Result<Vec<Sample>, DataError> {
    generate_with_truth(config, seed).map(|(s, _)| s)
}

/// Class-balanced evaluation set pinned to a single true log-scale, all
/// exact-annotated. Used by the spoofing sweep. `proto_seed` must be the
/// corpus seed so both share one set of class prototypes; `eval_seed`
/// drives the fresh noise draws.
pub fn generate_at_scale(
    config: &GenConfig,
    proto_seed: u64,
    eval_seed: u64,
    s_true: f64,
    n: usize,
) -> Result<(Vec<Sample>, Vec<SampleTruth>), DataError> {
    config.validate()?;
    let protos = Prototypes::build(config, proto_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(eval_seed ^ 0x5bd1_e995);
    let g = 10f64.powf(s_true);
    let mut samples = Vec::with_capacity(n);
    let mut truths = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % config.classes;
        let features = render_features(config, &protos, s_true, label, false, &mut rng);
        samples.push(Sample {
            id: format!("eval-{i:06}"),
            features,
            label,
            gsd: ScaleAnnotation::Exact { value: g },
            sensor: None,
            source: "synthetic-eval".to_string(),
        });
        truths.push(SampleTruth { s: s_true, ambiguous: false });
    }
    Ok((samples, truths))
}

fn render_features(
    config: &GenConfig,
    protos: &Prototypes,
    s: f64,
    label: usize,
    ambiguous: bool,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let mut features = vec![0.0; config.feature_dim];
    let weights = block_weights(s);
    for (j, (off, len)) in config.block_content().into_iter().enumerate() {
        let pattern = protos.pattern(j, label, s);
        let jitter = (config.amp_jitter * rng.gen_range(-1.0..1.0f64)).exp();
        for t in 0..len {
            features[off + t] =
                config.pattern_amp * jitter * weights[j] * pattern[t] + config.noise * gaussian(rng);
        }
    }
    let cue_sigma = config.cue_noise * if ambiguous { config.cue_ambiguous_mult } else { 1.0 };
    let (c0, c1) = config.cue_indices();
    features[c0] = s + cue_sigma * gaussian(rng);
    features[c1] = s + cue_sigma * gaussian(rng);
    features
}

// ---- generator-side oracle --------------------------------------------------

/// Which block an oracle reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleBlock {
    /// The block the schedule makes dominant at the sample's true scale.
    Matched,
    /// The least-weighted block (maximally wrong choice).
    LeastWeighted,
    /// A fixed block index.
    Fixed(usize),
}

/// Correlation decoder with full knowledge of the construction: reads one
/// block, correlates against the rotated prototypes at the given scale.
pub fn oracle_predict(
    config: &GenConfig,
    protos: &Prototypes,
    features: &[f64],
    s: f64,
    block: OracleBlock,
) -> usize {
    let weights = block_weights(s);
    let j = match block {
        OracleBlock::Matched => argmax3(&weights),
        OracleBlock::LeastWeighted => argmin3(&weights),
        OracleBlock::Fixed(j) => j,
    };
    let (off, len) = config.block_content()[j];
    let content = &features[off..off + len];
    let mut best = (f64::NEG_INFINITY, 0);
    for y in 0..config.classes {
        let pattern = protos.pattern(j, y, s);
        let score: f64 = content.iter().zip(&pattern).map(|(a, b)| a * b).sum();
        if score > best.0 {
            best = (score, y);
        }
    }
    best.1
}

/// Oracle accuracy over a generated corpus.
pub fn oracle_accuracy(
    config: &GenConfig,
    protos: &Prototypes,
    samples: &[Sample],
    truths: &[SampleTruth],
    block: OracleBlock,
) -> f64 {
    let correct = samples
        .iter()
        .zip(truths)
        .filter(|(sm, tr)| oracle_predict(config, protos, &sm.features, tr.s, block) == sm.label)
        .count();
    correct as f64 / samples.len() as f64
}

fn argmax3(w: &[f64; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if w[i] > w[best] {
            best = i;
        }
    }
    best
}

fn argmin3(w: &[f64; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if w[i] < w[best] {
            best = i;
        }
    }
    best
}

// ---- balanced sampler --------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub batch_size: usize,
    pub exact_ratio: f64,
    pub min_bins: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            batch_size: 8,
            exact_ratio: 0.25,
            min_bins: 2,
        }
    }
}

impl SamplerConfig {
    pub fn exact_quota(&self) -> usize {
        (self.batch_size as f64 * self.exact_ratio).round() as usize
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.exact_ratio > 0.0 && self.exact_ratio <= 1.0) {
            return Err(DataError::Sampler(format!(
                "exact_ratio must lie in (0, 1], got {}",
                self.exact_ratio
            )));
        }
        if self.min_bins == 0 {
            return Err(DataError::Sampler("min_bins must be >= 1".into()));
        }
        if self.batch_size < self.min_bins {
            return Err(DataError::Sampler(format!(
                "batch_size {} cannot host min_bins {}",
                self.batch_size, self.min_bins
            )));
        }
        Ok(())
    }
}

fn sample_bin(sample: &Sample) -> Option<Tier> {
    assign_tier(&sample.gsd).ok()
}

/// One epoch of index batches. Every batch holds exactly
/// `round(batch_size * exact_ratio)` exact-annotated samples and members
/// from at least `min_bins` distinct tier bins; no sample repeats within the
/// epoch; a ragged tail that cannot fill a full batch is dropped.
pub fn balanced_batches(
    samples: &[Sample],
    config: &SamplerConfig,
    seed: u64,
) -> Result<Vec<Vec<usize>>, DataError> {
    config.validate()?;
    let quota = config.exact_quota();
    let mut exact_pool: Vec<usize> = Vec::new();
    let mut other_pool: Vec<usize> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        if s.gsd.is_exact() {
            exact_pool.push(i);
        } else {
            other_pool.push(i);
        }
    }
    if exact_pool.len() < quota {
        return Err(DataError::Sampler(format!(
            "exact-quota constraint infeasible: batches need {} exact samples, corpus has {}",
            quota,
            exact_pool.len()
        )));
    }
    let occupied: std::collections::BTreeSet<Tier> =
        samples.iter().filter_map(sample_bin).collect();
    if occupied.len() < config.min_bins {
        return Err(DataError::Sampler(format!(
            "min_bins constraint infeasible: corpus occupies {} scale bin(s), need {}",
            occupied.len(),
            config.min_bins
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    exact_pool.shuffle(&mut rng);
    other_pool.shuffle(&mut rng);

    let mut batches = Vec::new();
    let mut ei = 0;
    let mut oi = 0;
    let fill = config.batch_size - quota;
    while ei + quota <= exact_pool.len() && oi + fill <= other_pool.len() {
        let mut batch: Vec<usize> = Vec::with_capacity(config.batch_size);
        batch.extend_from_slice(&exact_pool[ei..ei + quota]);
        batch.extend_from_slice(&other_pool[oi..oi + fill]);

        let mut bins: std::collections::BTreeSet<Tier> =
            batch.iter().filter_map(|&i| sample_bin(&samples[i])).collect();
        if bins.len() < config.min_bins {
            // swap members against later pool entries that add a new bin
            if !repair_bins(
                samples,
                &mut batch,
                &mut bins,
                config.min_bins,
                (&mut exact_pool, ei + quota, quota),
                (&mut other_pool, oi + fill, fill),
            ) {
                break; // tail cannot satisfy the bin constraint; drop it
            }
        }
        batches.push(batch);
        ei += quota;
        oi += fill;
    }
    Ok(batches)
}

/// Try to raise the batch's distinct-bin count by swapping batch members
/// with not-yet-consumed pool entries. Returns false when no swap helps.
fn repair_bins(
    samples: &[Sample],
    batch: &mut [usize],
    bins: &mut std::collections::BTreeSet<Tier>,
    min_bins: usize,
    (exact_pool, exact_from, quota): (&mut [usize], usize, usize),
    (other_pool, other_from, _fill): (&mut [usize], usize, usize),
) -> bool {
    let pools: [(&mut [usize], usize, std::ops::Range<usize>); 2] = [
        (exact_pool, exact_from, 0..quota),
        (other_pool, other_from, quota..batch.len()),
    ];
    for (pool, from, slots) in pools {
        for p in from..pool.len() {
            if bins.len() >= min_bins {
                return true;
            }
            let cand = pool[p];
            let cand_bin = match sample_bin(&samples[cand]) {
                Some(b) if !bins.contains(&b) => b,
                _ => continue,
            };
            // swap out a batch member whose bin is redundant (duplicated or none)
            let victim = slots.clone().find(|&sl| {
                match sample_bin(&samples[batch[sl]]) {
                    None => true,
                    Some(b) => {
                        batch
                            .iter()
                            .filter(|&&m| sample_bin(&samples[m]) == Some(b))
                            .count()
                            > 1
                    }
                }
            });
            if let Some(sl) = victim {
                let pool_slot = pool.iter().position(|&x| x == cand).expect("candidate present");
                pool[pool_slot] = batch[sl];
                batch[sl] = cand;
                bins.insert(cand_bin);
            }
        }
    }
    bins.len() >= min_bins
}

// ---- JSONL ----------------------------------------------------------------

pub fn save_jsonl(samples: &[Sample], path: &Path) -> Result<(), DataError> {
    let io_err = |e: std::io::Error| DataError::Io {
        path: path.display().to_string(),
        cause: e.to_string(),
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for s in samples {
        let line = serde_json::to_string(s).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            cause: e.to_string(),
        })?;
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<Sample>, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        cause: e.to_string(),
    })?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DataError::Load {
            path: path.display().to_string(),
            line: lineno + 1,
            cause: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| DataError::Load {
            path: path.display().to_string(),
            line: lineno + 1,
            cause: e.to_string(),
        })?;
        sample.gsd.validate().map_err(|e| DataError::Load {
            path: path.display().to_string(),
            line: lineno + 1,
            cause: e.to_string(),
        })?;
        if !sample.features.iter().all(|v| v.is_finite()) {
            return Err(DataError::Load {
                path: path.display().to_string(),
                line: lineno + 1,
                cause: "non-finite feature".to_string(),
            });
        }
        out.push(sample);
    }
    Ok(out)
}
