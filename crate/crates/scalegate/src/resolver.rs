//! Scale resolvers.
//!
//! Three related pieces: the training-time effective-scale rule over the
//! exact/range/unknown annotation states, the inference-time three-branch
//! resolver (metadata, confident estimate, neutral fallback), and the
//! data-side GSD injection backed by a sensor registry file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scale::ScaleAnnotation;
use crate::sseu::ScaleEstimate;

#[derive(Debug, Error)]
pub enum ResolverError {
    #[error("invalid resolver config: {0}")]
    Config(String),

    #[error("registry {path}: {cause}")]
    Registry { path: String, cause: String },
}

/// Thresholds of the inference resolver and the training routing rate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ResolverConfig {
    /// Confidence threshold on predicted sigma, log10 units.
    pub sigma_tau: f64,
    /// Neutral fallback GSD, meters/pixel.
    pub g0: f64,
    /// Probability an exact-annotated training step routes through the
    /// estimated scale instead of its metadata value.
    pub p_e2e: f64,
}

impl Default for ResolverConfig {
    fn default() -> Self {
        ResolverConfig {
            sigma_tau: 0.3,
            g0: 1.0,
            p_e2e: 0.2,
        }
    }
}

impl ResolverConfig {
    pub fn validate(&self) -> Result<(), ResolverError> {
        if !(self.sigma_tau > 0.0) {
            return Err(ResolverError::Config(format!(
                "sigma_tau must be positive, got {}",
                self.sigma_tau
            )));
        }
        if !(self.g0 > 0.0) {
            return Err(ResolverError::Config(format!(
                "g0 must be positive, got {}",
                self.g0
            )));
        }
        if !(0.0..=1.0).contains(&self.p_e2e) {
            return Err(ResolverError::Config(format!(
                "p_e2e must lie in [0, 1], got {}",
                self.p_e2e
            )));
        }
        Ok(())
    }
}

/// Effective log-scale for one training step, plus whether it must be wired
/// to the estimated-mean node so task gradients reach the scale head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveScale {
    pub value: f64,
    pub through_estimate: bool,
}

/// Training-time rule. Randomness comes from the caller so a seeded run
/// replays every decision: `coin` routes exact samples, `range_draw` places
/// range samples inside their log-interval.
pub fn effective_scale_train(
    annotation: &ScaleAnnotation,
    sse_mu: f64,
    config: &ResolverConfig,
    coin: f64,
    range_draw: f64,
) -> EffectiveScale {
    match *annotation {
        ScaleAnnotation::Exact { value } => {
            if coin >= config.p_e2e {
                EffectiveScale {
                    value: value.log10(),
                    through_estimate: false,
                }
            } else {
                EffectiveScale {
                    value: sse_mu,
                    through_estimate: true,
                }
            }
        }
        ScaleAnnotation::Range { lo, hi } => {
            let (a, b) = (lo.log10(), hi.log10());
            EffectiveScale {
                value: a + range_draw * (b - a),
                through_estimate: false,
            }
        }
        ScaleAnnotation::Unknown => EffectiveScale {
            value: sse_mu,
            through_estimate: true,
        },
    }
}

/// Evaluation-time rule: exact value, geometric mean of ranges, estimated
/// mean for unknowns.
pub fn effective_scale_eval(annotation: &ScaleAnnotation, sse_mu: f64) -> EffectiveScale {
    match *annotation {
        ScaleAnnotation::Exact { value } => EffectiveScale {
            value: value.log10(),
            through_estimate: false,
        },
        ScaleAnnotation::Range { lo, hi } => EffectiveScale {
            value: 0.5 * (lo.log10() + hi.log10()),
            through_estimate: false,
        },
        ScaleAnnotation::Unknown => EffectiveScale {
            value: sse_mu,
            through_estimate: true,
        },
    }
}

/// Which branch of the inference resolver fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResolveBranch {
    Meta,
    Sse,
    Fallback,
}

impl ResolveBranch {
    pub fn name(self) -> &'static str {
        match self {
            ResolveBranch::Meta => "meta",
            ResolveBranch::Sse => "sse",
            ResolveBranch::Fallback => "fallback",
        }
    }
}

/// Inference-time resolution of the working GSD `g*`:
/// metadata when present and positive, the estimate when its sigma beats
/// the strict threshold, the neutral anchor otherwise.
pub fn resolve_inference(
    g_meta: Option<f64>,
    estimate: &ScaleEstimate,
    config: &ResolverConfig,
) -> (f64, ResolveBranch) {
    // non-positive metadata counts as absent
    match g_meta {
        Some(g) if g > 0.0 => (g, ResolveBranch::Meta),
        _ => {
            if estimate.sigma < config.sigma_tau {
                (10f64.powf(estimate.mu), ResolveBranch::Sse)
            } else {
                (config.g0, ResolveBranch::Fallback)
            }
        }
    }
}

/// Sensor-tag lookup table mapping source platforms to scale annotations.
/// Lookups are case-insensitive; unresolved tags map to Unknown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensorRegistry {
    entries: BTreeMap<String, ScaleAnnotation>,
}

impl Default for SensorRegistry {
    fn default() -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(
            "sentinel-2".to_string(),
            ScaleAnnotation::Exact { value: 10.0 },
        );
        entries.insert(
            "usgs-hro".to_string(),
            ScaleAnnotation::Exact { value: 0.15 },
        );
        SensorRegistry { entries }
    }
}

impl SensorRegistry {
    pub fn empty() -> Self {
        SensorRegistry {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, tag: &str, annotation: ScaleAnnotation) -> Result<(), ResolverError> {
        Self::check_entry(tag, &annotation, "<memory>")?;
        self.entries.insert(tag.to_lowercase(), annotation);
        Ok(())
    }

    fn check_entry(
        tag: &str,
        annotation: &ScaleAnnotation,
        path: &str,
    ) -> Result<(), ResolverError> {
        let bad = |cause: String| ResolverError::Registry {
            path: path.to_string(),
            cause,
        };
        if tag.trim().is_empty() {
            return Err(bad("empty sensor tag".to_string()));
        }
        match annotation {
            ScaleAnnotation::Unknown => Err(bad(format!(
                "tag '{tag}' maps to unknown; registry entries must be exact or range"
            ))),
            other => other
                .validate()
                .map_err(|e| bad(format!("tag '{tag}': {e}"))),
        }
    }

    /// Load a `{tag: annotation}` JSON map, layered over the defaults.
    pub fn load(path: &Path) -> Result<Self, ResolverError> {
        let text = std::fs::read_to_string(path).map_err(|e| ResolverError::Registry {
            path: path.display().to_string(),
            cause: e.to_string(),
        })?;
        let raw: BTreeMap<String, ScaleAnnotation> =
            serde_json::from_str(&text).map_err(|e| ResolverError::Registry {
                path: path.display().to_string(),
                cause: e.to_string(),
            })?;
        let mut reg = SensorRegistry::default();
        for (tag, annotation) in raw {
            Self::check_entry(&tag, &annotation, &path.display().to_string())?;
            reg.entries.insert(tag.to_lowercase(), annotation);
        }
        Ok(reg)
    }

    pub fn lookup(&self, tag: &str) -> Option<&ScaleAnnotation> {
        self.entries.get(&tag.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Data-side GSD injection: parse the sensor tag, look it up, attach the
/// registered annotation; anything unresolved stays Unknown.
pub fn inject_gsd(sensor: Option<&str>, registry: &SensorRegistry) -> ScaleAnnotation {
    sensor
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .and_then(|t| registry.lookup(t))
        .cloned()
        .unwrap_or(ScaleAnnotation::Unknown)
}
