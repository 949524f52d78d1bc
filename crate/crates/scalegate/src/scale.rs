//! Physical scale: ground-sampling-distance annotations, log10 conversion,
//! tier assignment, geometric-mean collapse of ranges.

use serde::{Deserialize, Serialize};

use crate::error::ScaleError;

/// Tier boundaries in meters/pixel, lower-inclusive: `[0.2, 1.0)` is Mid.
pub const TIER_BOUNDARY_HIGH_MID: f64 = 0.2;
pub const TIER_BOUNDARY_MID_LOW: f64 = 1.0;

/// Three-state ground-sampling-distance label, meters/pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScaleAnnotation {
    Exact { value: f64 },
    Range { lo: f64, hi: f64 },
    Unknown,
}

impl ScaleAnnotation {
    pub fn exact(value: f64) -> Result<Self, ScaleError> {
        if !(value.is_finite() && value > 0.0) {
            return Err(ScaleError::NonPositive(value));
        }
        Ok(ScaleAnnotation::Exact { value })
    }

    pub fn range(lo: f64, hi: f64) -> Result<Self, ScaleError> {
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(ScaleError::BadRange { lo, hi });
        }
        Ok(ScaleAnnotation::Range { lo, hi })
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, ScaleAnnotation::Exact { .. })
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, ScaleAnnotation::Unknown)
    }

    /// Check the invariants of a deserialized annotation.
    pub fn validate(&self) -> Result<(), ScaleError> {
        match *self {
            ScaleAnnotation::Exact { value } => {
                if !(value.is_finite() && value > 0.0) {
                    return Err(ScaleError::NonPositive(value));
                }
            }
            ScaleAnnotation::Range { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                    return Err(ScaleError::BadRange { lo, hi });
                }
            }
            ScaleAnnotation::Unknown => {}
        }
        Ok(())
    }
}

/// Scale regime of a sample. High is finest (sub-0.2 m), Low coarsest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    High,
    Mid,
    Low,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::High, Tier::Mid, Tier::Low];

    pub fn name(self) -> &'static str {
        match self {
            Tier::High => "high",
            Tier::Mid => "mid",
            Tier::Low => "low",
        }
    }
}

/// `s = log10(g)` for a ground sampling distance in meters/pixel.
pub fn to_log_scale(g: f64) -> Result<f64, ScaleError> {
    if !(g.is_finite() && g > 0.0) {
        return Err(ScaleError::NonPositive(g));
    }
    Ok(g.log10())
}

/// Inverse of [`to_log_scale`].
pub fn from_log_scale(s: f64) -> f64 {
    10f64.powf(s)
}

fn tier_of_gsd(g: f64) -> Tier {
    if g < TIER_BOUNDARY_HIGH_MID {
        Tier::High
    } else if g < TIER_BOUNDARY_MID_LOW {
        Tier::Mid
    } else {
        Tier::Low
    }
}

/// Tier of an annotation. Ranges collapse by geometric mean; Unknown has none.
pub fn assign_tier(annotation: &ScaleAnnotation) -> Result<Tier, ScaleError> {
    match *annotation {
        ScaleAnnotation::Exact { value } => {
            if !(value.is_finite() && value > 0.0) {
                return Err(ScaleError::NonPositive(value));
            }
            Ok(tier_of_gsd(value))
        }
        ScaleAnnotation::Range { lo, hi } => {
            if !(lo > 0.0 && lo <= hi) {
                return Err(ScaleError::BadRange { lo, hi });
            }
            Ok(tier_of_gsd((lo * hi).sqrt()))
        }
        ScaleAnnotation::Unknown => Err(ScaleError::NoTier),
    }
}

/// Log-space midpoint `0.5*(log10(lo) + log10(hi))` of a range.
pub fn range_midpoint_log(lo: f64, hi: f64) -> Result<f64, ScaleError> {
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
        return Err(ScaleError::BadRange { lo, hi });
    }
    Ok(0.5 * (lo.log10() + hi.log10()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_scale_values() {
        assert_eq!(to_log_scale(1.0).unwrap(), 0.0);
        assert!((to_log_scale(0.15).unwrap() - (-0.8239)).abs() < 1e-4);
        assert_eq!(to_log_scale(10.0).unwrap(), 1.0);
        assert!(to_log_scale(0.0).is_err());
        assert!(to_log_scale(-2.0).is_err());
        assert!(to_log_scale(f64::NAN).is_err());
    }

    #[test]
    fn tier_boundaries_lower_inclusive() {
        let t = |g: f64| assign_tier(&ScaleAnnotation::exact(g).unwrap()).unwrap();
        assert_eq!(t(0.15), Tier::High);
        assert_eq!(t(0.5), Tier::Mid);
        assert_eq!(t(5.0), Tier::Low);
        assert_eq!(t(0.2), Tier::Mid);
        assert_eq!(t(1.0), Tier::Low);
    }

    #[test]
    fn range_tier_uses_geometric_mean() {
        let r = ScaleAnnotation::range(1.0, 10.0).unwrap();
        // sqrt(10) ~ 3.162 -> Low
        assert_eq!(assign_tier(&r).unwrap(), Tier::Low);
    }

    #[test]
    fn unknown_has_no_tier() {
        assert!(matches!(
            assign_tier(&ScaleAnnotation::Unknown),
            Err(ScaleError::NoTier)
        ));
    }

    #[test]
    fn midpoint_values() {
        assert_eq!(range_midpoint_log(1.0, 10.0).unwrap(), 0.5);
        assert_eq!(range_midpoint_log(3.7, 3.7).unwrap(), 3.7f64.log10());
        assert!((range_midpoint_log(0.01, 30.0).unwrap() - (-0.2614)).abs() < 1e-4);
        assert!(range_midpoint_log(10.0, 1.0).is_err());
    }

    #[test]
    fn annotation_json_encoding() {
        let e = ScaleAnnotation::exact(0.15).unwrap();
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"kind":"exact","value":0.15}"#
        );
        let r = ScaleAnnotation::range(1.0, 10.0).unwrap();
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"kind":"range","lo":1.0,"hi":10.0}"#
        );
        assert_eq!(
            serde_json::to_string(&ScaleAnnotation::Unknown).unwrap(),
            r#"{"kind":"unknown"}"#
        );
        for json in [
            r#"{"kind":"exact","value":0.15}"#,
            r#"{"kind":"range","lo":1.0,"hi":10.0}"#,
            r#"{"kind":"unknown"}"#,
        ] {
            let a: ScaleAnnotation = serde_json::from_str(json).unwrap();
            assert_eq!(serde_json::to_string(&a).unwrap(), json);
        }
    }
}
