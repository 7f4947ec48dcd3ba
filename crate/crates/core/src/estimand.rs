//! Estimand specifications: cluster weights and contrast functions.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{ClusterRecord, TrialData};
use crate::error::{Error, Result};

/// User-supplied weight as a function of a cluster's baseline attributes.
#[derive(Clone)]
pub struct CustomWeight(Arc<dyn Fn(&ClusterRecord) -> f64 + Send + Sync>);

impl CustomWeight {
    pub fn new(f: impl Fn(&ClusterRecord) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn eval(&self, c: &ClusterRecord) -> f64 {
        (self.0)(c)
    }
}

impl fmt::Debug for CustomWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomWeight(..)")
    }
}

/// How each cluster contributes to the target population.
#[derive(Debug, Clone)]
pub enum WeightScheme {
    /// Equal weight per cluster (cluster-average effect).
    Cluster,
    /// Weight proportional to cluster size (individual-average effect).
    Individual,
    /// Arbitrary nonnegative weight; always normalized by the weight total.
    Custom(CustomWeight),
    /// Indicator that cluster-level covariate `component` equals `value`.
    Subgroup { component: usize, value: f64 },
}

impl WeightScheme {
    pub fn label(&self) -> &'static str {
        match self {
            WeightScheme::Cluster => "cluster",
            WeightScheme::Individual => "individual",
            WeightScheme::Custom(_) => "custom",
            WeightScheme::Subgroup { .. } => "subgroup",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contrast {
    Difference,
    Ratio,
    LogRatio,
    LogOddsRatio,
}

impl Contrast {
    /// f(x, y).
    pub fn apply(self, mu1: f64, mu0: f64) -> Result<f64> {
        match self {
            Contrast::Difference => Ok(mu1 - mu0),
            Contrast::Ratio => {
                if mu0 == 0.0 {
                    return Err(Error::ContrastDomain("ratio with zero control mean".into()));
                }
                Ok(mu1 / mu0)
            }
            Contrast::LogRatio => {
                if !(mu1 > 0.0 && mu0 > 0.0) {
                    return Err(Error::ContrastDomain(format!(
                        "log ratio needs positive means, got ({mu1}, {mu0})"
                    )));
                }
                Ok((mu1 / mu0).ln())
            }
            Contrast::LogOddsRatio => {
                if !(mu1 > 0.0 && mu1 < 1.0 && mu0 > 0.0 && mu0 < 1.0) {
                    return Err(Error::ContrastDomain(format!(
                        "log odds ratio needs means in (0,1), got ({mu1}, {mu0})"
                    )));
                }
                Ok((mu1 * (1.0 - mu0) / (mu0 * (1.0 - mu1))).ln())
            }
        }
    }

    /// Gradient of f with respect to (mu1, mu0).
    pub fn gradient(self, mu1: f64, mu0: f64) -> Result<[f64; 2]> {
        self.apply(mu1, mu0)?;
        Ok(match self {
            Contrast::Difference => [1.0, -1.0],
            Contrast::Ratio => [1.0 / mu0, -mu1 / (mu0 * mu0)],
            Contrast::LogRatio => [1.0 / mu1, -1.0 / mu0],
            Contrast::LogOddsRatio => [1.0 / (mu1 * (1.0 - mu1)), -1.0 / (mu0 * (1.0 - mu0))],
        })
    }

    pub fn label(self) -> &'static str {
        match self {
            Contrast::Difference => "difference",
            Contrast::Ratio => "ratio",
            Contrast::LogRatio => "log_ratio",
            Contrast::LogOddsRatio => "log_odds_ratio",
        }
    }
}

/// Weight scheme plus contrast: defines one target estimand.
#[derive(Debug, Clone)]
pub struct EstimandSpec {
    pub weights: WeightScheme,
    pub contrast: Contrast,
}

impl EstimandSpec {
    pub fn new(weights: WeightScheme, contrast: Contrast) -> Self {
        Self { weights, contrast }
    }

    pub fn cluster(contrast: Contrast) -> Self {
        Self::new(WeightScheme::Cluster, contrast)
    }

    pub fn individual(contrast: Contrast) -> Self {
        Self::new(WeightScheme::Individual, contrast)
    }
}

/// A contrast evaluated on the standardized means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContrastValue {
    pub estimate: f64,
    pub scale: Contrast,
}

/// Cluster weights and their total.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub values: Vec<f64>,
    pub total: f64,
}

impl Weights {
    /// Weights restricted to the clusters other than `g`.
    pub fn without(&self, g: usize) -> Weights {
        let values: Vec<f64> = self
            .values
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != g)
            .map(|(_, &w)| w)
            .collect();
        let total = values.iter().sum();
        Weights { values, total }
    }
}

pub fn weights(data: &TrialData, scheme: &WeightScheme) -> Result<Weights> {
    let mut values = Vec::with_capacity(data.m());
    for c in &data.clusters {
        let w = match scheme {
            WeightScheme::Cluster => 1.0,
            WeightScheme::Individual => c.size as f64,
            WeightScheme::Custom(f) => f.eval(c),
            WeightScheme::Subgroup { component, value } => {
                let h = c.cluster_covariates.get(*component).ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "subgroup component {component} out of range for cluster '{}'",
                        c.id
                    ))
                })?;
                if *h == *value {
                    1.0
                } else {
                    0.0
                }
            }
        };
        if !w.is_finite() || w < 0.0 {
            return Err(Error::NegativeWeight { cluster_id: c.id.clone(), value: w });
        }
        values.push(w);
    }
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptyWeightedPopulation);
    }
    Ok(Weights { values, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClusterRecord;

    fn trial(sizes: &[usize], h: &[f64]) -> TrialData {
        let clusters = sizes
            .iter()
            .zip(h)
            .enumerate()
            .map(|(i, (&n, &h))| {
                ClusterRecord::new(format!("c{i}"), i % 2 == 0, vec![0.0; n], vec![], vec![h])
            })
            .collect();
        TrialData::new(clusters, 0, 1)
    }

    #[test]
    fn cluster_weights_are_ones() {
        let w = weights(&trial(&[1, 2, 3], &[0.0; 3]), &WeightScheme::Cluster).unwrap();
        assert_eq!(w.values, vec![1.0, 1.0, 1.0]);
        assert_eq!(w.total, 3.0);
    }

    #[test]
    fn individual_weights_are_sizes() {
        let w = weights(&trial(&[10, 20, 30], &[0.0; 3]), &WeightScheme::Individual).unwrap();
        assert_eq!(w.values, vec![10.0, 20.0, 30.0]);
        assert_eq!(w.total, 60.0);
    }

    #[test]
    fn subgroup_weights_are_indicators() {
        let d = trial(&[4, 5, 6], &[1.0, 0.0, 1.0]);
        let w = weights(&d, &WeightScheme::Subgroup { component: 0, value: 1.0 }).unwrap();
        assert_eq!(w.values, vec![1.0, 0.0, 1.0]);
        assert_eq!(w.total, 2.0);
    }

    #[test]
    fn empty_population_and_negative_weights_fail() {
        let d = trial(&[4, 5], &[0.0, 0.0]);
        assert!(matches!(
            weights(&d, &WeightScheme::Subgroup { component: 0, value: 1.0 }),
            Err(Error::EmptyWeightedPopulation)
        ));
        let neg = WeightScheme::Custom(CustomWeight::new(|c| if c.size == 5 { -1.0 } else { 1.0 }));
        assert!(matches!(weights(&d, &neg), Err(Error::NegativeWeight { .. })));
    }

    #[test]
    fn contrasts() {
        assert_eq!(Contrast::Difference.apply(4.0, 2.0).unwrap(), 2.0);
        assert_eq!(Contrast::LogOddsRatio.apply(0.5, 0.5).unwrap(), 0.0);
        // 0.6*0.6 / (0.4*0.4) = 2.25
        let lor = Contrast::LogOddsRatio.apply(0.6, 0.4).unwrap();
        assert!((lor - 2.25f64.ln()).abs() < 1e-15);
        assert!((lor - 0.81093).abs() < 1e-5);
        assert!(Contrast::LogOddsRatio.apply(1.2, 0.4).is_err());
        assert!(Contrast::Ratio.apply(1.0, 0.0).is_err());
        assert!(Contrast::LogRatio.apply(-1.0, 1.0).is_err());
    }

    #[test]
    fn null_contrast_identities() {
        for x in [0.1, 0.37, 0.5, 0.93] {
            assert_eq!(Contrast::Difference.apply(x, x).unwrap(), 0.0);
            assert_eq!(Contrast::LogRatio.apply(x, x).unwrap(), 0.0);
            assert_eq!(Contrast::LogOddsRatio.apply(x, x).unwrap(), 0.0);
            assert_eq!(Contrast::Ratio.apply(x, x).unwrap(), 1.0);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (a, b) = (0.62, 0.31);
        let h = 1e-6;
        for c in [Contrast::Difference, Contrast::Ratio, Contrast::LogRatio, Contrast::LogOddsRatio] {
            let g = c.gradient(a, b).unwrap();
            let d1 = (c.apply(a + h, b).unwrap() - c.apply(a - h, b).unwrap()) / (2.0 * h);
            let d0 = (c.apply(a, b + h).unwrap() - c.apply(a, b - h).unwrap()) / (2.0 * h);
            assert!((g[0] - d1).abs() < 1e-6, "{c:?}");
            assert!((g[1] - d0).abs() < 1e-6, "{c:?}");
        }
    }
}
