//! Model-robust test for informative cluster size.
//!
//! Under H₀ the cluster-average and individual-average effects coincide on
//! the chosen scale. D̂ = f(μ̂_C) − f(μ̂_I) is compared with its jackknife
//! standard error; one working-model refit per deletion serves both estimators.

use serde::{Deserialize, Serialize};

use crate::data::{summarize, TrialData};
use crate::estimand::{weights, Contrast, WeightScheme};
use crate::error::{Error, Result};
use crate::inference::{jackknife_variance, loo_means, refit_paths, t_two_sided_p, RefitPaths, RefitPolicy};
use crate::models::ModelSpec;
use crate::randomization::{assignment_probabilities, RandomizationDesign};
use crate::standardization::weighted_means;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcsScale {
    /// μ(1) − μ(0)
    Difference,
    /// log μ(1) − log μ(0)
    LogRatio,
    /// logit μ(1) − logit μ(0), for binary outcomes.
    Logit,
}

impl IcsScale {
    pub fn contrast(self) -> Contrast {
        match self {
            IcsScale::Difference => Contrast::Difference,
            IcsScale::LogRatio => Contrast::LogRatio,
            IcsScale::Logit => Contrast::LogOddsRatio,
        }
    }

    /// The scale on which a contrast is compared: ratios are tested on the log scale.
    pub fn for_contrast(c: Contrast) -> IcsScale {
        match c {
            Contrast::Difference => IcsScale::Difference,
            Contrast::Ratio | Contrast::LogRatio => IcsScale::LogRatio,
            Contrast::LogOddsRatio => IcsScale::Logit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IcsTestResult {
    pub scale: IcsScale,
    pub delta_c: f64,
    pub delta_i: f64,
    /// Δ̂_C − Δ̂_I on the test scale.
    pub d_hat: f64,
    /// Jackknife variance of D̂.
    pub v_hat: f64,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    #[serde(skip)]
    pub d_loo: Vec<f64>,
    pub refit_failures: Vec<String>,
}

/// Tests H₀: Δ_C = Δ_I with the given working model.
pub fn ics_test(
    data: &TrialData,
    design: &RandomizationDesign,
    model: &ModelSpec,
    scale: IcsScale,
    policy: RefitPolicy,
) -> Result<IcsTestResult> {
    data.ensure_valid().map_err(|e| e.at_stage("validate"))?;
    let probs = assignment_probabilities(design, data).map_err(|e| e.at_stage("randomization"))?;
    let paths = refit_paths(model, data, policy).map_err(|e| e.at_stage("fit"))?;
    ics_from_paths(data, design, &probs, &paths, scale)
}

/// The test from precomputed refits.
pub fn ics_from_paths(
    data: &TrialData,
    design: &RandomizationDesign,
    probs: &[f64],
    paths: &RefitPaths,
    scale: IcsScale,
) -> Result<IcsTestResult> {
    let m = data.m();
    if m < 3 {
        return Err(Error::TooFewClusters { need: 3, got: m });
    }
    let f = scale.contrast();
    let wc = weights(data, &WeightScheme::Cluster)?;
    let wi = weights(data, &WeightScheme::Individual)?;
    let (c1, c0) = weighted_means(&paths.summaries, &wc.values, probs, &paths.full_predictions, None)?;
    let (i1, i0) = weighted_means(&paths.summaries, &wi.values, probs, &paths.full_predictions, None)?;
    let delta_c = f.apply(c1, c0)?;
    let delta_i = f.apply(i1, i0)?;
    let d_hat = delta_c - delta_i;

    let loo_c = loo_means(data, design, paths, &wc)?;
    let loo_i = loo_means(data, design, paths, &wi)?;
    let d_loo: Vec<f64> = loo_c
        .iter()
        .zip(&loo_i)
        .map(|(c, i)| Ok(f.apply(c[0], c[1])? - f.apply(i[0], i[1])?))
        .collect::<Result<_>>()?;
    let v_hat = jackknife_variance(&d_loo);

    let (statistic, p_value) = if v_hat > 0.0 {
        let t = d_hat / v_hat.sqrt();
        (t, t_two_sided_p(t, (m - 1) as f64))
    } else if d_hat == 0.0 {
        (0.0, 1.0)
    } else {
        return Err(Error::DegenerateJackknife);
    };
    if !statistic.is_finite() {
        return Err(Error::NonFinite(format!("test statistic {statistic}")));
    }
    Ok(IcsTestResult {
        scale,
        delta_c,
        delta_i,
        d_hat,
        v_hat,
        statistic,
        df: m - 1,
        p_value,
        d_loo,
        refit_failures: paths.refit_failures.clone(),
    })
}

/// Sample covariance between N_i and the cluster's inverse-probability
/// weighted difference contribution A_i Ȳ_i/π_i − (1 − A_i) Ȳ_i/(1 − π_i).
/// Descriptive only; defined on the difference scale.
pub fn ics_covariance_diagnostic(data: &TrialData, design: &RandomizationDesign) -> Result<f64> {
    let probs = assignment_probabilities(design, data)?;
    let summaries = summarize(data)?;
    let m = summaries.len();
    if m < 2 {
        return Err(Error::TooFewClusters { need: 2, got: m });
    }
    let contrib: Vec<f64> = summaries
        .iter()
        .zip(&probs)
        .map(|(s, &p)| if s.treated { s.ybar / p } else { -s.ybar / (1.0 - p) })
        .collect();
    let sizes: Vec<f64> = summaries.iter().map(|s| s.n as f64).collect();
    Ok(sample_covariance(&sizes, &contrib))
}

fn sample_covariance(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClusterRecord;
    use crate::estimand::EstimandSpec;
    use crate::standardization::{estimate, EstimateOptions};

    fn cluster(id: usize, t: bool, y: Vec<f64>) -> ClusterRecord {
        ClusterRecord::new(format!("c{id}"), t, y, vec![], vec![])
    }

    fn equal_sizes() -> TrialData {
        let ys = [1.3, 2.1, 0.4, 3.3, 1.9, 2.8, 0.7, 1.1];
        TrialData::new(
            ys.iter()
                .enumerate()
                .map(|(i, &y)| cluster(i, i % 2 == 0, vec![y, y * 0.5 + 1.0, 2.0 - y]))
                .collect(),
            0,
            0,
        )
    }

    fn informative() -> TrialData {
        TrialData::new(
            vec![
                cluster(1, true, vec![5.0; 8]),
                cluster(2, true, vec![2.0, 3.0]),
                cluster(3, true, vec![6.0; 10]),
                cluster(4, false, vec![1.0, 1.5, 0.5]),
                cluster(5, false, vec![1.0; 7]),
                cluster(6, false, vec![0.2, 0.4]),
                cluster(7, true, vec![1.0]),
            ],
            0,
            0,
        )
    }

    #[test]
    fn equal_sizes_give_exact_zero() {
        let d = equal_sizes();
        for model in [ModelSpec::null(), ModelSpec::cluster_lm(false), ModelSpec::lmm(false)] {
            let r = ics_test(&d, &RandomizationDesign::Simple(0.5), &model, IcsScale::Difference, RefitPolicy::Error)
                .unwrap();
            assert_eq!(r.d_hat, 0.0);
            assert_eq!(r.statistic, 0.0);
            assert_eq!(r.p_value, 1.0);
        }
        let diag = ics_covariance_diagnostic(&d, &RandomizationDesign::Simple(0.5)).unwrap();
        assert_eq!(diag, 0.0);
    }

    #[test]
    fn shared_fit_matches_separate_pipelines() {
        let d = informative();
        let design = RandomizationDesign::Simple(0.5);
        let model = ModelSpec::cluster_lm(false);
        let r = ics_test(&d, &design, &model, IcsScale::Difference, RefitPolicy::Error).unwrap();
        let c = estimate(&d, &design, &model, &EstimandSpec::cluster(Contrast::Difference), EstimateOptions::default())
            .unwrap();
        let i = estimate(&d, &design, &model, &EstimandSpec::individual(Contrast::Difference), EstimateOptions::default())
            .unwrap();
        assert!((r.d_hat - (c.estimate - i.estimate)).abs() < 1e-12);
        // the deletion values come from the same refits
        for (g, dg) in r.d_loo.iter().enumerate() {
            let expect = c.jackknife.contrast_loo[g] - i.jackknife.contrast_loo[g];
            assert!((dg - expect).abs() < 1e-12);
        }
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        assert_eq!(r.df, 6);
    }

    #[test]
    fn statistic_is_invariant_to_relabeling() {
        let d = informative();
        let mut rev = d.clone();
        rev.clusters.reverse();
        let design = RandomizationDesign::Simple(0.5);
        let model = ModelSpec::cluster_lm(false);
        let a = ics_test(&d, &design, &model, IcsScale::Difference, RefitPolicy::Error).unwrap();
        let b = ics_test(&rev, &design, &model, IcsScale::Difference, RefitPolicy::Error).unwrap();
        assert!((a.statistic - b.statistic).abs() < 1e-10);
    }

    #[test]
    fn logit_scale_requires_probabilities() {
        let d = informative();
        let r = ics_test(&d, &RandomizationDesign::Simple(0.5), &ModelSpec::null(), IcsScale::Logit, RefitPolicy::Error);
        assert!(r.is_err());
    }

    #[test]
    fn covariance_diagnostic_hand_oracle() {
        let d = TrialData::new(
            vec![
                cluster(1, true, vec![2.0; 4]),
                cluster(2, true, vec![1.0; 2]),
                cluster(3, false, vec![3.0; 6]),
                cluster(4, false, vec![1.0; 8]),
            ],
            0,
            0,
        );
        // contributions with π = 0.5: 4, 2, −6, −2; sizes 4, 2, 6, 8
        // means 5 and −0.5; cov = [(−1)(4.5) + (−3)(2.5) + 1(−5.5) + 3(−1.5)]/3 = −22/3
        let v = ics_covariance_diagnostic(&d, &RandomizationDesign::Simple(0.5)).unwrap();
        assert!((v + 22.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn constant_contributions_give_zero_covariance() {
        let d = TrialData::new(
            vec![
                cluster(1, true, vec![1.0; 3]),
                cluster(2, true, vec![1.0; 5]),
                cluster(3, false, vec![-1.0; 2]),
                cluster(4, false, vec![-1.0; 7]),
            ],
            0,
            0,
        );
        let v = ics_covariance_diagnostic(&d, &RandomizationDesign::Simple(0.5)).unwrap();
        assert_eq!(v, 0.0);
    }
}
