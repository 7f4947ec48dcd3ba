//! Trial data model: clusters of individuals with a cluster-level treatment.

use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

/// One randomized cluster.
///
/// `covariates` is row-major with `size` rows and one column per
/// individual-level covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRecord {
    pub id: String,
    pub treated: bool,
    pub size: usize,
    pub outcomes: Vec<f64>,
    pub covariates: Vec<f64>,
    pub cluster_covariates: Vec<f64>,
    pub stratum: Option<String>,
}

impl ClusterRecord {
    /// Builds a record whose declared size equals the number of outcomes.
    pub fn new(
        id: impl Into<String>,
        treated: bool,
        outcomes: Vec<f64>,
        covariates: Vec<f64>,
        cluster_covariates: Vec<f64>,
    ) -> Self {
        Self {
            id: id.into(),
            treated,
            size: outcomes.len(),
            outcomes,
            covariates,
            cluster_covariates,
            stratum: None,
        }
    }

    pub fn with_stratum(mut self, stratum: impl Into<String>) -> Self {
        self.stratum = Some(stratum.into());
        self
    }

    pub fn arm(&self) -> u8 {
        u8::from(self.treated)
    }

    /// Individual-level covariate row `j`.
    pub fn covariate_row(&self, j: usize, p: usize) -> &[f64] {
        &self.covariates[j * p..(j + 1) * p]
    }
}

/// A complete trial: ordered clusters plus the covariate dimensions.
///
/// Cluster order is significant. It is preserved from input and is the
/// deletion order used by every jackknife.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialData {
    pub clusters: Vec<ClusterRecord>,
    /// Number of individual-level covariates (p).
    pub p: usize,
    /// Number of cluster-level covariates (q).
    pub q: usize,
}

impl TrialData {
    pub fn new(clusters: Vec<ClusterRecord>, p: usize, q: usize) -> Self {
        Self { clusters, p, q }
    }

    pub fn m(&self) -> usize {
        self.clusters.len()
    }

    pub fn total_individuals(&self) -> usize {
        self.clusters.iter().map(|c| c.size).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.size).collect()
    }

    /// Copy of the trial without cluster `g`.
    pub fn without(&self, g: usize) -> TrialData {
        let clusters = self
            .clusters
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != g)
            .map(|(_, c)| c.clone())
            .collect();
        TrialData::new(clusters, self.p, self.q)
    }

    /// Returns an error carrying every violation when validation fails.
    pub fn ensure_valid(&self) -> Result<()> {
        let violations = validate(self);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(violations))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    NoClusters,
    NoTreatedClusters,
    NoControlClusters,
    EmptyCluster,
    RowCountMismatch { declared: usize, outcomes: usize },
    CovariateShape { expected: usize, found: usize },
    ClusterCovariateShape { expected: usize, found: usize },
    NonFiniteValue { field: String },
    DuplicateClusterId,
    InconsistentTreatment,
    ClusterCovariateNotConstant,
    /// Treatment value other than 0 or 1.
    InvalidTreatment { value: String },
    Unparseable { field: String, value: String },
    /// Leave-one-cluster-out inference needs at least two clusters per arm.
    SingleClusterArm { treated: bool },
}

/// One invariant violation, with the offending cluster when applicable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub cluster_id: Option<String>,
    /// Input line (1-based, header included) when the violation came from a file.
    pub line: Option<usize>,
    pub kind: ViolationKind,
}

impl Violation {
    pub fn new(cluster_id: Option<&str>, kind: ViolationKind) -> Self {
        Self { cluster_id: cluster_id.map(str::to_owned), line: None, kind }
    }

    pub fn at_line(mut self, line: usize) -> Self {
        self.line = Some(line);
        self
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if let Some(id) = &self.cluster_id {
            write!(f, "cluster '{id}': ")?;
        }
        match &self.kind {
            ViolationKind::NoClusters => write!(f, "no clusters"),
            ViolationKind::NoTreatedClusters => write!(f, "no treated clusters"),
            ViolationKind::NoControlClusters => write!(f, "no control clusters"),
            ViolationKind::EmptyCluster => write!(f, "empty cluster"),
            ViolationKind::RowCountMismatch { declared, outcomes } => write!(
                f,
                "row count mismatch: declared size {declared} but {outcomes} outcome rows"
            ),
            ViolationKind::CovariateShape { expected, found } => write!(
                f,
                "individual covariate matrix has {found} entries, expected {expected}"
            ),
            ViolationKind::ClusterCovariateShape { expected, found } => write!(
                f,
                "cluster covariate vector has {found} entries, expected {expected}"
            ),
            ViolationKind::NonFiniteValue { field } => {
                write!(f, "missing or non-finite value in {field}")
            }
            ViolationKind::DuplicateClusterId => write!(f, "duplicate cluster id"),
            ViolationKind::InconsistentTreatment => {
                write!(f, "treatment varies within the cluster")
            }
            ViolationKind::ClusterCovariateNotConstant => {
                write!(f, "cluster-level covariate varies within the cluster")
            }
            ViolationKind::InvalidTreatment { value } => {
                write!(f, "treatment must be 0 or 1, found '{value}'")
            }
            ViolationKind::SingleClusterArm { treated } => {
                let arm = if *treated { "treated" } else { "control" };
                write!(f, "only one {arm} cluster; the jackknife needs at least two per arm")
            }
            ViolationKind::Unparseable { field, value } => {
                write!(f, "cannot parse '{value}' in column '{field}' as a number")
            }
        }
    }
}

/// Reports every invariant violation. Never mutates `data`.
pub fn validate(data: &TrialData) -> Vec<Violation> {
    let mut out = Vec::new();
    if data.clusters.is_empty() {
        out.push(Violation::new(None, ViolationKind::NoClusters));
        return out;
    }
    let mut seen = HashSet::new();
    for c in &data.clusters {
        let id = Some(c.id.as_str());
        if !seen.insert(c.id.as_str()) {
            out.push(Violation::new(id, ViolationKind::DuplicateClusterId));
        }
        if c.size == 0 {
            out.push(Violation::new(id, ViolationKind::EmptyCluster));
        }
        if c.outcomes.len() != c.size {
            out.push(Violation::new(
                id,
                ViolationKind::RowCountMismatch { declared: c.size, outcomes: c.outcomes.len() },
            ));
        }
        let expected = c.size * data.p;
        if c.covariates.len() != expected {
            out.push(Violation::new(
                id,
                ViolationKind::CovariateShape { expected, found: c.covariates.len() },
            ));
        }
        if c.cluster_covariates.len() != data.q {
            out.push(Violation::new(
                id,
                ViolationKind::ClusterCovariateShape {
                    expected: data.q,
                    found: c.cluster_covariates.len(),
                },
            ));
        }
        for (field, values) in [
            ("outcomes", &c.outcomes),
            ("individual covariates", &c.covariates),
            ("cluster covariates", &c.cluster_covariates),
        ] {
            if values.iter().any(|v| !v.is_finite()) {
                out.push(Violation::new(
                    id,
                    ViolationKind::NonFiniteValue { field: field.to_owned() },
                ));
            }
        }
    }
    if !data.clusters.iter().any(|c| c.treated) {
        out.push(Violation::new(None, ViolationKind::NoTreatedClusters));
    }
    if !data.clusters.iter().any(|c| !c.treated) {
        out.push(Violation::new(None, ViolationKind::NoControlClusters));
    }
    out
}

/// Per-cluster averages used by every estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    pub ybar: f64,
    pub xbar: Vec<f64>,
    pub n: usize,
    pub treated: bool,
    pub h: Vec<f64>,
}

pub fn summarize_cluster(c: &ClusterRecord, p: usize) -> Result<ClusterSummary> {
    if c.outcomes.is_empty() {
        return Err(Error::InvalidInput(format!("cluster '{}' is empty", c.id)));
    }
    let n = c.outcomes.len();
    let ybar = c.outcomes.iter().sum::<f64>() / n as f64;
    let mut xbar = vec![0.0; p];
    for j in 0..n {
        for (acc, v) in xbar.iter_mut().zip(c.covariate_row(j, p)) {
            *acc += v;
        }
    }
    for v in &mut xbar {
        *v /= n as f64;
    }
    Ok(ClusterSummary { ybar, xbar, n, treated: c.treated, h: c.cluster_covariates.clone() })
}

/// One summary per cluster, in input order.
pub fn summarize(data: &TrialData) -> Result<Vec<ClusterSummary>> {
    data.clusters.iter().map(|c| summarize_cluster(c, data.p)).collect()
}

/// Builds clusters from individual-level rows, grouping by id in order of
/// first appearance. Treatment that varies within a cluster is reported as
/// a violation rather than silently resolved.
#[derive(Debug, Default)]
pub struct LongFormatBuilder {
    p: usize,
    q: usize,
    order: Vec<String>,
    index: std::collections::HashMap<String, usize>,
    clusters: Vec<ClusterRecord>,
    violations: Vec<Violation>,
}

/// One individual row for [`LongFormatBuilder`].
#[derive(Debug, Clone)]
pub struct LongRow<'a> {
    pub line: usize,
    pub cluster_id: &'a str,
    pub treated: bool,
    pub outcome: f64,
    pub covariates: &'a [f64],
    pub cluster_covariates: &'a [f64],
    pub stratum: Option<&'a str>,
}

impl LongFormatBuilder {
    pub fn new(p: usize, q: usize) -> Self {
        Self { p, q, ..Default::default() }
    }

    pub fn push(&mut self, row: LongRow<'_>) {
        let idx = match self.index.get(row.cluster_id) {
            Some(&i) => i,
            None => {
                let i = self.clusters.len();
                self.index.insert(row.cluster_id.to_owned(), i);
                self.order.push(row.cluster_id.to_owned());
                self.clusters.push(ClusterRecord {
                    id: row.cluster_id.to_owned(),
                    treated: row.treated,
                    size: 0,
                    outcomes: Vec::new(),
                    covariates: Vec::new(),
                    cluster_covariates: row.cluster_covariates.to_vec(),
                    stratum: row.stratum.map(str::to_owned),
                });
                i
            }
        };
        let c = &mut self.clusters[idx];
        if c.treated != row.treated {
            self.violations.push(
                Violation::new(Some(row.cluster_id), ViolationKind::InconsistentTreatment)
                    .at_line(row.line),
            );
        }
        if c.cluster_covariates.as_slice() != row.cluster_covariates {
            self.violations.push(
                Violation::new(Some(row.cluster_id), ViolationKind::ClusterCovariateNotConstant)
                    .at_line(row.line),
            );
        }
        c.size += 1;
        c.outcomes.push(row.outcome);
        c.covariates.extend_from_slice(row.covariates);
    }

    /// Finishes the build, returning the data and any row-level violations
    /// (structural validation still has to be run on the result).
    pub fn finish(self) -> (TrialData, Vec<Violation>) {
        (TrialData::new(self.clusters, self.p, self.q), self.violations)
    }
}
