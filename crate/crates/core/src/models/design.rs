//! Design-matrix layouts for cluster-level and individual-level working models.
//!
//! Column order is fixed: intercept, treatment, then (when adjusted) the
//! covariate blocks, with cluster size last. The treatment column is always
//! index 1.

use serde::{Deserialize, Serialize};

use crate::data::{ClusterRecord, ClusterSummary};

/// Index of the treatment indicator in every layout.
pub const TREATMENT_COLUMN: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    /// One row per cluster: (1, A, X̄, H, N).
    Cluster,
    /// One row per individual: (1, A, X − X̄, X̄, H, N).
    Individual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DesignLayout {
    pub level: Level,
    pub p: usize,
    pub q: usize,
    pub adjusted: bool,
    pub include_size: bool,
}

impl DesignLayout {
    pub fn dim(&self) -> usize {
        if !self.adjusted {
            return 2;
        }
        let within = if self.level == Level::Individual { self.p } else { 0 };
        2 + within + self.p + self.q + usize::from(self.include_size)
    }

    fn fill_between(&self, s: &ClusterSummary, out: &mut [f64]) {
        let mut k = 0;
        out[k..k + self.p].copy_from_slice(&s.xbar);
        k += self.p;
        out[k..k + self.q].copy_from_slice(&s.h);
        k += self.q;
        if self.include_size {
            out[k] = s.n as f64;
        }
    }

    /// Cluster-level row at arm `a`; for individual layouts this is the mean
    /// of the individual rows, with the within-cluster block exactly zero.
    pub fn mean_row(&self, s: &ClusterSummary, a: u8, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        out[0] = 1.0;
        out[1] = f64::from(a);
        if !self.adjusted {
            return;
        }
        match self.level {
            Level::Cluster => self.fill_between(s, &mut out[2..]),
            Level::Individual => {
                out[2..2 + self.p].iter_mut().for_each(|v| *v = 0.0);
                self.fill_between(s, &mut out[2 + self.p..]);
            }
        }
    }

    /// Individual row `j` of cluster `c` at its observed arm.
    pub fn individual_row(&self, c: &ClusterRecord, s: &ClusterSummary, j: usize, out: &mut [f64]) {
        debug_assert_eq!(self.level, Level::Individual);
        out[0] = 1.0;
        out[1] = f64::from(c.arm());
        if !self.adjusted {
            return;
        }
        let x = c.covariate_row(j, self.p);
        for k in 0..self.p {
            out[2 + k] = x[k] - s.xbar[k];
        }
        self.fill_between(s, &mut out[2 + self.p..]);
    }

    /// All individual rows of a cluster, row-major.
    pub fn individual_rows(&self, c: &ClusterRecord, s: &ClusterSummary) -> Vec<f64> {
        let d = self.dim();
        let mut rows = vec![0.0; c.size * d];
        for j in 0..c.size {
            self.individual_row(c, s, j, &mut rows[j * d..(j + 1) * d]);
        }
        rows
    }
}
