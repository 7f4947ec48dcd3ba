//! Cluster assignment probabilities under the supported randomization designs.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use crate::data::TrialData;
use crate::error::{Error, Result};

/// R x m binary matrix of acceptable randomization schemes, one scheme per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemeMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<u8>,
}

impl SchemeMatrix {
    /// Validates that entries are 0/1, rows are equally long and distinct.
    pub fn new(rows: Vec<Vec<u8>>) -> Result<Self> {
        let r = rows.len();
        if r == 0 {
            return Err(Error::InvalidInput("scheme matrix has no rows".into()));
        }
        let cols = rows[0].len();
        if cols == 0 {
            return Err(Error::InvalidInput("scheme matrix has no columns".into()));
        }
        let mut seen = HashSet::with_capacity(r);
        let mut entries = Vec::with_capacity(r * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::InvalidInput(format!(
                    "scheme {} has {} entries, expected {cols}",
                    i + 1,
                    row.len()
                )));
            }
            if let Some(bad) = row.iter().find(|&&v| v > 1) {
                return Err(Error::InvalidInput(format!(
                    "scheme {} contains non-binary entry {bad}",
                    i + 1
                )));
            }
            if !seen.insert(row.as_slice()) {
                return Err(Error::InvalidInput(format!("scheme {} duplicates an earlier row", i + 1)));
            }
            entries.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols, entries })
    }

    /// Reads a CSV of 0/1 entries, one scheme per row.
    pub fn from_csv<R: Read>(reader: R, has_header: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(has_header)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| match f {
                    "0" => Ok(0u8),
                    "1" => Ok(1u8),
                    other => Err(Error::InvalidInput(format!(
                        "scheme matrix row {}: expected 0 or 1, found '{other}'",
                        i + 1
                    ))),
                })
                .collect::<Result<Vec<u8>>>()?;
            rows.push(row);
        }
        Self::new(rows)
    }

    pub fn n_schemes(&self) -> usize {
        self.rows
    }

    pub fn n_clusters(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.entries[r * self.cols..(r + 1) * self.cols]
    }

    /// Number of schemes assigning each cluster to treatment.
    pub fn column_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.cols];
        for r in 0..self.rows {
            for (c, &v) in counts.iter_mut().zip(self.row(r)) {
                *c += u64::from(v);
            }
        }
        counts
    }

    /// Column means, each computed as one exact integer count divided by R.
    pub fn column_means(&self) -> Vec<f64> {
        let r = self.rows as f64;
        self.column_counts().into_iter().map(|c| c as f64 / r).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RandomizationDesign {
    Simple(f64),
    Stratified(BTreeMap<String, f64>),
    PairMatched,
    /// Columns must follow the trial's cluster order.
    Constrained(SchemeMatrix),
}

impl RandomizationDesign {
    pub fn label(&self) -> &'static str {
        match self {
            RandomizationDesign::Simple(_) => "simple",
            RandomizationDesign::Stratified(_) => "stratified",
            RandomizationDesign::PairMatched => "pair_matched",
            RandomizationDesign::Constrained(_) => "constrained",
        }
    }
}

fn check_open_unit(p: f64, what: &str) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} probability {p} is not in (0,1)")))
    }
}

/// P(A_i = 1) for every cluster, in data order.
pub fn assignment_probabilities(design: &RandomizationDesign, data: &TrialData) -> Result<Vec<f64>> {
    assignment_probabilities_excluding(design, data, None)
}

/// Probabilities for the trial with cluster `exclude` deleted, returned in full
/// data order; the entry at `exclude` is left unchecked. Dropping a column of
/// the scheme matrix keeps both the other column counts and the number of
/// schemes, so every design yields the full-sample values restricted to i ≠ g.
pub fn assignment_probabilities_excluding(
    design: &RandomizationDesign,
    data: &TrialData,
    exclude: Option<usize>,
) -> Result<Vec<f64>> {
    let m = data.m();
    let probs = match design {
        RandomizationDesign::Simple(p) => {
            check_open_unit(*p, "simple randomization")?;
            vec![*p; m]
        }
        RandomizationDesign::PairMatched => vec![0.5; m],
        RandomizationDesign::Stratified(map) => {
            for (s, &p) in map {
                check_open_unit(p, &format!("stratum '{s}'"))?;
            }
            data.clusters
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if Some(i) == exclude {
                        return Ok(f64::NAN);
                    }
                    let s = c.stratum.as_deref().unwrap_or("");
                    map.get(s).copied().ok_or_else(|| Error::UnknownStratum {
                        stratum: s.to_owned(),
                        cluster_id: c.id.clone(),
                    })
                })
                .collect::<Result<Vec<f64>>>()?
        }
        RandomizationDesign::Constrained(t) => {
            if t.n_clusters() != m {
                return Err(Error::InvalidInput(format!(
                    "scheme matrix has {} columns but the trial has {m} clusters",
                    t.n_clusters()
                )));
            }
            t.column_means()
        }
    };
    for (i, &p) in probs.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Positivity { index: i + 1, cluster_id: data.clusters[i].id.clone() });
        }
    }
    Ok(probs)
}

/// True iff every cluster is treated in exactly half of the schemes.
pub fn balanced_constrained_check(design: &RandomizationDesign) -> Result<bool> {
    match design {
        RandomizationDesign::Constrained(t) => {
            let r = t.n_schemes() as u64;
            Ok(t.column_counts().into_iter().all(|c| 2 * c == r))
        }
        other => Err(Error::InvalidInput(format!(
            "balance check needs a constrained design, got {}",
            other.label()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClusterRecord;

    fn trial(m: usize) -> TrialData {
        let clusters = (0..m)
            .map(|i| ClusterRecord::new(format!("c{}", i + 1), i % 2 == 0, vec![1.0], vec![], vec![]))
            .collect();
        TrialData::new(clusters, 0, 0)
    }

    #[test]
    fn simple_design_is_constant() {
        let p = assignment_probabilities(&RandomizationDesign::Simple(0.5), &trial(4)).unwrap();
        assert_eq!(p, vec![0.5; 4]);
        assert!(assignment_probabilities(&RandomizationDesign::Simple(1.0), &trial(4)).is_err());
    }

    #[test]
    fn pair_matched_is_half() {
        let p = assignment_probabilities(&RandomizationDesign::PairMatched, &trial(3)).unwrap();
        assert_eq!(p, vec![0.5; 3]);
    }

    #[test]
    fn stratified_lookup_and_unknown_stratum() {
        let mut d = trial(3);
        d.clusters[0].stratum = Some("a".into());
        d.clusters[1].stratum = Some("b".into());
        d.clusters[2].stratum = Some("a".into());
        let map: BTreeMap<String, f64> = [("a".to_string(), 0.3), ("b".to_string(), 0.6)].into();
        let design = RandomizationDesign::Stratified(map.clone());
        assert_eq!(assignment_probabilities(&design, &d).unwrap(), vec![0.3, 0.6, 0.3]);
        d.clusters[1].stratum = Some("z".into());
        assert!(matches!(
            assignment_probabilities(&design, &d),
            Err(Error::UnknownStratum { .. })
        ));
    }

    #[test]
    fn constrained_symmetric_two_clusters() {
        let t = SchemeMatrix::new(vec![vec![1, 0], vec![0, 1]]).unwrap();
        let design = RandomizationDesign::Constrained(t);
        assert_eq!(assignment_probabilities(&design, &trial(2)).unwrap(), vec![0.5, 0.5]);
        assert!(balanced_constrained_check(&design).unwrap());
    }

    #[test]
    fn constrained_positivity_error_names_cluster_four() {
        let t = SchemeMatrix::new(vec![vec![1, 1, 0, 0], vec![1, 0, 1, 0], vec![0, 1, 1, 0]])
            .unwrap();
        assert_eq!(t.column_counts(), vec![2, 2, 2, 0]);
        let means = t.column_means();
        assert_eq!(means[0], 2.0 / 3.0);
        match assignment_probabilities(&RandomizationDesign::Constrained(t), &trial(4)) {
            Err(Error::Positivity { index, cluster_id }) => {
                assert_eq!(index, 4);
                assert_eq!(cluster_id, "c4");
            }
            other => panic!("expected positivity error, got {other:?}"),
        }
    }

    #[test]
    fn balanced_four_scheme_matrix() {
        let t = SchemeMatrix::new(vec![
            vec![1, 1, 0, 0],
            vec![0, 0, 1, 1],
            vec![1, 0, 1, 0],
            vec![0, 1, 0, 1],
        ])
        .unwrap();
        let design = RandomizationDesign::Constrained(t);
        assert!(balanced_constrained_check(&design).unwrap());
        let unbalanced =
            RandomizationDesign::Constrained(SchemeMatrix::new(vec![vec![1, 0], vec![1, 1]]).unwrap());
        assert!(!balanced_constrained_check(&unbalanced).unwrap());
    }

    #[test]
    fn duplicate_schemes_are_rejected() {
        assert!(SchemeMatrix::new(vec![vec![1, 0], vec![1, 0]]).is_err());
        assert!(SchemeMatrix::new(vec![vec![1, 2]]).is_err());
        assert!(SchemeMatrix::new(vec![vec![1, 0], vec![1]]).is_err());
    }

    #[test]
    fn csv_input_with_and_without_header() {
        let t = SchemeMatrix::from_csv("1,0,1\n0,1,1\n".as_bytes(), false).unwrap();
        assert_eq!(t.n_schemes(), 2);
        assert_eq!(t.column_means(), vec![0.5, 0.5, 1.0]);
        let t = SchemeMatrix::from_csv("a,b\n1,0\n0,1\n".as_bytes(), true).unwrap();
        assert_eq!(t.n_schemes(), 2);
        assert!(SchemeMatrix::from_csv("1,x\n".as_bytes(), false).is_err());
    }

    #[test]
    fn excluding_a_cluster_restricts_probabilities() {
        let t = SchemeMatrix::new(vec![vec![1, 1, 0, 0], vec![1, 0, 1, 0], vec![0, 1, 1, 0]])
            .unwrap();
        let design = RandomizationDesign::Constrained(t.clone());
        let p = assignment_probabilities_excluding(&design, &trial(4), Some(3)).unwrap();
        assert_eq!(&p[..3], &[2.0 / 3.0; 3]);
        // explicit recomputation on the reduced matrix
        let reduced: Vec<Vec<u8>> = (0..3).map(|r| t.row(r)[..3].to_vec()).collect();
        assert_eq!(SchemeMatrix::new(reduced).unwrap().column_means(), p[..3].to_vec());
        assert!(assignment_probabilities_excluding(&design, &trial(4), Some(0)).is_err());
    }

    #[test]
    fn wrong_column_count_is_rejected() {
        let t = SchemeMatrix::new(vec![vec![1, 0], vec![0, 1]]).unwrap();
        assert!(assignment_probabilities(&RandomizationDesign::Constrained(t), &trial(3)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn row_permutation_leaves_probabilities_unchanged(
                bits in proptest::collection::btree_set(0u32..256, 2..20),
                seed in any::<u64>(),
            ) {
                let rows: Vec<Vec<u8>> = bits
                    .iter()
                    .map(|b| (0..8).map(|k| ((b >> k) & 1) as u8).collect())
                    .collect();
                let mut shuffled = rows.clone();
                // deterministic Fisher-Yates driven by the seed
                let mut s = seed;
                for i in (1..shuffled.len()).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let j = (s >> 33) as usize % (i + 1);
                    shuffled.swap(i, j);
                }
                let a = SchemeMatrix::new(rows).unwrap().column_means();
                let b = SchemeMatrix::new(shuffled).unwrap().column_means();
                prop_assert_eq!(a, b);
            }
        }
    }
}
