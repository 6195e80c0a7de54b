//! Extrinsic clustering metrics: adjusted Rand index, adjusted mutual
//! information, homogeneity, completeness, and v-measure.
//!
//! All scores compare a predicted cluster assignment against ground-truth
//! classes, are invariant under relabeling of either side, and follow these
//! degenerate-case conventions so single-cluster results stay well defined:
//! homogeneity = 1 when the class partition is trivial, completeness = 1 when
//! the cluster partition is trivial, v-measure = 0 when hom + cmplt = 0, and
//! ARI/AMI = 1 when both partitions are trivial (hence identical).
//!
//! AMI is normalized by the arithmetic mean of the two entropies; expected
//! mutual information uses the exact hypergeometric sum.

use crate::error::{Error, Result};

/// Contingency table between true classes (rows) and predicted clusters
/// (columns), with row sums `a`, column sums `b`, and total `n`.
#[derive(Debug, Clone)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub n: f64,
}

impl ContingencyTable {
    pub fn build(truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::LengthMismatch {
                left: truth.len(),
                right: pred.len(),
            });
        }
        if truth.len() < 2 {
            return Err(Error::TooFewItems { n: truth.len() });
        }
        let relabel = |labels: &[usize]| -> (Vec<usize>, usize) {
            let mut distinct: Vec<usize> = labels.to_vec();
            distinct.sort_unstable();
            distinct.dedup();
            let dense: Vec<usize> = labels
                .iter()
                .map(|l| distinct.binary_search(l).expect("present"))
                .collect();
            (dense, distinct.len())
        };
        let (t, rows) = relabel(truth);
        let (p, cols) = relabel(pred);
        let mut counts = vec![vec![0f64; cols]; rows];
        for (&i, &j) in t.iter().zip(&p) {
            counts[i][j] += 1.0;
        }
        let a: Vec<f64> = counts.iter().map(|row| row.iter().sum()).collect();
        let b: Vec<f64> = (0..cols)
            .map(|j| counts.iter().map(|row| row[j]).sum())
            .collect();
        Ok(ContingencyTable {
            counts,
            a,
            b,
            n: truth.len() as f64,
        })
    }

    /// True when rows and columns pair off one-to-one, i.e. the two label
    /// sequences induce the same partition.
    fn is_identical_partition(&self) -> bool {
        self.counts.len() == self.b.len()
            && self
                .counts
                .iter()
                .all(|row| row.iter().filter(|&&c| c > 0.0).count() == 1)
            && (0..self.b.len())
                .all(|j| self.counts.iter().filter(|row| row[j] > 0.0).count() == 1)
    }
}

fn choose2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index in `[-1, 1]`; 1 for identical partitions, ~0 expected
/// under chance.
pub fn ari(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let table = ContingencyTable::build(truth, pred)?;
    let sum_comb: f64 = table
        .counts
        .iter()
        .flat_map(|row| row.iter())
        .map(|&c| choose2(c))
        .sum();
    let sum_a: f64 = table.a.iter().map(|&c| choose2(c)).sum();
    let sum_b: f64 = table.b.iter().map(|&c| choose2(c)).sum();
    let expected = sum_a * sum_b / choose2(table.n);
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom == 0.0 {
        // Both partitions trivial the same way (all-in-one or all singletons).
        return Ok(if table.is_identical_partition() { 1.0 } else { 0.0 });
    }
    Ok((sum_comb - expected) / denom)
}

fn entropy(counts: &[f64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

fn mutual_information(table: &ContingencyTable) -> f64 {
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0.0 {
                mi += (c / table.n) * ((table.n * c) / (table.a[i] * table.b[j])).ln();
            }
        }
    }
    mi
}

/// Expected mutual information under the hypergeometric permutation model
/// with both marginals fixed.
fn expected_mutual_information(table: &ContingencyTable) -> f64 {
    let n = table.n as usize;
    // ln(k!) for k in 0..=n.
    let mut ln_fact = vec![0f64; n + 1];
    for k in 1..=n {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    let nf = table.n;
    let mut emi = 0.0;
    for &ai in &table.a {
        for &bj in &table.b {
            let (ai_u, bj_u) = (ai as usize, bj as usize);
            let low = (ai_u + bj_u).saturating_sub(n).max(1);
            let high = ai_u.min(bj_u);
            for nij in low..=high {
                let nij_f = nij as f64;
                let term = (nij_f / nf) * ((nf * nij_f) / (ai * bj)).ln();
                let ln_weight = ln_fact[ai_u] + ln_fact[bj_u] + ln_fact[n - ai_u]
                    + ln_fact[n - bj_u]
                    - ln_fact[n]
                    - ln_fact[nij]
                    - ln_fact[ai_u - nij]
                    - ln_fact[bj_u - nij]
                    - ln_fact[n + nij - ai_u - bj_u];
                emi += term * ln_weight.exp();
            }
        }
    }
    emi
}

/// Adjusted mutual information with arithmetic-mean normalization.
pub fn ami(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let table = ContingencyTable::build(truth, pred)?;
    let h_true = entropy(&table.a, table.n);
    let h_pred = entropy(&table.b, table.n);
    if h_true == 0.0 && h_pred == 0.0 {
        // Both single-cluster: partitions are identical by construction.
        return Ok(1.0);
    }
    let mi = mutual_information(&table);
    let emi = expected_mutual_information(&table);
    let denom = 0.5 * (h_true + h_pred) - emi;
    if denom.abs() < 1e-15 {
        return Ok(if table.is_identical_partition() { 1.0 } else { 0.0 });
    }
    Ok((mi - emi) / denom)
}

/// Homogeneity, completeness, and their harmonic mean (v-measure), each in
/// `[0, 1]`.
pub fn homogeneity_completeness_v(truth: &[usize], pred: &[usize]) -> Result<(f64, f64, f64)> {
    let table = ContingencyTable::build(truth, pred)?;
    let h_true = entropy(&table.a, table.n);
    let h_pred = entropy(&table.b, table.n);

    // H(U|V): entropy of classes within each cluster.
    let mut h_true_given_pred = 0.0;
    let mut h_pred_given_true = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0.0 {
                h_true_given_pred -= (c / table.n) * (c / table.b[j]).ln();
                h_pred_given_true -= (c / table.n) * (c / table.a[i]).ln();
            }
        }
    }
    let hom = if h_true == 0.0 {
        1.0
    } else {
        1.0 - h_true_given_pred / h_true
    };
    let cmplt = if h_pred == 0.0 {
        1.0
    } else {
        1.0 - h_pred_given_true / h_pred
    };
    let vm = if hom + cmplt == 0.0 {
        0.0
    } else {
        2.0 * hom * cmplt / (hom + cmplt)
    };
    Ok((hom, cmplt, vm))
}

/// All five scores for one assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub ari: f64,
    pub ami: f64,
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
}

pub fn evaluate_assignment(truth: &[usize], pred: &[usize]) -> Result<MetricsReport> {
    let (homogeneity, completeness, v_measure) = homogeneity_completeness_v(truth, pred)?;
    Ok(MetricsReport {
        ari: ari(truth, pred)?,
        ami: ami(truth, pred)?,
        homogeneity,
        completeness,
        v_measure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identical_partitions_score_one() {
        let t = [0, 0, 1, 1, 2, 2];
        assert_abs_diff_eq!(ari(&t, &t).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ami(&t, &t).unwrap(), 1.0, epsilon = 1e-9);
        let (h, c, v) = homogeneity_completeness_v(&t, &t).unwrap();
        assert_abs_diff_eq!(h, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn relabeling_is_invisible() {
        assert_abs_diff_eq!(
            ari(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn discordant_pairs_give_negative_ari() {
        assert_abs_diff_eq!(
            ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(),
            -0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn single_cluster_prediction() {
        let truth = [0, 0, 1, 1];
        let pred = [0, 0, 0, 0];
        assert_abs_diff_eq!(ari(&truth, &pred).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ami(&truth, &pred).unwrap(), 0.0, epsilon = 1e-12);
        let (h, c, v) = homogeneity_completeness_v(&truth, &pred).unwrap();
        assert_abs_diff_eq!(h, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn both_trivial_partitions_are_identical() {
        assert_abs_diff_eq!(ami(&[0, 0, 0], &[5, 5, 5]).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ari(&[0, 0, 0], &[5, 5, 5]).unwrap(), 1.0, epsilon = 1e-12);
        // All singletons on both sides.
        assert_abs_diff_eq!(ari(&[0, 1, 2], &[2, 0, 1]).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pure_clusters_give_full_homogeneity() {
        // Each cluster holds a single class, but class 1 is split in two.
        let truth = [0, 0, 1, 1];
        let pred = [0, 1, 2, 2];
        let (h, c, v) = homogeneity_completeness_v(&truth, &pred).unwrap();
        assert_abs_diff_eq!(h, 1.0, epsilon = 1e-12);
        // H(V|U) computed directly: classes of size 2 split 1+1 and 2.
        // H(V) = -(1/4 ln 1/4)*2 - (1/2 ln 1/2); H(V|U) = 1/2 ln 2.
        let h_v: f64 = -(0.25f64.ln() * 0.25) * 2.0 - 0.5 * 0.5f64.ln();
        let expect_c = 1.0 - (0.5 * 2f64.ln()) / h_v;
        assert_abs_diff_eq!(c, expect_c, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 2.0 * h * c / (h + c), epsilon = 1e-12);
    }

    #[test]
    fn ami_zero_mean_under_random_labelings() {
        use rand::{RngExt, SeedableRng};
        let mut sum = 0.0;
        let trials = 100;
        for s in 0..trials {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(s);
            let truth: Vec<usize> = (0..50).map(|_| rng.random_range(0..4)).collect();
            let pred: Vec<usize> = (0..50).map(|_| rng.random_range(0..4)).collect();
            sum += ami(&truth, &pred).unwrap();
        }
        let mean = sum / trials as f64;
        assert!(mean.abs() < 0.05, "mean AMI over random pairs = {mean}");
    }

    #[test]
    fn symmetry_and_duality() {
        let a = [0, 0, 1, 1, 2, 2, 0, 1];
        let b = [0, 1, 1, 1, 2, 0, 0, 2];
        assert_abs_diff_eq!(ari(&a, &b).unwrap(), ari(&b, &a).unwrap(), epsilon = 1e-12);
        assert_abs_diff_eq!(ami(&a, &b).unwrap(), ami(&b, &a).unwrap(), epsilon = 1e-12);
        let (h_ab, c_ab, _) = homogeneity_completeness_v(&a, &b).unwrap();
        let (h_ba, c_ba, _) = homogeneity_completeness_v(&b, &a).unwrap();
        assert_abs_diff_eq!(h_ab, c_ba, epsilon = 1e-12);
        assert_abs_diff_eq!(c_ab, h_ba, epsilon = 1e-12);
    }

    #[test]
    fn length_mismatch_and_tiny_inputs_rejected() {
        assert!(matches!(
            ari(&[0, 1], &[0]),
            Err(Error::LengthMismatch { left: 2, right: 1 })
        ));
        assert!(matches!(ari(&[0], &[0]), Err(Error::TooFewItems { n: 1 })));
    }
}
