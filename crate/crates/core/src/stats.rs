//! Paired within-subject comparison of evaluative vs non-evaluative samples:
//! percentage change of normalized features and Wilcoxon signed-rank tests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{Context, Corpus};
use crate::error::{Error, Result};
use crate::featurize::{FeatureSet, NormalizationScaler, FEATURE_NAMES, N_FEATURES};

/// Largest number of nonzero differences for which the exact null
/// distribution is used.
pub const EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// min(W+, W-)
    pub w: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Two-sided p-value in (0, 1].
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub n_used: usize,
    pub exact: bool,
}

/// Average ranks (1-based) of `values`, ties sharing the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test on differences `y - x`.
///
/// Zero differences are dropped. Up to [`EXACT_MAX_N`] remaining pairs the
/// p-value is exact: ranks are multiples of 1/2, so the null distribution of
/// twice W+ is counted over integers by subset-sum dynamic programming. Above
/// that a tie-corrected normal approximation with continuity correction is used.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)]) -> Result<WilcoxonResult> {
    let diffs: Vec<f64> = pairs.iter().map(|(x, y)| y - x).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Err(Error::AllZeroDifferences);
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let w = w_plus.min(w_minus);

    let (p, exact) = if n <= EXACT_MAX_N {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max_sum: usize = doubled.iter().sum();
        let mut counts = vec![0u64; max_sum + 1];
        counts[0] = 1;
        let mut reach = 0;
        for &r in &doubled {
            for s in (0..=reach).rev() {
                if counts[s] > 0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let w2 = (2.0 * w).round() as usize;
        let tail: u64 = counts[..=w2].iter().sum();
        ((2.0 * tail as f64 / (1u64 << n) as f64).min(1.0), true)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie_term = 0.0;
        let mut sorted = abs.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            tie_term += t * t * t - t;
            i = j + 1;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let z = ((mean - w).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::standard();
        ((2.0 * (1.0 - normal.cdf(z))).min(1.0), false)
    };
    Ok(WilcoxonResult {
        w,
        w_plus,
        w_minus,
        p_value: p,
        n_used: n,
        exact,
    })
}

/// Normalized features of participants observed in both contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedFeatureTable {
    pub participants: Vec<String>,
    pub non_evaluative: Vec<[f64; N_FEATURES]>,
    pub evaluative: Vec<[f64; N_FEATURES]>,
}

impl PairedFeatureTable {
    /// Pair up dual-context participants, normalizing each sample with `scaler`.
    pub fn build(
        corpus: &Corpus,
        features: &[FeatureSet],
        scaler: &NormalizationScaler,
    ) -> Result<Self> {
        if features.len() != corpus.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows for {} samples",
                features.len(),
                corpus.len()
            )));
        }
        let mut by_participant: BTreeMap<&str, [Option<[f64; N_FEATURES]>; 2]> = BTreeMap::new();
        for (s, f) in corpus.samples.iter().zip(features) {
            let row: [f64; N_FEATURES] = scaler
                .apply(f)?
                .try_into()
                .map_err(|_| Error::ShapeMismatch("scaler width is not 17".into()))?;
            by_participant.entry(&s.participant_id).or_default()[s.context.index()] = Some(row);
        }
        let mut table = PairedFeatureTable {
            participants: Vec::new(),
            non_evaluative: Vec::new(),
            evaluative: Vec::new(),
        };
        for (p, rows) in by_participant {
            if let [Some(ne), Some(ev)] = rows {
                table.participants.push(p.to_string());
                table.non_evaluative.push(ne);
                table.evaluative.push(ev);
            }
        }
        debug_assert_eq!(Context::NonEvaluative.index(), 0);
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.participants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.participants.is_empty()
    }

    pub fn pairs(&self, feature: usize) -> Vec<(f64, f64)> {
        self.non_evaluative
            .iter()
            .zip(&self.evaluative)
            .map(|(a, b)| (a[feature], b[feature]))
            .collect()
    }
}

/// 100 * (mean_eval - mean_noneval) / mean_noneval per feature; `None` where
/// the non-evaluative mean is zero.
pub fn percent_change(table: &PairedFeatureTable) -> Vec<Option<f64>> {
    let n = table.len() as f64;
    (0..N_FEATURES)
        .map(|j| {
            if table.is_empty() {
                return None;
            }
            let m_ne = table.non_evaluative.iter().map(|r| r[j]).sum::<f64>() / n;
            let m_ev = table.evaluative.iter().map(|r| r[j]).sum::<f64>() / n;
            (m_ne != 0.0).then(|| 100.0 * (m_ev - m_ne) / m_ne)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRow {
    pub feature: String,
    pub pct_change: Option<f64>,
    pub p_value: Option<f64>,
    pub w: Option<f64>,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextReport {
    pub participants: usize,
    pub rows: Vec<ContextRow>,
}

impl ContextReport {
    pub fn row(&self, feature: &str) -> Option<&ContextRow> {
        self.rows.iter().find(|r| r.feature == feature)
    }

    /// CSV with columns feature, pct_change, p_value, n_pairs; undefined cells are `NA`.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        let mut out = String::from("feature,pct_change,p_value,n_pairs\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.feature,
                fmt(r.pct_change),
                fmt(r.p_value),
                r.n_pairs
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Percentage change and signed-rank test for every feature over
/// dual-context participants.
pub fn context_report(
    corpus: &Corpus,
    features: &[FeatureSet],
    scaler: &NormalizationScaler,
) -> Result<ContextReport> {
    let table = PairedFeatureTable::build(corpus, features, scaler)?;
    if table.len() < 2 {
        return Err(Error::NoPairedParticipants(table.len()));
    }
    let pct = percent_change(&table);
    let rows = FEATURE_NAMES
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let test = match wilcoxon_signed_rank(&table.pairs(j)) {
                Ok(t) => Some(t),
                Err(Error::AllZeroDifferences) => None,
                Err(e) => return Err(e),
            };
            Ok(ContextRow {
                feature: name.to_string(),
                pct_change: pct[j],
                p_value: test.map(|t| t.p_value),
                w: test.map(|t| t.w),
                n_pairs: test.map_or(0, |t| t.n_used),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ContextReport {
        participants: table.len(),
        rows,
    })
}

/// Fit the scaler on every sample of the corpus, then build the report.
pub fn context_report_all_samples(corpus: &Corpus, features: &[FeatureSet]) -> Result<ContextReport> {
    let scaler = NormalizationScaler::fit_features(features)?;
    context_report(corpus, features, &scaler)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force two-sided p: fraction of the 2^n sign patterns whose
    /// smaller rank sum is at most the observed one.
    fn enumerate_p(diffs: &[f64]) -> f64 {
        let d: Vec<f64> = diffs.iter().copied().filter(|x| *x != 0.0).collect();
        let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
        // independent tie-averaging: rank = (#smaller) + (#equal + 1) / 2
        let ranks: Vec<f64> = abs
            .iter()
            .map(|a| {
                let smaller = abs.iter().filter(|b| *b < a).count() as f64;
                let equal = abs.iter().filter(|b| *b == a).count() as f64;
                smaller + (equal + 1.0) / 2.0
            })
            .collect();
        let total: f64 = ranks.iter().sum();
        let obs_plus: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
        let obs = obs_plus.min(total - obs_plus);
        let n = d.len();
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let plus: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if plus.min(total - plus) <= obs + 1e-9 {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    fn from_diffs(d: &[f64]) -> Vec<(f64, f64)> {
        d.iter().map(|x| (0.0, *x)).collect()
    }

    #[test]
    fn all_positive_five() {
        let r = wilcoxon_signed_rank(&from_diffs(&[1.0, 2.0, 3.0, 4.0, 5.0])).unwrap();
        assert_eq!(r.w_minus, 0.0);
        assert_eq!(r.p_value, 0.0625);
        assert_eq!(enumerate_p(&[1.0, 2.0, 3.0, 4.0, 5.0]), 2.0 / 32.0);
    }

    #[test]
    fn tied_magnitudes() {
        let r = wilcoxon_signed_rank(&from_diffs(&[1.0, -1.0])).unwrap();
        assert_eq!(r.w, 1.5);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(enumerate_p(&[1.0, -1.0]), 1.0);
    }

    #[test]
    fn identical_pairs_error() {
        assert!(matches!(
            wilcoxon_signed_rank(&[(1.0, 1.0), (2.0, 2.0)]),
            Err(Error::AllZeroDifferences)
        ));
    }

    #[test]
    fn zeros_dropped() {
        let r = wilcoxon_signed_rank(&[(0.0, 0.0), (0.0, 1.0), (0.0, 2.0)]).unwrap();
        assert_eq!(r.n_used, 2);
    }

    #[test]
    fn large_n_uses_normal_approximation() {
        let d: Vec<f64> = (1..=30).map(|i| i as f64).collect();
        let r = wilcoxon_signed_rank(&from_diffs(&d)).unwrap();
        assert!(!r.exact);
        assert!(r.p_value < 1e-5);
        let mixed: Vec<f64> = (1..=30).map(|i| if i % 2 == 0 { i as f64 } else { -(i as f64) }).collect();
        assert!(wilcoxon_signed_rank(&from_diffs(&mixed)).unwrap().p_value > 0.5);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), [3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn percent_change_examples() {
        let mut ne = [0.0; N_FEATURES];
        let mut ev = [0.0; N_FEATURES];
        ne[0] = 0.5;
        ev[0] = 0.6;
        ne[1] = 0.5;
        ev[1] = 0.5;
        let t = PairedFeatureTable {
            participants: vec!["p".into()],
            non_evaluative: vec![ne],
            evaluative: vec![ev],
        };
        let pct = percent_change(&t);
        assert!((pct[0].unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(pct[1], Some(0.0));
        assert_eq!(pct[2], None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn exact_matches_enumeration(
            d in prop::collection::vec(-4i32..=4, 1..=12),
        ) {
            let diffs: Vec<f64> = d.iter().map(|&x| f64::from(x)).collect();
            prop_assume!(diffs.iter().any(|x| *x != 0.0));
            let r = wilcoxon_signed_rank(&from_diffs(&diffs)).unwrap();
            prop_assert!((r.p_value - enumerate_p(&diffs)).abs() <= 1e-12);
            prop_assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        }

        #[test]
        fn swap_invariance(
            pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..30),
        ) {
            let swapped: Vec<_> = pairs.iter().map(|(a, b)| (*b, *a)).collect();
            let a = wilcoxon_signed_rank(&pairs).unwrap();
            let b = wilcoxon_signed_rank(&swapped).unwrap();
            prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
        }

        #[test]
        fn mean_preserving_rows_keep_percent_change(
            rows in prop::collection::vec((0.1f64..1.0, 0.0f64..1.0), 2..10),
            extra in 1usize..5,
        ) {
            let mk = |v: f64| { let mut r = [0.5; N_FEATURES]; r[0] = v; r };
            let mut t = PairedFeatureTable {
                participants: rows.iter().enumerate().map(|(i, _)| i.to_string()).collect(),
                non_evaluative: rows.iter().map(|r| mk(r.0)).collect(),
                evaluative: rows.iter().map(|r| mk(r.1)).collect(),
            };
            let before = percent_change(&t)[0].unwrap();
            let n = rows.len() as f64;
            let m_ne = rows.iter().map(|r| r.0).sum::<f64>() / n;
            let m_ev = rows.iter().map(|r| r.1).sum::<f64>() / n;
            for i in 0..extra {
                t.participants.push(format!("x{i}"));
                t.non_evaluative.push(mk(m_ne));
                t.evaluative.push(mk(m_ev));
            }
            let after = percent_change(&t)[0].unwrap();
            prop_assert!((before - after).abs() <= 1e-9 * before.abs().max(1.0));
        }
    }
}
