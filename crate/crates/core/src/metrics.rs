//! Classification metrics: accuracy, support-weighted precision/recall/F1,
//! Cohen's kappa, and the adjusted Rand index used by clustering tests.

use ndarray::Array2;

use crate::error::{Error, Result};

/// C x C confusion counts; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub counts: Array2<u64>,
}

impl ConfusionMatrix {
    pub fn class_count(&self) -> usize {
        self.counts.nrows()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn is_diagonal(&self) -> bool {
        let c = self.class_count();
        (0..c).all(|i| (0..c).all(|j| i == j || self.counts[[i, j]] == 0))
    }
}

/// The paper-style evaluation row. Weighted variants use true-class support
/// as weights.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub kappa: f64,
}

impl MetricsReport {
    /// Fixed CSV column order shared by every report artifact.
    pub const CSV_HEADER: &'static str =
        "accuracy,weighted_precision,weighted_recall,weighted_f1,kappa";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.accuracy, self.weighted_precision, self.weighted_recall, self.weighted_f1, self.kappa
        )
    }
}

/// Tallies counts[t][p] over paired label vectors.
pub fn confusion(truths: &[usize], predictions: &[usize], class_count: usize) -> Result<ConfusionMatrix> {
    if truths.len() != predictions.len() {
        return Err(Error::Shape(format!(
            "{} truths vs {} predictions",
            truths.len(),
            predictions.len()
        )));
    }
    if class_count == 0 {
        return Err(Error::Data("confusion: class_count must be >= 1".into()));
    }
    let mut counts = Array2::zeros((class_count, class_count));
    for (&t, &p) in truths.iter().zip(predictions.iter()) {
        if t >= class_count || p >= class_count {
            return Err(Error::Data(format!(
                "label pair ({t}, {p}) out of range for {class_count} classes"
            )));
        }
        counts[[t, p]] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Computes the five-metric report. Conventions for empty denominators:
/// per-class precision/recall are 0 when undefined, F1 is 0 when both are 0,
/// and kappa is 0 when the chance agreement p_e equals 1.
pub fn report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("metrics report: empty confusion matrix".into()));
    }
    let c = cm.class_count();
    let n = total as f64;
    let mut row_sum = vec![0u64; c];
    let mut col_sum = vec![0u64; c];
    let mut trace = 0u64;
    for i in 0..c {
        for j in 0..c {
            row_sum[i] += cm.counts[[i, j]];
            col_sum[j] += cm.counts[[i, j]];
        }
        trace += cm.counts[[i, i]];
    }

    let accuracy = trace as f64 / n;
    let mut weighted_precision = 0.0;
    let mut weighted_recall = 0.0;
    let mut weighted_f1 = 0.0;
    for class in 0..c {
        let tp = cm.counts[[class, class]] as f64;
        let support = row_sum[class] as f64;
        let predicted = col_sum[class] as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if support > 0.0 { tp / support } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let weight = support / n;
        weighted_precision += weight * precision;
        weighted_recall += weight * recall;
        weighted_f1 += weight * f1;
    }

    let p_o = accuracy;
    let p_e: f64 = (0..c).map(|i| (row_sum[i] as f64 / n) * (col_sum[i] as f64 / n)).sum();
    let kappa = if p_e == 1.0 { 0.0 } else { (p_o - p_e) / (1.0 - p_e) };

    Ok(MetricsReport { accuracy, weighted_precision, weighted_recall, weighted_f1, kappa })
}

/// Adjusted Rand index between two partitions of the same items. Labels may
/// be arbitrary ids; only the partition structure matters.
pub fn adjusted_rand(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::Shape(format!(
            "partition lengths {} vs {}",
            labels_a.len(),
            labels_b.len()
        )));
    }
    let n = labels_a.len();
    if n < 2 {
        return Err(Error::Data("adjusted rand: need at least 2 items".into()));
    }
    let compact = |labels: &[usize]| -> Vec<usize> {
        let mut ids: Vec<usize> = Vec::new();
        labels
            .iter()
            .map(|&l| match ids.iter().position(|&known| known == l) {
                Some(pos) => pos,
                None => {
                    ids.push(l);
                    ids.len() - 1
                }
            })
            .collect()
    };
    let a = compact(labels_a);
    let b = compact(labels_b);
    let ca = a.iter().max().unwrap() + 1;
    let cb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0u64; cb]; ca];
    for (&x, &y) in a.iter().zip(b.iter()) {
        table[x][y] += 1;
    }
    let choose2 = |v: u64| -> f64 { (v as f64) * (v as f64 - 1.0) / 2.0 };
    let sum_cells: f64 = table.iter().flatten().map(|&v| choose2(v)).sum();
    let sum_a: f64 = (0..ca)
        .map(|i| choose2(table[i].iter().sum::<u64>()))
        .sum();
    let sum_b: f64 = (0..cb)
        .map(|j| choose2((0..ca).map(|i| table[i][j]).sum::<u64>()))
        .sum();
    let expected = sum_a * sum_b / choose2(n as u64);
    let max_index = (sum_a + sum_b) / 2.0;
    if max_index == expected {
        // Both partitions are structurally identical (e.g. both trivial):
        // perfect agreement by convention.
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / (max_index - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng;
    use rand::Rng;

    #[test]
    fn confusion_counts_directly() {
        let cm = confusion(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(cm.counts, ndarray::arr2(&[[1, 1], [0, 1]]));
        assert!(confusion(&[], &[], 3).unwrap().counts.iter().all(|&v| v == 0));
        assert!(confusion(&[2], &[0], 2).is_err());
        assert!(confusion(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let cm = confusion(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        let m = report(&cm).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.weighted_precision, 1.0);
        assert_eq!(m.weighted_recall, 1.0);
        assert_eq!(m.weighted_f1, 1.0);
        assert_eq!(m.kappa, 1.0);
    }

    #[test]
    fn constant_predictor_on_balanced_truth_has_zero_kappa() {
        // n of each class, all predicted class 0: p_o = p_e = 0.5.
        let truths: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let preds = vec![0usize; 20];
        let m = report(&confusion(&truths, &preds, 2).unwrap()).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert!(m.kappa.abs() < 1e-15);
    }

    #[test]
    fn single_class_agreement_uses_kappa_zero_convention() {
        let m = report(&confusion(&[1, 1, 1], &[1, 1, 1], 2).unwrap()).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.kappa, 0.0); // p_e = 1 corner
    }

    #[test]
    fn report_rejects_empty_matrix() {
        let cm = confusion(&[], &[], 2).unwrap();
        assert!(report(&cm).is_err());
    }

    /// Independent per-sample recomputation of all five metrics.
    fn brute_force(truths: &[usize], preds: &[usize], c: usize) -> MetricsReport {
        let n = truths.len() as f64;
        let hits = truths.iter().zip(preds).filter(|(t, p)| t == p).count() as f64;
        let mut wp = 0.0;
        let mut wr = 0.0;
        let mut wf = 0.0;
        for class in 0..c {
            let tp = truths
                .iter()
                .zip(preds)
                .filter(|(&t, &p)| t == class && p == class)
                .count() as f64;
            let support = truths.iter().filter(|&&t| t == class).count() as f64;
            let predicted = preds.iter().filter(|&&p| p == class).count() as f64;
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = if support > 0.0 { tp / support } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            wp += support / n * precision;
            wr += support / n * recall;
            wf += support / n * f1;
        }
        let p_o = hits / n;
        let p_e: f64 = (0..c)
            .map(|class| {
                let support = truths.iter().filter(|&&t| t == class).count() as f64;
                let predicted = preds.iter().filter(|&&p| p == class).count() as f64;
                (support / n) * (predicted / n)
            })
            .sum();
        let kappa = if p_e == 1.0 { 0.0 } else { (p_o - p_e) / (1.0 - p_e) };
        MetricsReport {
            accuracy: p_o,
            weighted_precision: wp,
            weighted_recall: wr,
            weighted_f1: wf,
            kappa,
        }
    }

    #[test]
    fn report_matches_brute_force_recomputation() {
        let mut r = rng(100);
        for _ in 0..300 {
            let c = r.random_range(2..=4);
            let n = r.random_range(1..=40);
            let truths: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
            let preds: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
            let got = report(&confusion(&truths, &preds, c).unwrap()).unwrap();
            let want = brute_force(&truths, &preds, c);
            for (g, w) in [
                (got.accuracy, want.accuracy),
                (got.weighted_precision, want.weighted_precision),
                (got.weighted_recall, want.weighted_recall),
                (got.weighted_f1, want.weighted_f1),
                (got.kappa, want.kappa),
            ] {
                assert!((g - w).abs() < 1e-12, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn metrics_invariant_under_class_permutation() {
        let truths = vec![0, 1, 2, 2, 1, 0, 2];
        let preds = vec![0, 2, 2, 1, 1, 0, 2];
        let perm = [2usize, 0, 1];
        let pt: Vec<usize> = truths.iter().map(|&t| perm[t]).collect();
        let pp: Vec<usize> = preds.iter().map(|&p| perm[p]).collect();
        let base = report(&confusion(&truths, &preds, 3).unwrap()).unwrap();
        let permuted = report(&confusion(&pt, &pp, 3).unwrap()).unwrap();
        for (a, b) in [
            (base.accuracy, permuted.accuracy),
            (base.weighted_precision, permuted.weighted_precision),
            (base.weighted_recall, permuted.weighted_recall),
            (base.weighted_f1, permuted.weighted_f1),
            (base.kappa, permuted.kappa),
        ] {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adjusted_rand_anchors() {
        let a = vec![0, 0, 1, 1, 2, 2];
        assert_eq!(adjusted_rand(&a, &a).unwrap(), 1.0);
        // Relabeled copy: still 1.
        let relabeled = vec![5, 5, 9, 9, 7, 7];
        assert_eq!(adjusted_rand(&a, &relabeled).unwrap(), 1.0);
        // One cluster vs all singletons on N=10: 0.
        let one = vec![0usize; 10];
        let singletons: Vec<usize> = (0..10).collect();
        assert_eq!(adjusted_rand(&one, &singletons).unwrap(), 0.0);
        assert!(adjusted_rand(&[0], &[0]).is_err());
        assert!(adjusted_rand(&[0, 1], &[0]).is_err());
    }
}
