//! Evaluation metrics: confusion matrices, macro-averaged F1, and
//! multi-seed aggregation.
//!
//! Conventions, applied everywhere:
//!
//! * Confusion matrix rows index the true class, columns the predicted one.
//! * Per-class F1 is 0 whenever precision + recall is 0, so classes that
//!   are never predicted (or never occur) drag the macro average down
//!   rather than being silently dropped.
//! * Seed aggregation reports the mean and the sample standard deviation
//!   (n − 1 denominator).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// K×K integer contingency table of (true, predicted) class pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Result<ConfusionMatrix> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "a confusion matrix needs at least 2 classes, got {num_classes}"
            )));
        }
        Ok(ConfusionMatrix { k: num_classes, counts: vec![0; num_classes * num_classes] })
    }

    /// Build directly from paired label vectors.
    pub fn from_pairs(num_classes: usize, truth: &[usize], pred: &[usize]) -> Result<ConfusionMatrix> {
        if truth.len() != pred.len() {
            return Err(Error::Shape(format!(
                "label vectors differ in length: {} vs {}",
                truth.len(),
                pred.len()
            )));
        }
        let mut cm = ConfusionMatrix::new(num_classes)?;
        for (&t, &p) in truth.iter().zip(pred) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.k || pred >= self.k {
            return Err(Error::Data(format!(
                "class pair ({truth}, {pred}) out of range for {} classes",
                self.k
            )));
        }
        self.counts[truth * self.k + pred] += 1;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Rows of the table, for serialization and display.
    pub fn rows(&self) -> Vec<Vec<u64>> {
        (0..self.k).map(|t| self.counts[t * self.k..(t + 1) * self.k].to_vec()).collect()
    }

    /// Per-class F1 under the zero-division-is-zero rule.
    pub fn per_class_f1(&self) -> Result<Vec<f64>> {
        if self.total() == 0 {
            return Err(Error::Data("macro F1 is undefined on an empty confusion matrix".into()));
        }
        let mut out = Vec::with_capacity(self.k);
        for c in 0..self.k {
            let tp = self.get(c, c) as f64;
            let row: u64 = (0..self.k).map(|p| self.get(c, p)).sum();
            let col: u64 = (0..self.k).map(|t| self.get(t, c)).sum();
            let denom = (row + col) as f64; // (TP+FN) + (TP+FP) = P⁻¹ and R⁻¹ combined
            out.push(if denom == 0.0 { 0.0 } else { 2.0 * tp / denom });
        }
        Ok(out)
    }

    /// Unweighted mean of per-class F1 over all K classes.
    pub fn macro_f1(&self) -> Result<f64> {
        let f1 = self.per_class_f1()?;
        Ok(f1.iter().sum::<f64>() / self.k as f64)
    }

    /// Mean per-class recall (chance level 1/K for any constant predictor).
    pub fn balanced_accuracy(&self) -> Result<f64> {
        if self.total() == 0 {
            return Err(Error::Data(
                "balanced accuracy is undefined on an empty confusion matrix".into(),
            ));
        }
        let mut sum = 0.0;
        for c in 0..self.k {
            let tp = self.get(c, c) as f64;
            let row: u64 = (0..self.k).map(|p| self.get(c, p)).sum();
            if row > 0 {
                sum += tp / row as f64;
            }
        }
        Ok(sum / self.k as f64)
    }

    /// Aligned text rendering with marginal totals.
    pub fn render(&self) -> String {
        let width = self
            .counts
            .iter()
            .map(|c| c.to_string().len())
            .max()
            .unwrap_or(1)
            .max(4);
        let mut out = String::from("true \\ pred");
        for p in 0..self.k {
            out.push_str(&format!("  {:>width$}", p));
        }
        out.push('\n');
        for t in 0..self.k {
            out.push_str(&format!("{:>11}", t));
            for p in 0..self.k {
                out.push_str(&format!("  {:>width$}", self.get(t, p)));
            }
            out.push('\n');
        }
        out
    }
}

/// Mean and sample standard deviation (n − 1) of a metric over seeds.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Data("cannot aggregate an empty metric list".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1.0)).sqrt()
    };
    Ok((mean, std))
}

/// Lowercase hex SHA-256, used to fingerprint configs and manifests in
/// results files.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-seed evaluation record written into a run's results file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub confusion: Vec<Vec<u64>>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Aggregate results file for one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultsFile {
    pub config_hash: String,
    pub manifest_hash: String,
    pub per_seed: Vec<SeedResult>,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn from_rows(rows: &[&[u64]]) -> ConfusionMatrix {
        let k = rows.len();
        let mut cm = ConfusionMatrix::new(k).unwrap();
        for (t, row) in rows.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                for _ in 0..n {
                    cm.record(t, p).unwrap();
                }
            }
        }
        cm
    }

    #[test]
    fn perfect_diagonal_scores_one() {
        let cm = from_rows(&[&[7, 0], &[0, 9]]);
        assert_eq!(cm.macro_f1().unwrap(), 1.0);
    }

    #[test]
    fn hand_computed_two_class_case() {
        // y = [0,0,1,1], predictions [0,1,1,1]: class0 F1 = 2/3,
        // class1 F1 = 0.8, macro = 11/15.
        let cm = ConfusionMatrix::from_pairs(2, &[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
        let f1 = cm.per_class_f1().unwrap();
        assert!((f1[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((f1[1] - 0.8).abs() < 1e-15);
        assert!((cm.macro_f1().unwrap() - 11.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn frozen_three_class_case() {
        let cm = from_rows(&[&[5, 0, 0], &[0, 0, 2], &[1, 0, 3]]);
        let f1 = cm.per_class_f1().unwrap();
        assert_eq!(f1[0], 0.9090909090909091);
        assert_eq!(f1[1], 0.0);
        assert_eq!(f1[2], 0.6666666666666666);
        assert_eq!(cm.macro_f1().unwrap(), 0.5252525252525252);
    }

    #[test]
    fn absent_class_still_counts_in_the_mean() {
        // Same table embedded in K=4: the extra class has no truth and no
        // predictions, contributes F1 = 0, and shrinks the macro average.
        let cm = from_rows(&[&[5, 0, 0, 0], &[0, 0, 2, 0], &[1, 0, 3, 0], &[0, 0, 0, 0]]);
        assert_eq!(cm.macro_f1().unwrap(), 0.3939393939393939);
    }

    #[test]
    fn empty_matrix_is_an_error() {
        let cm = ConfusionMatrix::new(3).unwrap();
        assert!(matches!(cm.macro_f1().unwrap_err(), Error::Data(_)));
        assert!(matches!(cm.balanced_accuracy().unwrap_err(), Error::Data(_)));
    }

    #[test]
    fn fewer_than_two_classes_rejected() {
        assert!(matches!(ConfusionMatrix::new(1).unwrap_err(), Error::Config(_)));
    }

    #[test]
    fn out_of_range_labels_rejected() {
        let mut cm = ConfusionMatrix::new(2).unwrap();
        assert!(matches!(cm.record(2, 0).unwrap_err(), Error::Data(_)));
        assert!(matches!(cm.record(0, 5).unwrap_err(), Error::Data(_)));
    }

    #[test]
    fn macro_f1_is_invariant_under_consistent_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let k = rng.gen_range(2..6);
            let mut cm = ConfusionMatrix::new(k).unwrap();
            for _ in 0..rng.gen_range(5..60) {
                cm.record(rng.gen_range(0..k), rng.gen_range(0..k)).unwrap();
            }
            // Random permutation of class identities.
            let mut perm: Vec<usize> = (0..k).collect();
            for i in (1..k).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let mut relabeled = ConfusionMatrix::new(k).unwrap();
            for t in 0..k {
                for p in 0..k {
                    for _ in 0..cm.get(t, p) {
                        relabeled.record(perm[t], perm[p]).unwrap();
                    }
                }
            }
            let a = cm.macro_f1().unwrap();
            let b = relabeled.macro_f1().unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn collapsed_predictor_scores_below_balanced_accuracy() {
        // A predictor that always answers one class on balanced data: its
        // macro F1 (2/(K+1))/K is strictly below its balanced accuracy 1/K.
        for k in 2..8 {
            let mut cm = ConfusionMatrix::new(k).unwrap();
            for t in 0..k {
                for _ in 0..10 {
                    cm.record(t, 0).unwrap();
                }
            }
            let f1 = cm.macro_f1().unwrap();
            let ba = cm.balanced_accuracy().unwrap();
            assert!((ba - 1.0 / k as f64).abs() < 1e-15);
            assert!(f1 < ba, "K={k}: macro F1 {f1} not below balanced accuracy {ba}");
            let expect = 2.0 / (k as f64 + 1.0) / k as f64;
            assert!((f1 - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn aggregate_mean_and_sample_std() {
        let (m, s) = aggregate(&[1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!((m, s), (1.0, 0.0));

        let (m, s) = aggregate(&[0.0, 1.0]).unwrap();
        assert_eq!(m, 0.5);
        assert!((s - 0.7071067811865476).abs() < 1e-16);

        // Permutation invariance.
        let (m1, s1) = aggregate(&[0.3, 0.9, 0.6]).unwrap();
        let (m2, s2) = aggregate(&[0.9, 0.6, 0.3]).unwrap();
        assert!((m1 - m2).abs() < 1e-15);
        assert!((s1 - s2).abs() < 1e-15);

        // Single observation has zero spread by convention.
        assert_eq!(aggregate(&[0.42]).unwrap(), (0.42, 0.0));

        assert!(matches!(aggregate(&[]).unwrap_err(), Error::Data(_)));
    }

    #[test]
    fn sha256_matches_known_vector() {
        // FIPS 180-2 test vector for "abc".
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn render_contains_all_counts() {
        let cm = from_rows(&[&[5, 1], &[2, 7]]);
        let text = cm.render();
        for needle in ["5", "1", "2", "7"] {
            assert!(text.contains(needle), "{text}");
        }
        assert_eq!(cm.rows(), vec![vec![5, 1], vec![2, 7]]);
        assert_eq!(cm.total(), 15);
    }
}
