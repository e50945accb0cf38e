use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Classification quality of one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub loss: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Averages over classes with nonzero support.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl MetricsReport {
    pub fn from_predictions(predicted: &[usize], actual: &[usize], classes: usize, loss: f64) -> Self {
        assert_eq!(predicted.len(), actual.len(), "prediction/label count mismatch");
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (&p, &a) in predicted.iter().zip(actual) {
            confusion[a][p] += 1;
        }
        Self::from_confusion(confusion, loss)
    }

    pub fn from_confusion(confusion: Vec<Vec<u64>>, loss: f64) -> Self {
        let classes = confusion.len();
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class: Vec<ClassMetrics> = (0..classes)
            .map(|c| {
                let tp = confusion[c][c] as f64;
                let support: u64 = confusion[c].iter().sum();
                let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
                let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
                let recall = if support > 0 { tp / support as f64 } else { 0.0 };
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassMetrics {
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect();
        let supported: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
        let mean = |f: fn(&ClassMetrics) -> f64| {
            if supported.is_empty() {
                0.0
            } else {
                supported.iter().map(|m| f(m)).sum::<f64>() / supported.len() as f64
            }
        };
        Self {
            accuracy: if total > 0 { correct as f64 / total as f64 } else { 0.0 },
            loss,
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            per_class,
            confusion,
        }
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_two_class_case() {
        let r = MetricsReport::from_confusion(vec![vec![8, 2], vec![4, 6]], 0.0);
        assert_eq!(r.accuracy, 0.7);
        assert_eq!(r.per_class[0].precision, 8.0 / 12.0);
        assert_eq!(r.per_class[0].recall, 0.8);
        let f0 = 2.0 * (8.0 / 12.0) * 0.8 / (8.0 / 12.0 + 0.8);
        let f1 = 2.0 * 0.75 * 0.6 / (0.75 + 0.6);
        assert!((r.macro_f1 - (f0 + f1) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 2, 1];
        let r = MetricsReport::from_predictions(&y, &y, 3, 0.0);
        assert_eq!((r.accuracy, r.macro_f1), (1.0, 1.0));
        assert_eq!(r.confusion, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
    }

    #[test]
    fn single_supported_class() {
        let r = MetricsReport::from_predictions(&[1, 1], &[1, 1], 3, 0.0);
        assert_eq!((r.accuracy, r.macro_precision, r.macro_f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }
}
