//! Evaluation surface: top-K accuracy, reciprocal average rank, confusion
//! matrices, and per-class precision/recall/F1, plus the per-level report.
//!
//! Ranking ties always break toward the smaller class index so every metric
//! is deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-document class scores at one taxonomy level.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    classes: usize,
    scores: Vec<f64>,
    targets: Vec<usize>,
}

impl ScoreMatrix {
    pub fn new(classes: usize) -> Self {
        ScoreMatrix {
            classes,
            scores: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn push_row(&mut self, scores: &[f64], target: usize) -> Result<()> {
        if scores.len() != self.classes {
            return Err(Error::ShapeMismatch {
                op: "score_matrix",
                detail: format!("row has {} scores, expected {}", scores.len(), self.classes),
            });
        }
        if target >= self.classes {
            return Err(Error::TargetOutOfRange {
                index: target,
                classes: self.classes,
            });
        }
        self.scores.extend_from_slice(scores);
        self.targets.push(target);
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn rows(&self) -> usize {
        self.targets.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.classes..(i + 1) * self.classes]
    }

    pub fn target(&self, i: usize) -> usize {
        self.targets[i]
    }

    /// Argmax with ties to the smaller index — the rank-1 class.
    pub fn prediction(&self, i: usize) -> usize {
        let row = self.row(i);
        let mut best = 0;
        for (j, &s) in row.iter().enumerate().skip(1) {
            if s > row[best] {
                best = j;
            }
        }
        best
    }

    pub fn predictions(&self) -> Vec<usize> {
        (0..self.rows()).map(|i| self.prediction(i)).collect()
    }
}

/// 1-based position of `target` when classes are ordered by descending score,
/// equal scores ordered by ascending class index.
pub fn rank_of_target(row: &[f64], target: usize) -> usize {
    let t = row[target];
    let mut rank = 1;
    for (j, &s) in row.iter().enumerate() {
        if s > t || (s == t && j < target) {
            rank += 1;
        }
    }
    rank
}

pub fn topk_accuracy(m: &ScoreMatrix, k: usize) -> Result<f64> {
    if k == 0 || k > m.classes() {
        return Err(Error::KOutOfRange {
            k,
            classes: m.classes(),
        });
    }
    if m.rows() == 0 {
        return Err(Error::EmptyScores);
    }
    let hits = (0..m.rows())
        .filter(|&i| rank_of_target(m.row(i), m.target(i)) <= k)
        .count();
    Ok(hits as f64 / m.rows() as f64)
}

/// Reciprocal of the mean rank — not mean reciprocal rank.
pub fn reciprocal_average_rank(m: &ScoreMatrix) -> Result<f64> {
    if m.rows() == 0 {
        return Err(Error::EmptyScores);
    }
    let total: usize = (0..m.rows())
        .map(|i| rank_of_target(m.row(i), m.target(i)))
        .sum();
    Ok(m.rows() as f64 / total as f64)
}

/// Row i = true class, column j = predicted class.
pub fn confusion_matrix(
    predictions: &[usize],
    targets: &[usize],
    class_count: usize,
) -> Result<Vec<usize>> {
    assert_eq!(predictions.len(), targets.len(), "one prediction per target");
    let mut matrix = vec![0usize; class_count * class_count];
    for (&p, &t) in predictions.iter().zip(targets) {
        for &ix in [p, t].iter() {
            if ix >= class_count {
                return Err(Error::TargetOutOfRange {
                    index: ix,
                    classes: class_count,
                });
            }
        }
        matrix[t * class_count + p] += 1;
    }
    Ok(matrix)
}

/// Rows rescaled to sum to 1; all-zero rows stay zero.
pub fn row_normalize(matrix: &[usize], class_count: usize) -> Vec<f64> {
    let mut out = vec![0.0; matrix.len()];
    for i in 0..class_count {
        let row = &matrix[i * class_count..(i + 1) * class_count];
        let total: usize = row.iter().sum();
        if total > 0 {
            for (j, &v) in row.iter().enumerate() {
                out[i * class_count + j] = v as f64 / total as f64;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// One-vs-rest precision/recall/F1 per class; every 0/0 collapses to 0.
pub fn per_class_prf(
    predictions: &[usize],
    targets: &[usize],
    class_count: usize,
) -> Result<Vec<ClassPrf>> {
    let matrix = confusion_matrix(predictions, targets, class_count)?;
    let mut out = Vec::with_capacity(class_count);
    for c in 0..class_count {
        let tp = matrix[c * class_count + c];
        let support: usize = matrix[c * class_count..(c + 1) * class_count].iter().sum();
        let predicted: usize = (0..class_count).map(|i| matrix[i * class_count + c]).sum();
        let precision = if predicted > 0 { tp as f64 / predicted as f64 } else { 0.0 };
        let recall = if support > 0 { tp as f64 / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        out.push(ClassPrf { precision, recall, f1, support });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub level: usize,
    pub classes: usize,
    pub documents: usize,
    pub top1: f64,
    pub top5: Option<f64>,
    pub top10: Option<f64>,
    /// Absent for models that rank only a handful of classes (the vote
    /// baseline), where a full ranking is not meaningful.
    pub rar: Option<f64>,
    pub confusion: Vec<usize>,
    pub per_class: Vec<ClassPrf>,
    /// How many predictions form a parent-consistent chain across levels;
    /// filled by the caller when all three levels are available.
    pub chain_consistent: Option<usize>,
}

/// Full report for one level. Top-5/Top-10 are emitted only when the level
/// has at least that many classes.
pub fn evaluate_scores(level: usize, m: &ScoreMatrix) -> Result<EvalReport> {
    if m.rows() == 0 {
        return Err(Error::EmptyScores);
    }
    let predictions = m.predictions();
    let targets: Vec<usize> = (0..m.rows()).map(|i| m.target(i)).collect();
    let maybe = |k: usize| -> Result<Option<f64>> {
        if k <= m.classes() {
            Ok(Some(topk_accuracy(m, k)?))
        } else {
            Ok(None)
        }
    };
    Ok(EvalReport {
        level,
        classes: m.classes(),
        documents: m.rows(),
        top1: topk_accuracy(m, 1)?,
        top5: maybe(5)?,
        top10: maybe(10)?,
        rar: Some(reciprocal_average_rank(m)?),
        confusion: confusion_matrix(&predictions, &targets, m.classes())?,
        per_class: per_class_prf(&predictions, &targets, m.classes())?,
        chain_consistent: None,
    })
}

impl EvalReport {
    /// Σ TP / Σ support off the confusion matrix.
    pub fn micro_recall(&self) -> f64 {
        let diag: usize = (0..self.classes)
            .map(|c| self.confusion[c * self.classes + c])
            .sum();
        diag as f64 / self.documents as f64
    }

    fn cell(v: Option<f64>) -> String {
        match v {
            Some(x) => format!("{x:.6}"),
            None => "-".into(),
        }
    }

    /// Tab-separated rendering: summary block, confusion matrix, per-class
    /// precision/recall/F1.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("level\t{}\n", self.level));
        out.push_str(&format!("documents\t{}\n", self.documents));
        out.push_str(&format!("classes\t{}\n", self.classes));
        out.push_str(&format!("top1\t{:.6}\n", self.top1));
        out.push_str(&format!("top5\t{}\n", Self::cell(self.top5)));
        out.push_str(&format!("top10\t{}\n", Self::cell(self.top10)));
        out.push_str(&format!("rar\t{}\n", Self::cell(self.rar)));
        if let Some(n) = self.chain_consistent {
            out.push_str(&format!("chain_consistent\t{n}\n"));
        }
        out.push_str("\nconfusion\n");
        for i in 0..self.classes {
            let row: Vec<String> = (0..self.classes)
                .map(|j| self.confusion[i * self.classes + j].to_string())
                .collect();
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out.push_str("\nclass\tprecision\trecall\tf1\tsupport\n");
        for (c, p) in self.per_class.iter().enumerate() {
            out.push_str(&format!(
                "{c}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
                p.precision, p.recall, p.f1, p.support
            ));
        }
        out
    }
}
