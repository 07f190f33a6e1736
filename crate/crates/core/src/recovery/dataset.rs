use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{infer_order, InferError, InferOptions, PromptCandidate};
use crate::corpus::{Commit, EditHunk};
use crate::flow::{OrderLabel, PairLabelSet};
use crate::gateway::Gateway;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HunkPairSample {
    pub commit_id: String,
    pub a: EditHunk,
    pub b: EditHunk,
    pub y: OrderLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub split: Split,
    pub samples: Vec<HunkPairSample>,
}

impl LabeledDataset {
    /// One sample per labelled pair, in canonical orientation.
    pub fn from_annotations<'a>(split: Split, items: impl IntoIterator<Item = (&'a Commit, &'a PairLabelSet)>) -> Self {
        let mut samples = Vec::new();
        for (commit, labels) in items {
            for (a, b, y) in labels.iter() {
                let (Some(ha), Some(hb)) = (commit.hunk(a), commit.hunk(b)) else {
                    log::warn!("annotation for {} names unknown hunk pair ({a}, {b})", commit.commit_id);
                    continue;
                };
                samples.push(HunkPairSample {
                    commit_id: commit.commit_id.clone(),
                    a: ha.clone(),
                    b: hb.clone(),
                    y,
                });
            }
        }
        Self { split, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn commit_ids(&self) -> BTreeSet<&str> {
        self.samples.iter().map(|s| s.commit_id.as_str()).collect()
    }
}

/// Commit-level split: shuffles distinct commits with `seed` and sends
/// `round(train_fraction · commits)` of them to the training side.
pub fn split_by_commit(samples: Vec<HunkPairSample>, train_fraction: f64, seed: u64) -> (LabeledDataset, LabeledDataset) {
    let mut commits: Vec<String> = samples
        .iter()
        .map(|s| s.commit_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    commits.shuffle(&mut rng);
    let n_train = (train_fraction.clamp(0.0, 1.0) * commits.len() as f64).round() as usize;
    let train_set: BTreeSet<String> = commits.into_iter().take(n_train).collect();
    let (train, test): (Vec<_>, Vec<_>) = samples.into_iter().partition(|s| train_set.contains(&s.commit_id));
    (
        LabeledDataset { split: Split::Train, samples: train },
        LabeledDataset { split: Split::Test, samples: test },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_f1: f64,
    /// `confusion[truth][predicted]`, indexed by `OrderLabel::index`.
    pub confusion: [[u64; 4]; 4],
    pub predictions: Vec<OrderLabel>,
    pub parse_warnings: usize,
}

impl EvalReport {
    /// Scores predictions against ground truth. Classes never predicted
    /// contribute precision 0.
    pub fn from_predictions(truth: &[OrderLabel], predictions: Vec<OrderLabel>) -> Self {
        let mut confusion = [[0u64; 4]; 4];
        for (t, p) in truth.iter().zip(&predictions) {
            confusion[t.index()][p.index()] += 1;
        }
        let n = truth.len() as f64;
        let correct: u64 = (0..4).map(|c| confusion[c][c]).sum();
        let (mut wp, mut wf) = (0.0, 0.0);
        for c in 0..4 {
            let support: u64 = confusion[c].iter().sum();
            if support == 0 {
                continue;
            }
            let predicted: u64 = (0..4).map(|t| confusion[t][c]).sum();
            let tp = confusion[c][c] as f64;
            let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let r = tp / support as f64;
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            let w = support as f64 / n;
            wp += w * p;
            wf += w * f;
        }
        Self {
            accuracy: if n == 0.0 { 0.0 } else { correct as f64 / n },
            weighted_precision: wp,
            weighted_f1: wf,
            confusion,
            predictions,
            parse_warnings: 0,
        }
    }
}

pub fn evaluate_prompt(
    prompt: &PromptCandidate,
    d: &LabeledDataset,
    gw: &Gateway,
    opts: &InferOptions,
) -> Result<EvalReport, InferError> {
    let mut predictions = Vec::with_capacity(d.len());
    let mut warnings = 0;
    for s in &d.samples {
        let r = infer_order(prompt, &s.a, &s.b, gw, opts)?;
        warnings += r.parse_warning as usize;
        predictions.push(r.label);
    }
    let truth: Vec<OrderLabel> = d.samples.iter().map(|s| s.y).collect();
    let mut report = EvalReport::from_predictions(&truth, predictions);
    report.parse_warnings = warnings;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_support::hunk;

    fn sample(commit: &str, i: u32, y: OrderLabel) -> HunkPairSample {
        HunkPairSample {
            commit_id: commit.into(),
            a: hunk(1, "a.py", i, "x\n", "y\n"),
            b: hunk(2, "b.py", i, "x\n", "y\n"),
            y,
        }
    }

    #[test]
    fn commit_level_split_is_disjoint() {
        let samples: Vec<_> = (0..50).map(|i| sample(&format!("c{}", i % 10), i, OrderLabel::Either)).collect();
        let (tr, te) = split_by_commit(samples, 0.7, 3);
        assert_eq!(tr.commit_ids().len(), 7);
        assert!(tr.commit_ids().is_disjoint(&te.commit_ids()));
        assert_eq!(tr.len() + te.len(), 50);
    }

    #[test]
    fn constant_label_on_balanced_set() {
        let truth: Vec<_> = OrderLabel::ALL.iter().cycle().take(40).copied().collect();
        let r = EvalReport::from_predictions(&truth, vec![OrderLabel::Either; 40]);
        assert!((r.accuracy - 0.25).abs() < 1e-12);
        // Only the `either` class has nonzero precision (0.25), weighted 1/4.
        assert!((r.weighted_precision - 0.0625).abs() < 1e-12);
    }
}
