use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{infer_order, pair_user_message, InferError, InferOptions, PromptCandidate};
use crate::flow::OrderLabel;
use crate::gateway::{ChatRequest, Gateway};

use super::dataset::{HunkPairSample, LabeledDataset};

pub const SUMMARIZE_SYSTEM: &str = "You write instructions for a model that decides the order in which a developer would make two edit hunks from the same commit. \
The possible labels are precedes, follows, either and unrelated. Study the labelled examples and write an instruction prompt that would lead a model to the same labels. \
Reply with the prompt text only.";

pub const FEEDBACK_SYSTEM: &str = "You review an instruction prompt used to label the order of two edit hunks from the same commit. \
You are shown the prompt and its results on labelled examples, some correct and some wrong. \
Explain the mistakes, say which kinds of pairs are misordered or mislabelled, and suggest concrete changes to the prompt.";

pub const INTEGRATE_SYSTEM: &str = "You improve an instruction prompt used to label the order of two edit hunks from the same commit. \
Rewrite the prompt so that it addresses the feedback while keeping what already works. Reply with the new prompt text only.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TunerConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Return the best candidate ever scored rather than the last epoch's winner.
    pub keep_global_best: bool,
    pub rng_seed: u64,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            temperature: 0.7,
            max_output_tokens: 4096,
            keep_global_best: true,
            rng_seed: 0,
        }
    }
}

impl TunerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.epochs < 1 {
            return Err("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return Err("batch_size must be at least 2".into());
        }
        if self.max_output_tokens < 1 {
            return Err("max_output_tokens must be at least 1".into());
        }
        if !(self.temperature >= 0.0) {
            return Err("temperature must be non-negative".into());
        }
        Ok(())
    }

    fn infer_options(&self) -> InferOptions {
        InferOptions {
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    /// Indices into the checkpoint's candidate list.
    pub candidates: Vec<usize>,
    pub p_star: usize,
    pub p_star_accuracy: f64,
    /// Best accuracy over every candidate scored so far.
    pub global_best_accuracy: f64,
    /// No misclassified samples remained, so the epoch made no calls.
    #[serde(default)]
    pub converged: bool,
}

/// Resumable tuner state, written after the initial phase and after every
/// completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunerCheckpoint {
    pub config: TunerConfig,
    pub candidates: Vec<PromptCandidate>,
    pub p_star: Option<usize>,
    pub next_epoch: u32,
    pub history: Vec<EpochRecord>,
}

impl TunerCheckpoint {
    fn fresh(config: &TunerConfig) -> Self {
        Self {
            config: config.clone(),
            candidates: Vec::new(),
            p_star: None,
            next_epoch: 0,
            history: Vec::new(),
        }
    }

    /// Accuracy argmax over all candidates; ties go to the earliest.
    pub fn global_best(&self) -> Option<usize> {
        argmax(&self.candidates, 0..self.candidates.len())
    }

    pub fn finished(&self) -> bool {
        self.next_epoch > self.config.epochs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub best: PromptCandidate,
    pub checkpoint: TunerCheckpoint,
}

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("invalid tuner config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("tuning aborted: {source}")]
    Aborted {
        #[source]
        source: InferError,
        checkpoint: Box<TunerCheckpoint>,
    },
}

fn argmax(cands: &[PromptCandidate], range: impl Iterator<Item = usize>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in range {
        let acc = cands[i].accuracy_on_train.unwrap_or(0.0);
        if best.is_none_or(|(_, b)| acc > b) {
            best = Some((i, acc));
        }
    }
    best.map(|(i, _)| i)
}

fn rng_for(seed: u64, epoch: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

fn clean_prompt(text: &str) -> String {
    let t = text.trim();
    let t = t.strip_prefix("```").map_or(t, |rest| {
        let rest = rest.split_once('\n').map_or("", |(_, r)| r);
        rest.strip_suffix("```").unwrap_or(rest)
    });
    t.trim().to_string()
}

fn render_examples(samples: &[&HunkPairSample], predictions: Option<&[OrderLabel]>) -> String {
    let mut out = String::new();
    for (i, s) in samples.iter().enumerate() {
        out.push_str(&format!("Example {}\n{}\nExpected: {}\n", i + 1, pair_user_message(&s.a, &s.b), s.y));
        if let Some(p) = predictions {
            let verdict = if p[i] == s.y { "correct" } else { "wrong" };
            out.push_str(&format!("Predicted: {} ({verdict})\n", p[i]));
        }
        out.push('\n');
    }
    out
}

struct Scorer<'a> {
    d: &'a LabeledDataset,
    gw: &'a Gateway,
    opts: InferOptions,
    cache: HashMap<String, Vec<OrderLabel>>,
}

impl Scorer<'_> {
    fn predictions(&mut self, prompt: &PromptCandidate) -> Result<Vec<OrderLabel>, InferError> {
        if let Some(p) = self.cache.get(&prompt.text) {
            return Ok(p.clone());
        }
        let mut preds = Vec::with_capacity(self.d.len());
        for s in &self.d.samples {
            preds.push(infer_order(prompt, &s.a, &s.b, self.gw, &self.opts)?.label);
        }
        self.cache.insert(prompt.text.clone(), preds.clone());
        Ok(preds)
    }

    fn accuracy(&mut self, prompt: &PromptCandidate) -> Result<f64, InferError> {
        let preds = self.predictions(prompt)?;
        let correct = preds.iter().zip(&self.d.samples).filter(|(p, s)| **p == s.y).count();
        Ok(correct as f64 / self.d.len() as f64)
    }
}

/// See [`tune_prompt_with`]; starts fresh and discards checkpoints.
pub fn tune_prompt(d_tr: &LabeledDataset, cfg: &TunerConfig, gw: &Gateway) -> Result<TuneOutcome, TuneError> {
    tune_prompt_with(d_tr, cfg, gw, None, &mut |_| {})
}

/// Feedback-driven prompt search over labelled pairs. `resume` continues
/// from a checkpoint; `sink` receives a checkpoint after each phase.
pub fn tune_prompt_with(
    d_tr: &LabeledDataset,
    cfg: &TunerConfig,
    gw: &Gateway,
    resume: Option<TunerCheckpoint>,
    sink: &mut dyn FnMut(&TunerCheckpoint),
) -> Result<TuneOutcome, TuneError> {
    cfg.validate().map_err(TuneError::InvalidConfig)?;
    if d_tr.is_empty() {
        return Err(TuneError::EmptyDataset);
    }
    let mut ck = resume.unwrap_or_else(|| TunerCheckpoint::fresh(cfg));
    ck.config = cfg.clone();
    let mut scorer = Scorer {
        d: d_tr,
        gw,
        opts: cfg.infer_options(),
        cache: HashMap::new(),
    };
    let call = |system: &str, user: String| -> Result<String, InferError> {
        let req = ChatRequest {
            system: system.to_string(),
            user,
            temperature: cfg.temperature,
            max_output_tokens: cfg.max_output_tokens,
            want_logprobs: false,
        };
        Ok(gw.complete(&req)?.text)
    };
    let abort = |source: InferError, ck: &TunerCheckpoint, restore: usize| {
        let mut saved = ck.clone();
        saved.candidates.truncate(restore);
        TuneError::Aborted {
            source,
            checkpoint: Box::new(saved),
        }
    };
    let n = d_tr.len();
    let k = n.div_ceil(cfg.batch_size);

    if ck.next_epoch == 0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(cfg.rng_seed, 0));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&HunkPairSample> = chunk.iter().map(|&i| &d_tr.samples[i]).collect();
            let step = call(SUMMARIZE_SYSTEM, render_examples(&batch, None)).and_then(|text| {
                let text = clean_prompt(&text);
                let text = if text.is_empty() { PromptCandidate::zero_shot().text } else { text };
                let mut cand = PromptCandidate::new(text);
                cand.accuracy_on_train = Some(scorer.accuracy(&cand)?);
                Ok(cand)
            });
            match step {
                Ok(c) => ck.candidates.push(c),
                Err(e) => return Err(abort(e, &ck, 0)),
            }
        }
        ck.p_star = argmax(&ck.candidates, 0..ck.candidates.len());
        ck.next_epoch = 1;
        sink(&ck);
    }

    while ck.next_epoch <= cfg.epochs {
        let epoch = ck.next_epoch;
        let start = ck.candidates.len();
        let p_idx = ck.p_star.expect("set by the initial phase");
        let p_star = ck.candidates[p_idx].clone();
        let preds = match scorer.predictions(&p_star) {
            Ok(p) => p,
            Err(e) => return Err(abort(e, &ck, start)),
        };
        let (pos, neg): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| preds[i] == d_tr.samples[i].y);

        if neg.is_empty() {
            let global = ck.global_best().map_or(0.0, |g| ck.candidates[g].accuracy_on_train.unwrap_or(0.0));
            ck.history.push(EpochRecord {
                epoch,
                candidates: Vec::new(),
                p_star: p_idx,
                p_star_accuracy: p_star.accuracy_on_train.unwrap_or(0.0),
                global_best_accuracy: global,
                converged: true,
            });
            ck.next_epoch += 1;
            sink(&ck);
            continue;
        }

        let batches = mixed_batches(pos, neg, k, &mut rng_for(cfg.rng_seed, epoch));
        for batch in batches {
            let samples: Vec<&HunkPairSample> = batch.iter().map(|&i| &d_tr.samples[i]).collect();
            let batch_preds: Vec<OrderLabel> = batch.iter().map(|&i| preds[i]).collect();
            let step = (|| {
                let feedback = call(
                    FEEDBACK_SYSTEM,
                    format!(
                        "Current prompt:\n<prompt>\n{}\n</prompt>\n\nResults:\n\n{}",
                        p_star.text,
                        render_examples(&samples, Some(&batch_preds))
                    ),
                )?;
                let revised = call(
                    INTEGRATE_SYSTEM,
                    format!("Current prompt:\n<prompt>\n{}\n</prompt>\n\nFeedback:\n{}\n", p_star.text, feedback.trim()),
                )?;
                let text = clean_prompt(&revised);
                let text = if text.is_empty() { p_star.text.clone() } else { text };
                let mut cand = PromptCandidate::new(text);
                cand.epoch_born = epoch;
                cand.accuracy_on_train = Some(scorer.accuracy(&cand)?);
                Ok::<_, InferError>(cand)
            })();
            match step {
                Ok(c) => ck.candidates.push(c),
                Err(e) => return Err(abort(e, &ck, start)),
            }
        }
        let epoch_range = start..ck.candidates.len();
        let winner = argmax(&ck.candidates, epoch_range.clone()).expect("at least one batch");
        ck.p_star = Some(winner);
        let global = ck.global_best().map_or(0.0, |g| ck.candidates[g].accuracy_on_train.unwrap_or(0.0));
        ck.history.push(EpochRecord {
            epoch,
            candidates: epoch_range.collect(),
            p_star: winner,
            p_star_accuracy: ck.candidates[winner].accuracy_on_train.unwrap_or(0.0),
            global_best_accuracy: global,
            converged: false,
        });
        ck.next_epoch += 1;
        sink(&ck);
    }

    let chosen = if cfg.keep_global_best { ck.global_best() } else { ck.p_star }.expect("candidates exist");
    Ok(TuneOutcome {
        best: ck.candidates[chosen].clone(),
        checkpoint: ck,
    })
}

/// `k` batches, each holding at least one member of every nonempty side.
/// Both sides are shuffled and dealt round-robin; a side smaller than `k`
/// is reused cyclically so no batch misses it.
fn mixed_batches(mut pos: Vec<usize>, mut neg: Vec<usize>, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    pos.shuffle(rng);
    neg.shuffle(rng);
    let k = k.max(1);
    let mut batches = vec![Vec::new(); k];
    for side in [&neg, &pos] {
        if side.is_empty() {
            continue;
        }
        for (i, &s) in side.iter().enumerate() {
            batches[i % k].push(s);
        }
        for (b, batch) in batches.iter_mut().enumerate().skip(side.len()) {
            batch.push(side[b % side.len()]);
        }
    }
    batches
}
