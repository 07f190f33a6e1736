use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use super::{RecommendationBatch, SutRequest, PROTOCOL_VERSION};
use crate::corpus::{Commit, EditState, HunkId};
use crate::flow::{FlowGraph, PredictedEdit};
use crate::gateway::UsageRecord;

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum SutError {
    #[error("timed out after {0} ms")]
    Timeout(u64),
    #[error("exited with status {code:?}: {stderr}")]
    NonzeroExit { code: Option<i32>, stderr: String },
    #[error("malformed output: {0}")]
    MalformedOutput(String),
    #[error("could not run: {0}")]
    Spawn(String),
    #[error("{0}")]
    Scripted(String),
}

/// A subsequent-edit recommender under evaluation.
pub trait Sut {
    fn id(&self) -> String;
    fn recommend(&mut self, req: &SutRequest) -> Result<RecommendationBatch, SutError>;
}

fn prior_state(commit: &Commit, req: &SutRequest) -> (BTreeSet<HunkId>, EditState) {
    let ids: Vec<HunkId> = req.prior_edits.iter().map(|h| h.id).collect();
    let state = EditState::from_applied(commit, &ids).unwrap_or_default();
    (ids.into_iter().collect(), state)
}

/// Returns every pending one-hop successor, in id order.
pub struct SuccessorOracleSut {
    graph: FlowGraph,
    commit: Commit,
}

impl SuccessorOracleSut {
    pub fn new(graph: FlowGraph, commit: Commit) -> Self {
        Self { graph, commit }
    }
}

impl Sut for SuccessorOracleSut {
    fn id(&self) -> String {
        "successor-oracle".into()
    }

    fn recommend(&mut self, req: &SutRequest) -> Result<RecommendationBatch, SutError> {
        let (prior, state) = prior_state(&self.commit, req);
        let succ = self.graph.successors(&prior).unwrap_or_default();
        let edits = succ
            .iter()
            .filter_map(|&id| self.commit.hunk(id))
            .enumerate()
            .map(|(i, h)| PredictedEdit::forward(h, &state, i as u32))
            .collect();
        Ok(RecommendationBatch::new(edits))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseProfile {
    pub break_rate: f64,
    pub jump_rate: f64,
    pub revert_rate: f64,
}

impl NoiseProfile {
    pub fn validate(&self) -> Result<(), String> {
        let rates = [self.break_rate, self.jump_rate, self.revert_rate];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err("noise rates must lie in [0, 1]".into());
        }
        if rates.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err("noise rates must sum to at most 1".into());
        }
        Ok(())
    }
}

/// Synthetic recommender mixing true successors with BREAK, JUMP and
/// REVERT edits in configured proportions. Each slot draws its kind
/// independently; when the drawn kind has no candidate at this state the
/// slot falls back to a successor, then to a jump, then to a break.
pub struct MockSut {
    graph: FlowGraph,
    commit: Commit,
    noise: NoiseProfile,
    batch_size: usize,
    rng: ChaCha8Rng,
    emitted: u64,
}

impl MockSut {
    pub fn new(graph: FlowGraph, commit: Commit, noise: NoiseProfile, batch_size: usize, seed: u64) -> Result<Self, String> {
        noise.validate()?;
        Ok(Self {
            graph,
            commit,
            noise,
            batch_size: batch_size.max(1),
            rng: ChaCha8Rng::seed_from_u64(seed),
            emitted: 0,
        })
    }

    fn noise_edit(&mut self, state: &EditState) -> PredictedEdit {
        self.emitted += 1;
        let tag = format!("editflow_noise_{}_{}", self.emitted, self.rng.random::<u32>());
        let h = self.commit.hunks.choose(&mut self.rng).expect("commit has hunks");
        let mut p = if state.is_applied(h.id) {
            PredictedEdit::revert(h, state, 0)
        } else {
            PredictedEdit::forward(h, state, 0)
        };
        p.content_post = format!("{}{tag} = None\n", p.content_post);
        p
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Keep,
    Jump,
    Revert,
    Break,
}

impl Sut for MockSut {
    fn id(&self) -> String {
        "mock".into()
    }

    fn recommend(&mut self, req: &SutRequest) -> Result<RecommendationBatch, SutError> {
        let (prior, state) = prior_state(&self.commit, req);
        let succ: Vec<HunkId> = self.graph.successors(&prior).unwrap_or_default().into_iter().collect();
        let jumps: Vec<HunkId> = self
            .commit
            .hunk_ids()
            .into_iter()
            .filter(|h| !prior.contains(h) && !succ.contains(h))
            .collect();
        let applied: Vec<HunkId> = prior.iter().copied().collect();
        let mut edits = Vec::with_capacity(self.batch_size);
        for rank in 0..self.batch_size {
            let u: f64 = self.rng.random();
            let n = &self.noise;
            let slot = if u < n.break_rate {
                Slot::Break
            } else if u < n.break_rate + n.jump_rate {
                Slot::Jump
            } else if u < n.break_rate + n.jump_rate + n.revert_rate {
                Slot::Revert
            } else {
                Slot::Keep
            };
            let pick = |pool: &[HunkId], rng: &mut ChaCha8Rng| pool.choose(rng).copied();
            let mut edit = match slot {
                Slot::Keep => pick(&succ, &mut self.rng).map(|id| (id, false)),
                Slot::Jump => pick(&jumps, &mut self.rng).map(|id| (id, false)),
                Slot::Revert => pick(&applied, &mut self.rng).map(|id| (id, true)),
                Slot::Break => None,
            }
            .map(|(id, revert)| {
                let h = self.commit.hunk(id).expect("known hunk");
                if revert {
                    PredictedEdit::revert(h, &state, 0)
                } else {
                    PredictedEdit::forward(h, &state, 0)
                }
            });
            if edit.is_none() && !matches!(slot, Slot::Break) {
                edit = pick(&succ, &mut self.rng)
                    .or_else(|| pick(&jumps, &mut self.rng))
                    .and_then(|id| self.commit.hunk(id))
                    .map(|h| PredictedEdit::forward(h, &state, 0));
            }
            let mut edit = edit.unwrap_or_else(|| self.noise_edit(&state));
            edit.source_rank = rank as u32;
            edits.push(edit);
        }
        Ok(RecommendationBatch::new(edits))
    }
}

/// One scripted answer. `prior`, when given, restricts the entry to that
/// exact prior set; otherwise the entry answers at `step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<HunkId>>,
    #[serde(default)]
    pub edits: Vec<PredictedEdit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<UsageRecord>,
    /// Simulate a failing query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayScript {
    #[serde(default = "super::default_protocol_version")]
    pub protocol_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commit_id: Option<String>,
    pub batches: Vec<ReplayEntry>,
}


/// Answers from a script; queries with no entry get an empty batch.
pub struct ReplaySut {
    script: ReplayScript,
    name: String,
}

impl ReplaySut {
    pub fn new(script: ReplayScript) -> Self {
        Self {
            script,
            name: "replay".into(),
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl Sut for ReplaySut {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn recommend(&mut self, req: &SutRequest) -> Result<RecommendationBatch, SutError> {
        let prior: BTreeSet<HunkId> = req.prior_edits.iter().map(|h| h.id).collect();
        let entry = self.script.batches.iter().find(|e| match &e.prior {
            Some(p) => p.iter().copied().collect::<BTreeSet<_>>() == prior,
            None => e.step == Some(req.step),
        });
        let Some(e) = entry else {
            return Ok(RecommendationBatch::new(Vec::new()));
        };
        if let Some(msg) = &e.error {
            return Err(SutError::Scripted(msg.clone()));
        }
        let mut b = RecommendationBatch::new(e.edits.clone());
        b.usage = e.usage;
        Ok(b)
    }
}

/// Runs `sh -c command` per query: the request JSON goes to stdin, one
/// batch JSON document is read from stdout.
pub struct SubprocessSut {
    name: String,
    command: String,
    timeout: Duration,
}

impl SubprocessSut {
    pub fn new(name: impl Into<String>, command: impl Into<String>, timeout: Duration) -> Self {
        Self {
            name: name.into(),
            command: command.into(),
            timeout,
        }
    }
}

impl Sut for SubprocessSut {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn recommend(&mut self, req: &SutRequest) -> Result<RecommendationBatch, SutError> {
        let started = Instant::now();
        let input = serde_json::to_vec(req).map_err(|e| SutError::Spawn(e.to_string()))?;
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .current_dir(&req.workspace_root)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| SutError::Spawn(e.to_string()))?;
        let mut stdin = child.stdin.take().expect("piped");
        let writer = thread::spawn(move || {
            // A command that ignores its input may close the pipe early.
            let _ = stdin.write_all(&input);
        });
        let mut stdout = child.stdout.take().expect("piped");
        let mut stderr = child.stderr.take().expect("piped");
        let out_reader = thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stdout.read_to_end(&mut buf);
            buf
        });
        let err_reader = thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stderr.read_to_end(&mut buf);
            buf
        });
        let status = match child.wait_timeout(self.timeout).map_err(|e| SutError::Spawn(e.to_string()))? {
            Some(s) => s,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(SutError::Timeout(self.timeout.as_millis() as u64));
            }
        };
        let _ = writer.join();
        let out = out_reader.join().unwrap_or_default();
        let err = err_reader.join().unwrap_or_default();
        if !status.success() {
            return Err(SutError::NonzeroExit {
                code: status.code(),
                stderr: String::from_utf8_lossy(&err).chars().take(500).collect(),
            });
        }
        let mut batch: RecommendationBatch =
            serde_json::from_slice(&out).map_err(|e| SutError::MalformedOutput(e.to_string()))?;
        if batch.protocol_version != PROTOCOL_VERSION {
            return Err(SutError::MalformedOutput(format!(
                "protocol_version {} (expected {PROTOCOL_VERSION})",
                batch.protocol_version
            )));
        }
        if batch.usage.is_none() {
            batch.usage = Some(UsageRecord {
                latency: started.elapsed().as_secs_f64(),
                ..UsageRecord::default()
            });
        }
        Ok(batch)
    }
}
