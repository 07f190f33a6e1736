//! Replays a commit hunk by hunk against a recommender, classifying what it
//! suggests at every intermediate state.

mod sut;

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{materialize_pre_state, Commit, CorpusError, EditHunk, HunkId, TreeSource, Workspace};
use crate::flow::{classify_outcome, match_edit, FlowCategory, FlowError, FlowGraph, MatchOptions, MatchOutcome, PredictedEdit};
use crate::flow_filter::{FilterDecision, FlowFilter};
use crate::gateway::{aggregate_usage, UsageRecord};

pub use sut::{
    MockSut, NoiseProfile, ReplayEntry, ReplayScript, ReplaySut, SubprocessSut, SuccessorOracleSut, Sut, SutError,
};

pub const PROTOCOL_VERSION: u32 = 1;

pub fn default_protocol_version() -> u32 {
    PROTOCOL_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SutRequest {
    pub protocol_version: u32,
    pub commit_id: String,
    /// 1-based query index; step 0 is the seed application.
    pub step: usize,
    pub workspace_root: PathBuf,
    /// Applied hunks in application order, in current coordinates.
    pub prior_edits: Vec<EditHunk>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationBatch {
    #[serde(default = "default_protocol_version")]
    pub protocol_version: u32,
    pub edits: Vec<PredictedEdit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<UsageRecord>,
}

impl RecommendationBatch {
    pub fn new(edits: Vec<PredictedEdit>) -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            edits,
            usage: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChosenSource {
    Seed,
    /// Taken from the configured forced path.
    Forced,
    KeepPick,
    FallbackSuccessor,
    /// No successor was pending: uniform pick among the remaining hunks.
    FallbackRemaining,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationStep {
    pub index: usize,
    /// Hunks applied before this step's choice, sorted.
    pub prior: Vec<HunkId>,
    /// SUT output before filtering, present only when the filter ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_batch: Option<Vec<PredictedEdit>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_classifications: Option<Vec<FlowCategory>>,
    /// The evaluated batch: SUT output, capped, and filtered when enabled.
    pub batch: Vec<PredictedEdit>,
    pub classifications: Vec<FlowCategory>,
    pub matches: Vec<MatchOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_decisions: Option<Vec<FilterDecision>>,
    pub chosen: HunkId,
    pub chosen_source: ChosenSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sut_failure: Option<SutError>,
    pub usage: UsageRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub seed: u64,
    pub filter: bool,
    pub sut_id: String,
    pub max_batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub protocol_version: u32,
    pub commit_id: String,
    pub config: TraceConfig,
    pub steps: Vec<SimulationStep>,
    pub totals: UsageRecord,
    /// Set when some step had no pending successor.
    #[serde(default)]
    pub fallback_fired: bool,
}

impl SimulationTrace {
    pub fn applied_sequence(&self) -> Vec<HunkId> {
        self.steps.iter().map(|s| s.chosen).collect()
    }

    /// Query steps, excluding the seed.
    pub fn query_steps(&self) -> impl Iterator<Item = &SimulationStep> {
        self.steps.iter().skip(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub max_batch: usize,
    /// Extra attempts per SUT query before recording a failure.
    pub sut_retries: u32,
    /// Hunks the simulated developer applies first, in order, regardless of
    /// recommendations. The first entry replaces the random seed pick.
    pub forced_path: Vec<HunkId>,
    pub matching: MatchOptions,
    /// Materialize into this directory instead of a fresh temporary one.
    pub workspace_dir: Option<PathBuf>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_batch: 10,
            sut_retries: 1,
            forced_path: Vec::new(),
            matching: MatchOptions::default(),
            workspace_dir: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("graph does not cover the commit's hunks")]
    GraphMismatch,
    #[error("forced path entry {0} is not applicable at its position")]
    BadForcedPath(HunkId),
    #[error("workspace: {0}")]
    Workspace(#[from] std::io::Error),
    #[error("{source} (after {} step(s))", partial.steps.len())]
    Patch {
        #[source]
        source: CorpusError,
        partial: Box<SimulationTrace>,
    },
    #[error(transparent)]
    Corpus(CorpusError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Stream id for a commit so that concurrent runs get independent RNGs.
fn commit_stream(commit_id: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in commit_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn matches_and_classes(
    edits: &[PredictedEdit],
    commit: &Commit,
    ws: &Workspace,
    prior: &BTreeSet<HunkId>,
    succ: &BTreeSet<HunkId>,
    opts: &MatchOptions,
) -> (Vec<MatchOutcome>, Vec<FlowCategory>) {
    edits
        .iter()
        .map(|p| {
            let m = match match_edit(p, commit, &ws.state, opts) {
                Ok(m) => m,
                Err(e) => {
                    log::warn!("{}: {e}; counted as no match", commit.commit_id);
                    MatchOutcome::NoMatch
                }
            };
            (m, classify_outcome(m, prior, succ))
        })
        .unzip()
}

/// Runs the editing process of `commit` against `sut`: seed with a
/// minimum in-degree hunk, then repeatedly query, classify, and apply a
/// random KEEP suggestion (or a random successor when none), until every
/// hunk is applied.
pub fn simulate(
    commit: &Commit,
    g: &FlowGraph,
    sut: &mut dyn Sut,
    tree: &dyn TreeSource,
    cfg: &SimConfig,
    mut filter: Option<&mut FlowFilter<'_>>,
) -> Result<SimulationTrace, SimulationError> {
    let universe: BTreeSet<HunkId> = commit.hunk_ids().into_iter().collect();
    if g.nodes.iter().copied().collect::<BTreeSet<_>>() != universe || universe.is_empty() {
        return Err(SimulationError::GraphMismatch);
    }
    let tmp;
    let root = match &cfg.workspace_dir {
        Some(d) => d.clone(),
        None => {
            tmp = tempfile::Builder::new().prefix("editflow-ws-").tempdir()?;
            tmp.path().to_path_buf()
        }
    };
    let mut ws = materialize_pre_state(commit, tree, &root).map_err(SimulationError::Corpus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(commit_stream(&commit.commit_id));

    let mut trace = SimulationTrace {
        protocol_version: PROTOCOL_VERSION,
        commit_id: commit.commit_id.clone(),
        config: TraceConfig {
            seed: cfg.seed,
            filter: filter.is_some(),
            sut_id: sut.id(),
            max_batch: cfg.max_batch,
        },
        steps: Vec::new(),
        totals: UsageRecord::default(),
        fallback_fired: false,
    };

    let seed = match cfg.forced_path.first() {
        Some(&h) if universe.contains(&h) => h,
        Some(&h) => return Err(SimulationError::BadForcedPath(h)),
        None => {
            let cands: Vec<HunkId> = g.min_indegree_candidates()?.into_iter().collect();
            *cands.choose(&mut rng).expect("nonempty graph")
        }
    };
    let mut prior: BTreeSet<HunkId> = BTreeSet::new();
    let mut order: Vec<HunkId> = Vec::new();
    let apply = |ws: &mut Workspace, id: HunkId, trace: &SimulationTrace| -> Result<(), SimulationError> {
        ws.apply_hunk(commit.hunk(id).expect("known hunk")).map_err(|source| SimulationError::Patch {
            source,
            partial: Box::new(trace.clone()),
        })
    };
    apply(&mut ws, seed, &trace)?;
    trace.steps.push(SimulationStep {
        index: 0,
        prior: Vec::new(),
        raw_batch: None,
        raw_classifications: None,
        batch: Vec::new(),
        classifications: Vec::new(),
        matches: Vec::new(),
        filter_decisions: None,
        chosen: seed,
        chosen_source: if cfg.forced_path.is_empty() { ChosenSource::Seed } else { ChosenSource::Forced },
        sut_failure: None,
        usage: UsageRecord::default(),
    });
    prior.insert(seed);
    order.push(seed);

    while prior.len() < universe.len() {
        let t = trace.steps.len();
        let succ = g.successors(&prior)?;
        let req = SutRequest {
            protocol_version: PROTOCOL_VERSION,
            commit_id: commit.commit_id.clone(),
            step: t,
            workspace_root: ws.root.clone(),
            prior_edits: order
                .iter()
                .map(|&id| ws.state.current_frame(commit.hunk(id).expect("known hunk")))
                .collect(),
            description: commit.message.clone(),
        };

        let mut attempt = 0;
        let mut usage_parts = Vec::new();
        let (mut edits, sut_failure) = loop {
            match sut.recommend(&req) {
                Ok(b) => {
                    usage_parts.extend(b.usage);
                    break (b.edits, None);
                }
                Err(e) if attempt < cfg.sut_retries => {
                    log::warn!("{} step {t}: SUT failed ({e}); retrying", commit.commit_id);
                    attempt += 1;
                }
                Err(e) => {
                    log::warn!("{} step {t}: SUT failed ({e}); continuing with an empty batch", commit.commit_id);
                    break (Vec::new(), Some(e));
                }
            }
        };
        edits.truncate(cfg.max_batch);

        let mut step = SimulationStep {
            index: t,
            prior: prior.iter().copied().collect(),
            raw_batch: None,
            raw_classifications: None,
            batch: Vec::new(),
            classifications: Vec::new(),
            matches: Vec::new(),
            filter_decisions: None,
            chosen: HunkId(0),
            chosen_source: ChosenSource::KeepPick,
            sut_failure,
            usage: UsageRecord::default(),
        };
        if let Some(f) = filter.as_deref_mut() {
            let last = ws.state.current_frame(commit.hunk(*order.last().expect("seeded")).expect("known hunk"));
            let (_, raw_classes) = matches_and_classes(&edits, commit, &ws, &prior, &succ, &cfg.matching);
            let out = f.filter_and_rank(&last, &edits, t);
            usage_parts.push(out.usage);
            step.raw_batch = Some(std::mem::replace(&mut edits, out.kept));
            step.raw_classifications = Some(raw_classes);
            step.filter_decisions = Some(out.decisions);
            edits.truncate(cfg.max_batch);
        }
        let (matches, classes) = matches_and_classes(&edits, commit, &ws, &prior, &succ, &cfg.matching);

        let forced = cfg.forced_path.get(order.len()).copied();
        let keeps: Vec<HunkId> = matches
            .iter()
            .zip(&classes)
            .filter(|(_, c)| **c == FlowCategory::Keep)
            .filter_map(|(m, _)| m.hunk())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let (chosen, source) = if let Some(h) = forced {
            if prior.contains(&h) || !universe.contains(&h) || (!succ.is_empty() && !succ.contains(&h)) {
                return Err(SimulationError::BadForcedPath(h));
            }
            (h, ChosenSource::Forced)
        } else if let Some(&h) = keeps.choose(&mut rng) {
            (h, ChosenSource::KeepPick)
        } else if !succ.is_empty() {
            let s: Vec<HunkId> = succ.iter().copied().collect();
            (*s.choose(&mut rng).expect("nonempty"), ChosenSource::FallbackSuccessor)
        } else {
            let rest: Vec<HunkId> = universe.difference(&prior).copied().collect();
            trace.fallback_fired = true;
            (*rest.choose(&mut rng).expect("pending hunks remain"), ChosenSource::FallbackRemaining)
        };
        step.batch = edits;
        step.matches = matches;
        step.classifications = classes;
        step.chosen = chosen;
        step.chosen_source = source;
        step.usage = aggregate_usage(&usage_parts);
        trace.steps.push(step);
        apply(&mut ws, chosen, &trace)?;
        prior.insert(chosen);
        order.push(chosen);
    }
    trace.totals = aggregate_usage(trace.steps.iter().map(|s| &s.usage));
    Ok(trace)
}
