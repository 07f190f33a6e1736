use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::HunkId;

/// Perceived precedence between two hunks `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderLabel {
    /// After `a`, the developer naturally moves on to `b`.
    Precedes,
    /// After `b`, the developer naturally moves on to `a`.
    Follows,
    /// Either direction keeps the flow.
    Either,
    /// No cognitive connection.
    Unrelated,
}

impl OrderLabel {
    pub const ALL: [OrderLabel; 4] = [Self::Precedes, Self::Follows, Self::Either, Self::Unrelated];

    /// Label of the reversed pair `(b, a)`.
    pub fn reflect(self) -> Self {
        match self {
            Self::Precedes => Self::Follows,
            Self::Follows => Self::Precedes,
            other => other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Precedes => "precedes",
            Self::Follows => "follows",
            Self::Either => "either",
            Self::Unrelated => "unrelated",
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Self::Precedes => "≺",
            Self::Follows => "≻",
            Self::Either => "∼",
            Self::Unrelated => "⊥",
        }
    }

    /// True for labels that leave `b` as a flow-continuous next step after `a`.
    pub fn continues_flow(self) -> bool {
        matches!(self, Self::Precedes | Self::Either)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for OrderLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownLabel(pub String);

impl fmt::Display for UnknownLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown order label {:?}", self.0)
    }
}

impl std::error::Error for UnknownLabel {}

impl FromStr for OrderLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Ok(match t.to_ascii_lowercase().as_str() {
            "precedes" | "<" | "≺" => Self::Precedes,
            "follows" | ">" | "≻" => Self::Follows,
            "either" | "~" | "∼" => Self::Either,
            "unrelated" | "none" | "⊥" => Self::Unrelated,
            _ => return Err(UnknownLabel(t.to_string())),
        })
    }
}

/// Pairwise labels over a commit's hunks, stored once per unordered pair in
/// canonical orientation (smaller id first).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairLabelSet {
    pub commit_id: String,
    entries: BTreeMap<(HunkId, HunkId), OrderLabel>,
}

impl PairLabelSet {
    pub fn new(commit_id: impl Into<String>) -> Self {
        Self {
            commit_id: commit_id.into(),
            entries: BTreeMap::new(),
        }
    }

    /// Records `λ(a, b) = label`, reorienting if `a > b`. Self-pairs are ignored.
    pub fn set(&mut self, a: HunkId, b: HunkId, label: OrderLabel) {
        if a == b {
            return;
        }
        if a < b {
            self.entries.insert((a, b), label);
        } else {
            self.entries.insert((b, a), label.reflect());
        }
    }

    /// `λ(a, b)`, reflecting the stored canonical entry when needed.
    pub fn get(&self, a: HunkId, b: HunkId) -> Option<OrderLabel> {
        if a < b {
            self.entries.get(&(a, b)).copied()
        } else {
            self.entries.get(&(b, a)).map(|l| l.reflect())
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, a: HunkId, b: HunkId) -> bool {
        self.get(a, b).is_some()
    }

    /// Canonical entries in ascending pair order.
    pub fn iter(&self) -> impl Iterator<Item = (HunkId, HunkId, OrderLabel)> + '_ {
        self.entries.iter().map(|(&(a, b), &l)| (a, b, l))
    }

    /// Pairs of `hunks` with no label.
    pub fn missing_pairs(&self, hunks: &[HunkId]) -> Vec<(HunkId, HunkId)> {
        let mut sorted = hunks.to_vec();
        sorted.sort();
        let mut out = Vec::new();
        for (i, &a) in sorted.iter().enumerate() {
            for &b in &sorted[i + 1..] {
                if !self.contains(a, b) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Labels every missing pair ⊥.
    pub fn fill_unrelated(&mut self, hunks: &[HunkId]) {
        for (a, b) in self.missing_pairs(hunks) {
            self.set(a, b, OrderLabel::Unrelated);
        }
    }

    pub fn to_annotation(&self, repo: &str) -> AnnotationFile {
        AnnotationFile {
            commit_id: self.commit_id.clone(),
            repo: repo.to_string(),
            pairs: self.iter().map(|(a, b, label)| AnnotatedPair { a, b, label }).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedPair {
    pub a: HunkId,
    pub b: HunkId,
    pub label: OrderLabel,
}

/// On-disk pairwise annotation for one commit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub commit_id: String,
    #[serde(default)]
    pub repo: String,
    pub pairs: Vec<AnnotatedPair>,
}

impl AnnotationFile {
    pub fn to_label_set(&self) -> PairLabelSet {
        let mut set = PairLabelSet::new(&self.commit_id);
        for p in &self.pairs {
            set.set(p.a, p.b, p.label);
        }
        set
    }
}
