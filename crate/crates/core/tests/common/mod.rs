#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use editflow_core::corpus::git::{diff_zero_context, extract_commit, rev_list, show_file};
use editflow_core::corpus::{line_count, materialize_pre_state, Commit, EditHunk, GitTree, HunkId, MemoryTree};
use editflow_core::flow::{build_flow_graph, FlowGraph, OrderLabel, PairLabelSet};
use editflow_core::gateway::{Gateway, MockProvider, MockResponse, PriceTable};
use editflow_core::recovery::pair_user_message;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn h(n: u32) -> HunkId {
    HunkId(n)
}

pub fn hunk(id: u32, file: &str, start: u32, pre: &str, post: &str) -> EditHunk {
    EditHunk {
        id: HunkId(id),
        file: file.to_string(),
        line_start: start,
        line_end: start + line_count(pre) - 1,
        content_pre: pre.to_string(),
        content_post: post.to_string(),
        structural_path: String::new(),
    }
}

pub fn commit(id: &str, hunks: Vec<EditHunk>) -> Commit {
    Commit {
        commit_id: id.to_string(),
        parent_id: format!("{id}^"),
        message: format!("commit {id}"),
        hunks,
        repo: ".".into(),
        files: Vec::new(),
        parent_count: 1,
    }
}

pub struct Fixture {
    pub commit: Commit,
    pub tree: MemoryTree,
    pub labels: PairLabelSet,
    pub graph: FlowGraph,
}

const BOSS: &str = "\
class Boss:

    def __init__(self):
        self.active_tab_manager = None

    def set_active_window(self, window, switch_os_window_if_needed=False):
        if window is None:
            return
        tm = self.active_tab_manager
        if tm is None:
            return
        tab = window.tabref()
        tm.set_active_tab(tab)
        tab.set_active_window(window)
        return window.os_window_id
";

const LAUNCH: &str = "\
from .boss import Boss


def launch(boss: Boss, opts, active=None):
    window = boss.create_window(opts)
    if opts.keep_focus and active:
        boss.set_active_window(active, switch_os_window_if_needed=True)
    return window
";

const TABS: &str = "\
class Tab:

    def set_active_window(self, x):
        self.windows.set_active_window_group_for(x)


class TabManager:

    def set_active_tab(self, tab):
        idx = self.tabs.index(tab)
        if idx == self.active_tab_idx:
            return False
        self.active_tab_idx = idx
        self.mark_tab_bar_dirty()
        return True
";

const WINDOW_LIST: &str = "\
class WindowList:

    def set_active_window_group_for(self, x):
        for i, group in enumerate(self.groups):
            if x in group:
                self.set_active_group_idx(i)
                return
";

/// The keep-focus commit: a keyword threaded from the launch call site
/// through the boss, tab, and window-list layers.
pub fn motivating() -> Fixture {
    let hunks = vec![
        hunk(
            1,
            "kitty/boss.py",
            6,
            "    def set_active_window(self, window, switch_os_window_if_needed=False):\n",
            "    def set_active_window(self, window, switch_os_window_if_needed=False, for_keep_focus=False):\n",
        ),
        hunk(
            2,
            "kitty/boss.py",
            13,
            "        tm.set_active_tab(tab)\n        tab.set_active_window(window)\n",
            "        tm.set_active_tab(tab, for_keep_focus=for_keep_focus)\n        tab.set_active_window(window, for_keep_focus=for_keep_focus)\n",
        ),
        hunk(
            3,
            "kitty/launch.py",
            7,
            "        boss.set_active_window(active, switch_os_window_if_needed=True)\n",
            "        boss.set_active_window(active, switch_os_window_if_needed=True, for_keep_focus=True)\n",
        ),
        hunk(
            4,
            "kitty/tabs.py",
            3,
            "    def set_active_window(self, x):\n        self.windows.set_active_window_group_for(x)\n",
            "    def set_active_window(self, x, for_keep_focus=False):\n        self.windows.set_active_window_group_for(x, for_keep_focus=for_keep_focus)\n",
        ),
        hunk(
            5,
            "kitty/tabs.py",
            9,
            "    def set_active_tab(self, tab):\n",
            "    def set_active_tab(self, tab, for_keep_focus=False):\n",
        ),
        hunk(
            6,
            "kitty/tabs.py",
            14,
            "        self.mark_tab_bar_dirty()\n",
            "        self.mark_tab_bar_dirty()\n        if not for_keep_focus:\n            self.update_focus()\n",
        ),
        hunk(
            7,
            "kitty/window_list.py",
            3,
            "    def set_active_window_group_for(self, x):\n",
            "    def set_active_window_group_for(self, x, for_keep_focus=False):\n",
        ),
        hunk(
            8,
            "kitty/window_list.py",
            6,
            "                self.set_active_group_idx(i)\n",
            "                self.set_active_group_idx(i, for_keep_focus=for_keep_focus)\n",
        ),
    ];
    let mut c = commit("c4c62c15", hunks);
    c.message = "Add for_keep_focus to set_active_window".into();
    let tree = MemoryTree {
        files: [
            ("kitty/boss.py", BOSS),
            ("kitty/launch.py", LAUNCH),
            ("kitty/tabs.py", TABS),
            ("kitty/window_list.py", WINDOW_LIST),
        ]
        .into_iter()
        .map(|(p, t)| (p.to_string(), t.to_string()))
        .collect(),
    };
    let mut labels = PairLabelSet::new(&c.commit_id);
    for (a, b) in MOTIVATING_EDGES {
        labels.set(h(a), h(b), OrderLabel::Either);
    }
    labels.fill_unrelated(&c.hunk_ids());
    let graph = build_flow_graph(&c.hunk_ids(), &labels).unwrap();
    Fixture {
        commit: c,
        tree,
        labels,
        graph,
    }
}

/// Undirected connections of the motivating commit; each is an edge both ways.
pub const MOTIVATING_EDGES: [(u32, u32); 7] = [(3, 1), (3, 2), (2, 4), (2, 5), (2, 6), (4, 7), (4, 8)];

/// The hunk shown as the serialization example: one changed call with a
/// line of context on either side.
pub fn table_hunk() -> EditHunk {
    EditHunk {
        id: HunkId(1),
        file: "kitty/launch.py".into(),
        line_start: 477,
        line_end: 479,
        content_pre: "      if opts.keep_focus and active:\n          boss.set_active_window(active, switch_os_window_if_needed=True)\n          if opts.logo:\n".into(),
        content_post: "      if opts.keep_focus and active:\n          boss.set_active_window(active, switch_os_window_if_needed=True, for_keep_focus=True)\n          if opts.logo:\n".into(),
        structural_path: "def launch(boss: Boss, ...)->Optional[Window]:\n    boss.set_active_window(active, switch_os_window_if_needed=True)".into(),
    }
}

pub const TABLE_EXPECTED: &str = "<file_path>kitty/launch.py</file_path>
<structural_path>
def launch(boss: Boss, ...)->Optional[Window]:
    boss.set_active_window(active, switch_os_window_if_needed=True)
</structural_path>
<code>
477 477        if opts.keep_focus and active:
478     -          boss.set_active_window(active, switch_os_window_if_needed=True)
    478 +          boss.set_active_window(active, switch_os_window_if_needed=True, for_keep_focus=True)
479 479            if opts.logo:
</code>";

/// A random commit of `n` disjoint hunks over up to three files. Labels are
/// random, plus an `either` chain over a random permutation so that every
/// partial state has a pending successor.
pub fn synthetic(seed: u64, n: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let file_count = rng.random_range(1..=3usize);
    let files: Vec<String> = (0..file_count).map(|f| format!("src/mod_{f}.py")).collect();
    let slots_per_file = 12u32;
    let mut tree = BTreeMap::new();
    for (f, path) in files.iter().enumerate() {
        let text: String = (1..=slots_per_file * 4).map(|i| format!("v_{f}_{i} = {i}\n")).collect();
        tree.insert(path.clone(), text);
    }
    let mut slots: Vec<(usize, u32)> = (0..file_count)
        .flat_map(|f| (0..slots_per_file).map(move |s| (f, s)))
        .collect();
    slots.shuffle(&mut rng);
    let mut picked: Vec<(usize, u32)> = slots.into_iter().take(n).collect();
    picked.sort();

    let mut hunks = Vec::new();
    for (k, &(f, slot)) in picked.iter().enumerate() {
        let id = k as u32 + 1;
        let start = slot * 4 + 1 + rng.random_range(0..2u32);
        let file_lines: Vec<&str> = tree[&files[f]].split_inclusive('\n').collect();
        let take = |len: u32| -> String { (0..len).map(|j| file_lines[(start - 1 + j) as usize]).collect() };
        let fresh = |len: u32| -> String { (0..len).map(|j| format!("new_{seed}_{id}_{j} = {j}\n")).collect() };
        let (pre, post) = match rng.random_range(0..3) {
            0 => (take(rng.random_range(1..=2)), fresh(rng.random_range(1..=3))),
            1 => (String::new(), fresh(rng.random_range(1..=3))),
            _ => (take(rng.random_range(1..=2)), String::new()),
        };
        hunks.push(hunk(id, &files[f], start, &pre, &post));
    }
    let c = commit(&format!("syn{seed:04}"), hunks);
    c.validate().unwrap();

    let ids = c.hunk_ids();
    let mut labels = PairLabelSet::new(&c.commit_id);
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            let l = match rng.random_range(0..10) {
                0..=1 => OrderLabel::Precedes,
                2..=3 => OrderLabel::Follows,
                4 => OrderLabel::Either,
                _ => OrderLabel::Unrelated,
            };
            labels.set(a, b, l);
        }
    }
    let mut perm = ids.clone();
    perm.shuffle(&mut rng);
    for w in perm.windows(2) {
        labels.set(w[0], w[1], OrderLabel::Either);
    }
    let graph = build_flow_graph(&ids, &labels).unwrap();
    Fixture {
        commit: c,
        tree: MemoryTree { files: tree },
        labels,
        graph,
    }
}

pub fn label_reply(l: OrderLabel) -> MockResponse {
    MockResponse::text(format!("{{\"label\": \"{}\", \"rationale\": \"oracle\"}}", l.as_str()))
}

/// Gateway answering each pair message from a lookup table; unknown
/// messages are answered `unrelated`.
pub fn lookup_gateway(table: HashMap<String, OrderLabel>) -> Gateway {
    Gateway::new(
        MockProvider::from_fn(move |req| Ok(label_reply(table.get(&req.user).copied().unwrap_or(OrderLabel::Unrelated)))),
        PriceTable::free("oracle"),
    )
}

/// Gateway that reproduces `labels` for every ordered pair of the commit's hunks.
pub fn labels_gateway(c: &Commit, labels: &PairLabelSet) -> Gateway {
    let mut table = HashMap::new();
    for a in &c.hunks {
        for b in &c.hunks {
            if let Some(l) = labels.get(a.id, b.id) {
                table.insert(pair_user_message(a, b), l);
            }
        }
    }
    lookup_gateway(table)
}

const FIXTURE_STREAM: &[u8] = include_bytes!("../fixtures/fixture_repo.fi");

/// Imports the bundled fast-import stream into a fresh repository under `dir`.
pub fn import_fixture(dir: &Path) -> PathBuf {
    let repo = dir.join("repo");
    let ok = Command::new("git")
        .args(["init", "-q", "-b", "main"])
        .arg(&repo)
        .status()
        .unwrap()
        .success();
    assert!(ok, "git init failed");
    let mut child = Command::new("git")
        .arg("-C")
        .arg(&repo)
        .args(["fast-import", "--quiet"])
        .stdin(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.as_mut().unwrap().write_all(FIXTURE_STREAM).unwrap();
    assert!(child.wait().unwrap().success(), "fast-import failed");
    repo
}

/// Extracts every non-root commit of `repo`, applies all hunks to the parent
/// tree, and compares each touched text file with git's copy. Returns the
/// number of commits compared.
pub fn round_trip_all(repo: &Path, scratch: &Path) -> Result<usize, String> {
    let revs = rev_list(repo, "main").map_err(|e| e.to_string())?;
    let mut checked = 0;
    for rev in &revs[1..] {
        let commit = extract_commit(repo, rev).map_err(|e| format!("{rev}: {e}"))?;
        commit.validate().map_err(|e| format!("{rev}: {e}"))?;

        let raw = diff_zero_context(repo, &commit.parent_id, rev).map_err(|e| e.to_string())?;
        let regions = String::from_utf8_lossy(&raw).lines().filter(|l| l.starts_with("@@ ")).count();
        if regions != commit.hunks.len() {
            return Err(format!("{rev}: {regions} diff regions, {} hunks", commit.hunks.len()));
        }

        let ws_dir = scratch.join(format!("ws-{checked}"));
        let mut ws = materialize_pre_state(&commit, &GitTree::new(repo), &ws_dir).map_err(|e| e.to_string())?;
        for h in &commit.hunks {
            ws.apply_hunk(h).map_err(|e| format!("{rev} {}: {e}", h.id))?;
        }
        for change in commit.files.iter().filter(|f| !f.binary) {
            let expected = show_file(repo, rev, &change.path).map_err(|e| e.to_string())?.unwrap_or_default();
            let actual = fs::read(ws_dir.join(&change.path)).unwrap_or_default();
            if actual != expected {
                return Err(format!(
                    "{rev}: {} differs\n--- expected\n{}\n--- actual\n{}",
                    change.path,
                    String::from_utf8_lossy(&expected),
                    String::from_utf8_lossy(&actual)
                ));
            }
        }
        checked += 1;
    }
    Ok(checked)
}
