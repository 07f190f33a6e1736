//! End-to-end runs of the `editflow` binary over a small generated
//! repository and scripted model gateways.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_editflow");

fn git(dir: &Path, args: &[&str]) -> String {
    let out = Command::new("git")
        .args(["-c", "user.name=Fixture", "-c", "user.email=fixture@example.com"])
        .args(args)
        .current_dir(dir)
        .env("GIT_AUTHOR_DATE", "2024-01-01T00:00:00Z")
        .env("GIT_COMMITTER_DATE", "2024-01-01T00:00:00Z")
        .output()
        .unwrap();
    assert!(out.status.success(), "git {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap().trim().to_string()
}

fn base_lines(prefix: &str) -> Vec<String> {
    (1..=40).map(|i| format!("{prefix}_{i} = {i}")).collect()
}

/// Rewrites the given 1-based lines of `file` and commits.
fn edit(dir: &Path, edits: &[(&str, usize, String)], message: &str) {
    for (file, line, text) in edits {
        let path = dir.join(file);
        let mut lines: Vec<String> = fs::read_to_string(&path).unwrap().lines().map(String::from).collect();
        lines[line - 1] = text.clone();
        fs::write(&path, lines.join("\n") + "\n").unwrap();
    }
    git(dir, &["commit", "-qam", message]);
}

/// Five commits: a root, a 6-hunk two-file commit (hunk `k` adds
/// `mark_k`), a single-hunk commit, a 5-hunk single-file commit, and a
/// 7-hunk three-file commit. With the default selection criteria (5 to 10
/// hunks over at least two files) exactly the second and the last pass.
struct Repo {
    dir: tempfile::TempDir,
    marked: String,
    tagged: String,
}

impl Repo {
    fn path(&self) -> &Path {
        self.dir.path()
    }
}

fn repo() -> Repo {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    git(p, &["init", "-q", "-b", "main"]);
    for f in ["a", "b", "c"] {
        fs::write(p.join(format!("{f}.py")), base_lines(f).join("\n") + "\n").unwrap();
    }
    git(p, &["add", "."]);
    git(p, &["commit", "-qm", "root"]);
    let marks: Vec<(&str, usize, String)> = [("a.py", 3), ("a.py", 10), ("a.py", 20), ("b.py", 5), ("b.py", 15), ("b.py", 25)]
        .iter()
        .enumerate()
        .map(|(k, &(f, l))| (f, l, format!("mark_{} = {}", k + 1, k + 1)))
        .collect();
    edit(p, &marks, "marked");
    let marked = git(p, &["rev-parse", "HEAD"]);
    edit(p, &[("a.py", 30, "solo = 1".into())], "single hunk");
    let one_file: Vec<_> = [2, 8, 14, 20, 26].iter().map(|&l| ("c.py", l, format!("one_file_{l} = 0"))).collect();
    edit(p, &one_file, "one file");
    let tags: Vec<_> = [("a.py", 35), ("a.py", 38), ("b.py", 33), ("b.py", 36), ("b.py", 39), ("c.py", 32), ("c.py", 38)]
        .iter()
        .enumerate()
        .map(|(k, &(f, l))| (f, l, format!("tag_{} = {}", k + 1, k + 1)))
        .collect();
    edit(p, &tags, "tagged");
    let tagged = git(p, &["rev-parse", "HEAD"]);
    Repo { dir, marked, tagged }
}

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Run {
    fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }
}

fn run(config: &Path, args: &[&str]) -> Run {
    let out: Output = Command::new(BIN)
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "error")
        .env_remove("EDITFLOW_API_KEY")
        .output()
        .unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn ok(config: &Path, args: &[&str]) -> Value {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    let r = run(config, &full);
    assert_eq!(r.code, 0, "{args:?}\nstdout: {}\nstderr: {}", r.stdout, r.stderr);
    r.json()
}

/// Writes `editflow.toml` into a fresh directory under `root`.
fn config(root: &Path, name: &str, repo: &Path, body: &str) -> PathBuf {
    let dir = root.join(name);
    fs::create_dir_all(&dir).unwrap();
    let path = dir.join("editflow.toml");
    let text = format!(
        "output_dir = \"out\"\nworkers = 2\n{body}\n[corpus]\nrepos = [{:?}]\nrange = \"main\"\n",
        repo.display().to_string()
    );
    fs::write(&path, text).unwrap();
    path
}

fn write_script(dir: &Path, script: &Value) -> PathBuf {
    let path = dir.join("mock.json");
    fs::write(&path, serde_json::to_string_pretty(script).unwrap()).unwrap();
    path
}

fn label(l: &str) -> Value {
    json!({"text": format!("{{\"label\": \"{l}\", \"rationale\": \"scripted\"}}")})
}

fn gateway_section(script: &Path) -> String {
    format!("[gateway]\nkind = \"mock\"\nmodel = \"scripted\"\nscript = {:?}\n", script.display().to_string())
}

fn out_dir(config: &Path) -> PathBuf {
    config.parent().unwrap().join("out")
}

fn ids(v: &Value) -> Vec<u32> {
    v.as_array().unwrap().iter().map(|x| x.as_u64().unwrap() as u32).collect()
}

#[test]
fn extract_caches_the_expected_subset() {
    let r = repo();
    let work = tempfile::tempdir().unwrap();
    let cfg = config(work.path(), "x", r.path(), "");
    let v = ok(&cfg, &["extract"]);
    assert_eq!(v["accepted"], 2);
    assert_eq!(v["rejected"].as_array().unwrap().len(), 3);
    let mut names: Vec<String> = fs::read_dir(out_dir(&cfg).join("commits"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut want = vec![format!("{}.json", r.marked), format!("{}.json", r.tagged)];
    want.sort();
    assert_eq!(names, want);

    let cached: Value = serde_json::from_str(&fs::read_to_string(out_dir(&cfg).join("commits").join(&want[0])).unwrap()).unwrap();
    let again = ok(&cfg, &["extract"]);
    assert_eq!(again["cached"], 2);
    assert!(again["written"].as_array().unwrap().is_empty());
    let after: Value = serde_json::from_str(&fs::read_to_string(out_dir(&cfg).join("commits").join(&want[0])).unwrap()).unwrap();
    assert_eq!(cached, after);
    assert_eq!(ok(&cfg, &["--force", "extract"])["written"].as_array().unwrap().len(), 2);
}

#[test]
fn extract_edge_cases() {
    let r = repo();
    let work = tempfile::tempdir().unwrap();
    let cfg = config(work.path(), "x", r.path(), "");
    let v = ok(&cfg, &["extract", "--range", "main..main"]);
    assert_eq!(v["accepted"], 0);
    assert!(!out_dir(&cfg).join("commits").exists());

    let missing = work.path().join("no-such-repo");
    assert_eq!(run(&cfg, &["extract", "--repo", missing.to_str().unwrap()]).code, 2);
    let bad = config(work.path(), "bad", &missing, "");
    let res = run(&bad, &["extract"]);
    assert_eq!(res.code, 2);
    assert!(res.stderr.contains("does not exist"), "{}", res.stderr);
    assert_eq!(run(&work.path().join("absent.toml"), &["extract"]).code, 2);
    assert_eq!(run(&cfg, &["no-such-command"]).code, 2);
}

#[test]
fn infer_graph_follows_the_script_and_is_idempotent() {
    let r = repo();
    let work = tempfile::tempdir().unwrap();
    let dir = work.path().join("g");
    fs::create_dir_all(&dir).unwrap();
    // mark_1 comes before mark_2; mark_4 and mark_5 go either way.
    let script = write_script(
        &dir,
        &json!({
            "entries": [
                {"user": {"regex": r"(?s)\bmark_1\b.*\nB:\n.*\bmark_2\b"}, "response": label("precedes")},
                {"user": {"regex": r"(?s)\bmark_4\b.*\nB:\n.*\bmark_5\b"}, "response": label("either")},
                {"user": {"regex": r"(?s)\btag_3\b.*\nB:\n.*\btag_7\b"}, "response": label("follows")}
            ],
            "default": label("unrelated")
        }),
    );
    let cfg = config(work.path(), "g", r.path(), &gateway_section(&script));
    ok(&cfg, &["extract"]);
    let v = ok(&cfg, &["infer-graph"]);
    assert_eq!(v["inferred"], 2);
    assert_eq!(v["calls"], 15 + 21);

    let read = |id: &str| -> Value {
        serde_json::from_str(&fs::read_to_string(out_dir(&cfg).join("graphs").join(format!("{id}.json"))).unwrap()).unwrap()
    };
    let g = read(&r.marked);
    assert_eq!(g["complete"], true);
    assert_eq!(g["pairs"].as_array().unwrap().len(), 15);
    assert_eq!(g["graph"]["edges"], json!([[1, 2], [4, 5], [5, 4]]));
    assert_eq!(read(&r.tagged)["graph"]["edges"], json!([[7, 3]]));

    let before = fs::read_to_string(out_dir(&cfg).join("graphs").join(format!("{}.json", r.marked))).unwrap();
    let again = ok(&cfg, &["infer-graph"]);
    assert_eq!(again["skipped"], 2);
    assert_eq!(again["calls"], 0);
    let after = fs::read_to_string(out_dir(&cfg).join("graphs").join(format!("{}.json", r.marked))).unwrap();
    assert_eq!(before, after);
}

#[test]
fn infer_graph_resumes_after_gateway_failure() {
    let r = repo();
    let work = tempfile::tempdir().unwrap();
    let dir = work.path().join("f");
    fs::create_dir_all(&dir).unwrap();
    // Any pair involving mark_3 as B fails authentication.
    let failing = write_script(
        &dir,
        &json!({
            "entries": [{"user": {"regex": r"(?s)\nB:\n.*\bmark_3\b"}, "error": "auth"}],
            "default": label("either")
        }),
    );
    let cfg = config(work.path(), "f", r.path(), &gateway_section(&failing));
    ok(&cfg, &["extract"]);
    let res = run(&cfg, &["--json", "infer-graph"]);
    assert_eq!(res.code, 3, "{}", res.stderr);
    assert_eq!(res.json()["failed"].as_array().unwrap().len(), 1);
    let path = out_dir(&cfg).join("graphs").join(format!("{}.json", r.marked));
    let partial: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(partial["complete"], false);
    // Pair (1,2) is labelled; (1,3) is the first to fail.
    assert_eq!(partial["pairs"].as_array().unwrap().len(), 1);

    fs::write(&failing, serde_json::to_string(&json!({"default": label("either")})).unwrap()).unwrap();
    let v = ok(&cfg, &["infer-graph"]);
    assert_eq!(v["inferred"], 1);
    assert_eq!(v["skipped"], 1);
    assert_eq!(v["calls"], 14);
    let done: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(done["complete"], true);
    assert_eq!(done["graph"]["edges"].as_array().unwrap().len(), 30);
}

#[test]
fn infer_graph_skips_single_hunk_commits() {
    let r = repo();
    let work = tempfile::tempdir().unwrap();
    let dir = work.path().join("s");
    fs::create_dir_all(&dir).unwrap();
    let script = write_script(&dir, &json!({"default": label("unrelated")}));
    // The generated file ends with the corpus table, so the selection
    // criteria can be appended.
    let cfg = config(work.path(), "s", r.path(), &gateway_section(&script));
    let text = fs::read_to_string(&cfg).unwrap() + "\n[corpus.filter]\nmin_hunks = 1\nmin_files = 1\n";
    fs::write(&cfg, text).unwrap();
    let v = ok(&cfg, &["extract"]);
    assert_eq!(v["accepted"], 4);
    let g = ok(&cfg, &["infer-graph"]);
    assert_eq!(g["too_small"], 1);
    assert_eq!(g["inferred"], 3);
}

const SENTINEL: &str = "CHECK-DEPENDENCY";

/// Ground truth for the marked commit: every pair (a, b) with a < b is
/// labelled by `(a + b) % 3`, never `unrelated`.
fn marked_truth(a: u32, b: u32) -> &'static str {
    ["precedes", "follows", "either"][((a + b) % 3) as usize]
}

fn sentinel_script(dir: &Path) -> PathBuf {
    let mut entries = vec![
        json!({"system": {"contains": "You write instructions"}, "response": {"text": "Decide how the two hunks are ordered."}}),
        json!({"system": {"contains": "You review an instruction prompt"}, "response": {"text": "Look at call dependencies."}}),
        json!({
            "system": {"contains": "You improve an instruction prompt"},
            "response": {"text": format!("Order the hunks by their dependencies. {SENTINEL}")}
        }),
    ];
    for a in 1..=6u32 {
        for b in a + 1..=6 {
            entries.push(json!({
                "system": {"contains": SENTINEL},
                "user": {"regex": format!(r"(?s)\bmark_{a}\b.*\nB:\n.*\bmark_{b}\b")},
                "response": label(marked_truth(a, b)),
            }));
        }
    }
    write_script(dir, &json!({"entries": entries, "default": label("unrelated")}))
}

fn annotation(commit: &str, repo: &Path, n: u32, truth: impl Fn(u32, u32) -> &'static str) -> Value {
    let mut pairs = Vec::new();
    for a in 1..=n {
        for b in a + 1..=n {
            pairs.push(json!({"a": a, "b": b, "label": truth(a, b)}));
        }
    }
    json!({"commit_id": commit, "repo": repo.display().to_string(), "pairs": pairs})
}

#[test]
fn tune_converges_on_the_sentinel_oracle() {
    let r = repo();
    let work = tempfile::tempdir().unwrap();
    let dir = work.path().join("t");
    fs::create_dir_all(&dir).unwrap();
    let script = sentinel_script(&dir);
    let ann_dir = dir.join("ann");
    fs::create_dir_all(&ann_dir).unwrap();
    fs::write(
        ann_dir.join("marked.json"),
        annotation(&r.marked, r.path(), 6, marked_truth).to_string(),
    )
    .unwrap();
    let body = format!(
        "seed = 11\n{}\n[tuner]\nepochs = 3\nbatch_size = 8\ntrain_fraction = 1.0\nannotations = \"ann/*.json\"\n",
        gateway_section(&script)
    );
    let cfg = config(work.path(), "t", r.path(), &body);

    // No commit cache: the annotation's repository is used directly.
    let v = ok(&cfg, &["tune"]);
    assert_eq!(v["result"]["best"]["accuracy_on_train"], 1.0);
    assert_eq!(v["result"]["train_samples"], 15);
    let tuned = out_dir(&cfg).join("prompts").join("tuned.txt");
    let text = fs::read_to_string(&tuned).unwrap();
    assert!(text.contains(SENTINEL));

    assert_eq!(ok(&cfg, &["tune"])["skipped"], true);

    // Resume from the finished checkpoint reproduces the winner.
    fs::remove_file(&tuned).unwrap();
    fs::remove_file(out_dir(&cfg).join("tune").join("result.json")).unwrap();
    let resumed = ok(&cfg, &["tune"]);
    assert_eq!(resumed["result"]["best"], v["result"]["best"]);
    assert_eq!(fs::read_to_string(&tuned).unwrap(), text);

    let fresh = ok(&cfg, &["--force", "tune"]);
    assert_eq!(fresh["result"], v["result"]);
    assert_eq!(fresh["usage"], v["usage"]);

    let zero = config(work.path(), "t0", r.path(), &body.replace("epochs = 3", "epochs = 0"));
    let res = run(&zero, &["tune"]);
    assert_eq!(res.code, 2);
    assert!(res.stderr.contains("epochs"), "{}", res.stderr);
}

/// Chain graph 1 -> 2 -> ... -> n, every other pair unrelated.
fn chain(a: u32, b: u32) -> &'static str {
    if b == a + 1 {
        "precedes"
    } else {
        "unrelated"
    }
}

struct SimSetup {
    _work: tempfile::TempDir,
    _repo: Repo,
    cfg: PathBuf,
    ann: String,
}

fn sim_setup(extra: &str) -> SimSetup {
    let r = repo();
    let work = tempfile::tempdir().unwrap();
    let dir = work.path().join("sim");
    fs::create_dir_all(dir.join("ann")).unwrap();
    fs::write(dir.join("ann").join("m.json"), annotation(&r.marked, r.path(), 6, chain).to_string()).unwrap();
    fs::write(dir.join("ann").join("t.json"), annotation(&r.tagged, r.path(), 7, chain).to_string()).unwrap();
    let script = write_script(&dir, &json!({"default": label("either")}));
    let body = format!(
        "seed = 5\n{extra}\n{}\n[sut.oracle]\nkind = \"oracle\"\n\n[sut.noisy]\nkind = \"mock\"\nbreak_rate = 0.25\njump_rate = 0.25\nrevert_rate = 0.25\nbatch_size = 4\n\n[sut.broken]\nkind = \"mock\"\nbreak_rate = 1.0\n\n[sut.clean]\nkind = \"mock\"\n",
        gateway_section(&script)
    );
    let cfg = config(work.path(), "sim", r.path(), &body);
    ok(&cfg, &["extract"]);
    let ann = dir.join("ann").join("*.json").display().to_string();
    SimSetup {
        _work: work,
        _repo: r,
        cfg,
        ann,
    }
}

fn traces_of(cfg: &Path, sut: &str, config: &str) -> Vec<Value> {
    let dir = out_dir(cfg).join("traces").join(sut).join(config);
    let mut paths: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    paths
        .iter()
        .map(|p| serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap())
        .collect()
}

fn categories(traces: &[Value]) -> [usize; 4] {
    let mut counts = [0; 4];
    for t in traces {
        for s in t["steps"].as_array().unwrap() {
            for c in s["classifications"].as_array().unwrap() {
                let k = ["KEEP", "JUMP", "REVERT", "BREAK"].iter().position(|n| c == n).unwrap();
                counts[k] += 1;
            }
        }
    }
    counts
}

#[test]
fn simulate_is_deterministic_and_follows_the_noise_profile() {
    let s = sim_setup("");
    let v = ok(&s.cfg, &["simulate", "--sut", "noisy", "--annotations", &s.ann]);
    assert_eq!(v["simulated"], 2);
    let dir = out_dir(&s.cfg).join("traces").join("noisy").join("original");
    let snapshot = |d: &Path| -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<_> = fs::read_dir(d)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    let first = snapshot(&dir);
    assert_eq!(ok(&s.cfg, &["simulate", "--sut", "noisy", "--annotations", &s.ann])["skipped"], 2);
    ok(&s.cfg, &["--force", "simulate", "--sut", "noisy", "--annotations", &s.ann]);
    assert_eq!(snapshot(&dir), first);

    for t in traces_of(&s.cfg, "noisy", "original") {
        let order: Vec<u32> = t["steps"].as_array().unwrap().iter().map(|s| s["chosen"].as_u64().unwrap() as u32).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(sorted, (1..=order.len() as u32).collect::<Vec<_>>());
        assert_eq!(t["config"]["sut_id"], "noisy");
    }

    ok(&s.cfg, &["simulate", "--sut", "broken", "--annotations", &s.ann]);
    let broken = categories(&traces_of(&s.cfg, "broken", "original"));
    assert!(broken[3] > 0);
    assert_eq!(broken[..3], [0, 0, 0]);
    ok(&s.cfg, &["simulate", "--sut", "clean", "--annotations", &s.ann]);
    let clean = categories(&traces_of(&s.cfg, "clean", "original"));
    assert!(clean[0] > 0);
    assert_eq!(clean[1..], [0, 0, 0]);
    // On a chain the oracle's only suggestion is the next link.
    ok(&s.cfg, &["simulate", "--sut", "oracle", "--annotations", &s.ann]);
    for t in traces_of(&s.cfg, "oracle", "original") {
        for step in t["steps"].as_array().unwrap().iter().skip(1) {
            let prior = ids(&step["prior"]);
            assert_eq!(step["classifications"], json!(["KEEP"]));
            assert_eq!(step["chosen"].as_u64().unwrap() as usize, prior.len() + 1);
        }
    }
}

#[test]
fn simulate_rejects_bad_requests() {
    let s = sim_setup("");
    let res = run(&s.cfg, &["simulate", "--sut", "nobody", "--annotations", &s.ann]);
    assert_eq!(res.code, 2);
    assert!(res.stderr.contains("unknown SUT"), "{}", res.stderr);

    let text = fs::read_to_string(&s.cfg).unwrap().replacen("seed = 5\n", "", 1);
    fs::write(&s.cfg, text).unwrap();
    let res = run(&s.cfg, &["simulate", "--sut", "oracle", "--annotations", &s.ann]);
    assert_eq!(res.code, 2);
    assert!(res.stderr.contains("seed"), "{}", res.stderr);
}

#[test]
fn report_rows_match_the_traces() {
    let s = sim_setup("");
    let empty = ok(&s.cfg, &["report"]);
    assert_eq!(empty["report"]["rows"], json!([]));
    assert!(fs::read_to_string(out_dir(&s.cfg).join("report.txt")).unwrap().contains("no data"));

    for sut in ["noisy", "clean"] {
        ok(&s.cfg, &["simulate", "--sut", sut, "--annotations", &s.ann]);
        ok(&s.cfg, &["simulate", "--sut", sut, "--with-filter", "--annotations", &s.ann]);
    }
    let v = ok(&s.cfg, &["report"]);
    let rows = v["report"]["rows"].as_array().unwrap();
    let keys: Vec<(String, String)> = rows
        .iter()
        .map(|r| (r["sut"].as_str().unwrap().to_string(), r["config"].as_str().unwrap().to_string()))
        .collect();
    assert_eq!(
        keys,
        [("clean", "original"), ("clean", "filter"), ("noisy", "original"), ("noisy", "filter")]
            .map(|(a, b)| (a.to_string(), b.to_string()))
    );
    for row in rows {
        let traces = traces_of(&s.cfg, row["sut"].as_str().unwrap(), row["config"].as_str().unwrap());
        let c = categories(&traces);
        let total: usize = c.iter().sum();
        let keep = 100.0 * c[0] as f64 / total as f64;
        assert!((row["flow"]["keep_pct"].as_f64().unwrap() - keep).abs() < 1e-9);
        let tokens: u64 = traces.iter().map(|t| t["totals"]["input_tokens"].as_u64().unwrap()).sum();
        assert_eq!(row["resources"]["totals"]["input_tokens"].as_u64().unwrap(), tokens);
    }

    let one = ok(&s.cfg, &["report", "--traces", &out_dir(&s.cfg).join("traces/clean/filter/*.json").display().to_string()]);
    let traces = traces_of(&s.cfg, "clean", "filter");
    let cost: f64 = traces.iter().map(|t| t["totals"]["cost"].as_f64().unwrap()).sum();
    assert_eq!(one["report"]["totals"]["cost"].as_f64().unwrap(), cost);
    assert_eq!(one["report"]["traces"], 2);
}

#[test]
fn report_threshold_failure_exits_one() {
    let s = sim_setup("[thresholds]\nmax_break_pct = 10.0\n");
    ok(&s.cfg, &["simulate", "--sut", "clean", "--annotations", &s.ann]);
    assert_eq!(run(&s.cfg, &["report"]).code, 0);
    ok(&s.cfg, &["simulate", "--sut", "broken", "--annotations", &s.ann]);
    let res = run(&s.cfg, &["--json", "report"]);
    assert_eq!(res.code, 1, "{}", res.stderr);
    let v = res.json();
    assert_eq!(v["exit_code"], 1);
    assert!(v["threshold_failures"][0].as_str().unwrap().starts_with("broken/original"));
}

#[test]
fn filter_command_reads_a_batch_document() {
    let s = sim_setup("");
    let last = json!({"id": 1, "file": "a.py", "line_start": 3, "line_end": 3, "content_pre": "a_3 = 3\n", "content_post": "mark_1 = 1\n"});
    let edit = |n: u32| json!({"file": "a.py", "line_start": 10, "line_end": 10, "content_post": format!("x_{n} = {n}\n"), "source_rank": n});
    let req = json!({"protocol_version": 1, "last_edit": last, "edits": [edit(0), edit(1)]});
    let input = out_dir(&s.cfg).join("req.json");
    fs::write(&input, req.to_string()).unwrap();
    let r = run(&s.cfg, &["filter", "--input", input.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v = r.json();
    assert_eq!(v["kept"].as_array().unwrap().len(), 2);
    assert_eq!(v["decisions"].as_array().unwrap().len(), 2);

    let bad = out_dir(&s.cfg).join("bad.json");
    fs::write(&bad, json!({"protocol_version": 7, "last_edit": last, "edits": []}).to_string()).unwrap();
    assert_eq!(run(&s.cfg, &["filter", "--input", bad.to_str().unwrap()]).code, 2);
}
