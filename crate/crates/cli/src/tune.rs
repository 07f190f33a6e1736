use std::collections::BTreeMap;

use editflow_core::corpus::git::extract_commit;
use editflow_core::corpus::Commit;
use editflow_core::flow::AnnotationFile;
use editflow_core::recovery::{
    evaluate_prompt, split_by_commit, tune_prompt_with, EvalReport, InferOptions, LabeledDataset, PromptCandidate,
    Split, TuneError, TunerCheckpoint,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{GatewayFactory, HarnessConfig};
use crate::error::{CliError, CliResult, Classify};
use crate::store::{read_json, write_atomic, write_json, Store};
use crate::Outcome;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: PromptCandidate,
    pub train_samples: usize,
    pub test_samples: usize,
    pub train_commits: Vec<String>,
    pub test_commits: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<EvalReport>,
    pub epochs_run: usize,
}

fn annotation_files(pattern: &str) -> CliResult<Vec<AnnotationFile>> {
    let mut paths: Vec<_> = glob::glob(pattern)
        .or_config(format!("bad annotation glob {pattern:?}"))?
        .filter_map(Result::ok)
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::config(format!("no annotation files match {pattern:?}")));
    }
    paths.iter().map(|p| read_json(p)).collect()
}

/// The cached commit, or a fresh extraction from the annotation's repo.
fn commit_for(store: &Store, ann: &AnnotationFile) -> CliResult<Commit> {
    let path = store.commit_path(&ann.commit_id);
    if path.exists() {
        return read_json(&path);
    }
    if ann.repo.is_empty() {
        return Err(CliError::config(format!(
            "commit {} is not cached and its annotation names no repository",
            ann.commit_id
        )));
    }
    extract_commit(ann.repo.as_ref(), &ann.commit_id).or_external(format!("cannot extract {}", ann.commit_id))
}

fn abort(e: TuneError) -> CliError {
    match e {
        TuneError::InvalidConfig(_) | TuneError::EmptyDataset => CliError::config(e),
        TuneError::Aborted { .. } => CliError::external(e),
    }
}

pub fn run(cfg: &HarnessConfig, annotations: Option<String>, force: bool) -> CliResult<Outcome> {
    let store = Store::new(&cfg.output_dir);
    let pattern = annotations
        .or_else(|| cfg.tuner.annotations.clone())
        .ok_or_else(|| CliError::config("no annotations given (use --annotations or tuner.annotations)"))?;
    let seed = cfg.seed.unwrap_or(0);
    let tcfg = cfg.tuner_config(seed);
    let result_path = store.tune_result_path();
    if !force && result_path.exists() && store.tuned_prompt_path().exists() {
        let prev: TuneResult = read_json(&result_path)?;
        return Ok(Outcome::ok(
            format!("already tuned (train accuracy {:.4})", prev.best.accuracy_on_train.unwrap_or(0.0)),
            json!({"skipped": true, "result": prev}),
        ));
    }
    let gateways = GatewayFactory::from_config(cfg, "tune")?;

    let anns = annotation_files(&pattern)?;
    let mut commits = Vec::new();
    for a in &anns {
        commits.push(commit_for(&store, a)?);
    }
    let labels: Vec<_> = anns.iter().map(AnnotationFile::to_label_set).collect();
    let all = LabeledDataset::from_annotations(Split::Train, commits.iter().zip(&labels));
    let (train, test) = split_by_commit(all.samples, cfg.tuner.train_fraction, seed);
    if train.is_empty() {
        return Err(CliError::config("the training split is empty"));
    }

    let ck_path = store.checkpoint_path();
    let resume: Option<TunerCheckpoint> = if !force && ck_path.exists() { Some(read_json(&ck_path)?) } else { None };
    let gw = gateways.build();
    let mut sink_err = None;
    let outcome = tune_prompt_with(&train, &tcfg, &gw, resume, &mut |ck| {
        if let Err(e) = write_json(&ck_path, ck) {
            sink_err.get_or_insert(e);
        }
    });
    if let Some(e) = sink_err {
        return Err(e);
    }
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            if let TuneError::Aborted { checkpoint, .. } = &e {
                write_json(&ck_path, &**checkpoint)?;
            }
            return Err(abort(e));
        }
    };

    let test_report = if test.is_empty() {
        None
    } else {
        let opts = InferOptions {
            temperature: tcfg.temperature,
            max_output_tokens: tcfg.max_output_tokens,
        };
        let eval_gw = gateways.build();
        Some(evaluate_prompt(&outcome.best, &test, &eval_gw, &opts).or_external("held-out evaluation failed")?)
    };
    let ids = |d: &LabeledDataset| d.commit_ids().into_iter().map(String::from).collect::<Vec<_>>();
    let result = TuneResult {
        best: outcome.best.clone(),
        train_samples: train.len(),
        test_samples: test.len(),
        train_commits: ids(&train),
        test_commits: ids(&test),
        test: test_report,
        epochs_run: outcome.checkpoint.history.len(),
    };
    let prompt_path = store.tuned_prompt_path();
    let mut text = outcome.best.text.clone();
    text.push('\n');
    write_atomic(&prompt_path, text.as_bytes())?;
    write_json(&result_path, &result)?;

    let per_epoch: BTreeMap<u32, f64> = outcome
        .checkpoint
        .history
        .iter()
        .map(|r| (r.epoch, r.p_star_accuracy))
        .collect();
    let mut summary = format!(
        "tuned prompt written to {} (train accuracy {:.4} on {} samples",
        prompt_path.display(),
        outcome.best.accuracy_on_train.unwrap_or(0.0),
        train.len()
    );
    if let Some(t) = &result.test {
        summary.push_str(&format!(", held-out accuracy {:.4} on {} samples", t.accuracy, test.len()));
    }
    summary.push(')');
    Ok(Outcome::ok(
        summary,
        json!({
            "skipped": false,
            "prompt": prompt_path,
            "result": result,
            "epoch_accuracy": per_epoch,
            "usage": gw.usage_since(0),
        }),
    ))
}
