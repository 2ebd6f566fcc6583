//! The `langpref` binary: stage verbs, config files and the backend server.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::fixture;
use langpref::adapters::LexicalBackend;
use langpref::probe::wire::ProcessBackend;
use langpref::probe::{check_single_token_ids, ProbeBackend};

const BIN: &str = env!("CARGO_BIN_EXE_langpref");

fn langpref(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(dir).output().expect("binary runs")
}

fn common_args(dir: &Path) -> Vec<String> {
    vec![
        "--experiment".into(),
        "english_preference".into(),
        "--model".into(),
        "lexical".into(),
        "--languages".into(),
        "fr,de".into(),
        "--dataset".into(),
        fixture("eli5_small.jsonl").display().to_string(),
        "--cache-dir".into(),
        dir.join("cache").display().to_string(),
        "--out-dir".into(),
        dir.join("out").display().to_string(),
    ]
}

fn run_verb(verb: &str, dir: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec![verb.into()];
    args.extend(common_args(dir));
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    langpref(&refs, dir)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_lists_every_verb() {
    let dir = tempfile::tempdir().unwrap();
    let out = langpref(&["--help"], dir.path());
    let text = String::from_utf8_lossy(&out.stdout);
    for verb in ["translate", "generate-reports", "filter", "probe", "analyze", "run", "plot", "serve-backend"] {
        assert!(text.contains(verb), "{verb} missing from help");
    }
}

#[test]
fn filter_before_reports_fails_with_hint() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_verb("filter", dir.path(), &[]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("reports not found; run generate_reports"), "{}", stderr(&out));
}

#[test]
fn stage_verbs_match_full_run() {
    let staged = tempfile::tempdir().unwrap();
    for verb in ["translate", "generate-reports", "filter", "probe", "analyze"] {
        let out = run_verb(verb, staged.path(), &[]);
        assert!(out.status.success(), "{verb}: {}", stderr(&out));
    }
    let full = tempfile::tempdir().unwrap();
    let out = run_verb("run", full.path(), &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rel = "out/english_preference__lexical";
    for name in ["predictions.jsonl", "results.json", "metrics.jsonl", "table.csv"] {
        assert_eq!(
            fs::read(staged.path().join(rel).join(name)).unwrap(),
            fs::read(full.path().join(rel).join(name)).unwrap(),
            "{name}"
        );
    }
    assert!(full.path().join(rel).join("plots/accuracy_bars.svg").exists());

    let out = run_verb("plot", staged.path(), &["--kinds", "accuracy_bars,position_heatmap"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(staged.path().join(rel).join("plots/position_heatmap.csv").exists());
}

#[test]
fn resume_with_changed_seed_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_verb("run", dir.path(), &[]).status.success());
    assert!(run_verb("run", dir.path(), &["--resume"]).status.success());
    let out = run_verb("run", dir.path(), &["--resume", "--seed", "7"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("different configuration"), "{}", stderr(&out));
}

#[test]
fn config_file_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(fixture("miracl_small.jsonl"), dir.path().join("data.jsonl")).unwrap();
    fs::write(
        dir.path().join("exp.toml"),
        "experiment = \"relevance_vs_language\"\n\
         model_id = \"lexical\"\n\
         languages = \"fr\"\n\
         dataset = \"data.jsonl\"\n\
         dataset_format = \"miracl\"\n\
         seed = 3\n\
         cache_dir = \"cache\"\n\
         out_dir = \"out\"\n",
    )
    .unwrap();
    let out = langpref(&["run", "--config", "exp.toml"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let table = fs::read_to_string(dir.path().join("out/relevance_vs_language__lexical/table.csv")).unwrap();
    assert!(table.starts_with("language,variant,lexical\n"), "{table}");

    fs::write(dir.path().join("bad.toml"), "experiment = \"english_preference\"\nmodel_id = \"m\"\nlanguages = \"fr\"\ndataset = \"data.jsonl\"\nbogus = 1\n").unwrap();
    let out = langpref(&["run", "--config", "bad.toml"], dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("bogus"), "{}", stderr(&out));
}

#[test]
fn served_backend_matches_in_process() {
    let remote = ProcessBackend::spawn(&format!("{BIN} serve-backend --layers 5")).unwrap();
    let local = LexicalBackend::with_layers(5);
    assert_eq!(remote.model_id(), "lexical");
    assert_eq!(remote.layer_count(), Some(5));
    assert!(check_single_token_ids(&remote, 9).unwrap());
    let prompt = "Information:\nDocument ID: 1\nTitle: Cats\nContent: Cats purr when content.\n---\n\
                  Document ID: 2\nTitle: Water\nContent: Water boils at one hundred degrees.\n---\n\
                  Response: Water boils at one hundred degrees. [";
    assert_eq!(remote.next_token(prompt).unwrap(), local.next_token(prompt).unwrap());
    assert_eq!(remote.layer_trace(prompt).unwrap(), local.layer_trace(prompt).unwrap());
    assert_eq!(
        remote.sequence_logprob(prompt, "Water boils.").unwrap(),
        local.sequence_logprob(prompt, "Water boils.").unwrap()
    );
}
