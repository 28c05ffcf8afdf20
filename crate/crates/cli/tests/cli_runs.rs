//! End-to-end runs of the compiled binary against replay fixtures: every
//! subcommand, the resume path, degradation on missing candidates, and hard
//! failures on malformed inputs.

mod common;

use std::fs;
use std::path::Path;

use common::*;
use dirscribe_core::llmclient::{request_key, Cassette};
use dirscribe_core::pipeline::builtin_template;
use tempfile::TempDir;

const TRIER: &[(&str, u16)] = &[("Trier", 1853)];
const TWO_CITIES: &[(&str, u16)] = &[("Aachen", 1838), ("Bonn", 1850)];

fn read(root: &Path, rel: &str) -> String {
    fs::read_to_string(root.join(rel)).unwrap_or_else(|e| panic!("cannot read {rel}: {e}"))
}

fn report_json(root: &Path, rel: &str) -> serde_json::Value {
    serde_json::from_str(&read(root, rel)).expect("report.json parses")
}

#[test]
fn ocr_replay_transcribes_every_page() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 3);

    let output = run_ok(root, &["--cassette", "replay:cassette.json", "ocr"]);
    let out = stdout(&output);
    assert!(out.contains("ocr: Trier-1853 done"), "stdout:\n{out}");
    assert!(out.contains("Trier-1853 page 0: 0.50s"), "stdout:\n{out}");

    assert_eq!(read(root, "runs/fixture/ocr/Trier-1853/final.txt"), gt_txt("Trier", 1853, 3));
    for p in 0..3 {
        assert_eq!(
            read(root, &format!("runs/fixture/ocr/Trier-1853/pages/page_000{p}.txt")),
            page_text("Trier", 1853, p)
        );
    }

    let log = read(root, "runs/fixture/ocr/Trier-1853/provenance.log");
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 4, "a run line and three request lines:\n{log}");
    assert!(lines[0].contains("\"kind\":\"run\"") && lines[0].contains("\"requests\":3"));
    assert!(lines[1].contains("\"page\":0") && lines[1].contains("\"prompt\":\"ocr-default\""));
    assert!(lines[3].contains("\"page\":2"));
}

#[test]
fn ocr_resumes_without_touching_the_provider() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 2);

    let first = run_ok(root, &["--cassette", "replay:cassette.json", "ocr"]);
    assert!(!stdout(&first).contains("(cached)"));
    let before = snapshot_tree(&root.join("runs"));

    // No cassette this time: any fresh request would need the (unset)
    // credential, so success proves every page came from the store.
    let second = run_ok(root, &["ocr"]);
    assert!(stdout(&second).contains("(cached)"));
    assert_eq!(before, snapshot_tree(&root.join("runs")), "rerun must rewrite identical bytes");
}

#[test]
fn ocr_directory_filter_selects_a_subset() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TWO_CITIES, 1);

    let output =
        run_ok(root, &["--cassette", "replay:cassette.json", "--directory", "Bonn-1850", "ocr"]);
    assert!(!stdout(&output).contains("Aachen-1838"));
    assert!(root.join("runs/fixture/ocr/Bonn-1850/final.txt").is_file());
    assert!(!root.join("runs/fixture/ocr/Aachen-1838").exists());
}

#[test]
fn unknown_directory_filter_fails() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 1);

    let output = run_err(root, &["--directory", "Nowhere-1900", "ocr"]);
    assert!(stderr(&output).contains("unknown directory Nowhere-1900"));

    let output = run_err(root, &["--directory", "nonsense", "ocr"]);
    assert!(stderr(&output).contains("error:"));
}

#[test]
fn missing_config_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let output = run_err(tmp.path(), &["ocr"]);
    assert!(stderr(&output).contains("cannot read config"));
}

#[test]
fn live_requests_require_the_credential_env() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 1);

    let output = run_err(root, &["ocr"]);
    let err = stderr(&output);
    assert!(
        err.contains("credential environment variable DIRSCRIBE_FIXTURE_KEY is not set"),
        "stderr:\n{err}"
    );
    assert!(err.contains("1 of 1 directories failed"), "stderr:\n{err}");
}

#[test]
fn cassette_miss_is_a_hard_error() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_corpus(root, TRIER, 2);
    write_cassette(root, TRIER, 1); // covers page 0 only
    write_config(root, "", "");

    let output = run_err(root, &["--cassette", "replay:cassette.json", "ocr"]);
    let err = stderr(&output);
    assert!(err.contains("page 1 of Trier-1853 failed"), "stderr:\n{err}");
    assert!(err.contains("cassette miss for key"), "stderr:\n{err}");
}

#[test]
fn postcorrect_replaces_the_noisy_baseline() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 2);

    let output = run_ok(
        root,
        &["--cassette", "replay:cassette.json", "postcorrect", "--baseline", "transkribus"],
    );
    assert!(stdout(&output).contains("postcorrect: Trier-1853 done"));
    assert_eq!(
        read(root, "runs/fixture/postcorrect/Trier-1853/final.txt"),
        gt_txt("Trier", 1853, 2)
    );
    let log = read(root, "runs/fixture/postcorrect/Trier-1853/provenance.log");
    assert!(log.contains("\"prompt\":\"postcorrect-default\""));
}

#[test]
fn postcorrect_unknown_baseline_fails() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 1);

    let output = run_err(
        root,
        &["--cassette", "replay:cassette.json", "postcorrect", "--baseline", "handwriting"],
    );
    assert!(stderr(&output).contains("has no baseline named handwriting"));
}

#[test]
fn ner_image_mode_writes_the_canonical_csv() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 3);

    run_ok(root, &["--cassette", "replay:cassette.json", "ner", "--mode", "image"]);
    assert_eq!(read(root, "runs/fixture/ner-image/Trier-1853/final.csv"), gt_csv("Trier", 3));
}

#[test]
fn ner_gt_text_mode_is_a_single_request() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 2);

    run_ok(root, &["--cassette", "replay:cassette.json", "ner", "--mode", "gt-text"]);
    assert_eq!(read(root, "runs/fixture/ner-gt-text/Trier-1853/final.csv"), gt_csv("Trier", 2));
    assert!(root.join("runs/fixture/ner-gt-text/Trier-1853/pages/response.txt").is_file());

    let log = read(root, "runs/fixture/ner-gt-text/Trier-1853/provenance.log");
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 2, "a run line and one request line:\n{log}");
    assert!(!lines[1].contains("\"page\""), "whole-directory request has no page index");
}

#[test]
fn ner_ocr_text_mode_reads_the_baseline() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 2);

    run_ok(
        root,
        &[
            "--cassette",
            "replay:cassette.json",
            "ner",
            "--mode",
            "ocr-text",
            "--baseline",
            "transkribus",
        ],
    );
    assert_eq!(read(root, "runs/fixture/ner-ocr-text/Trier-1853/final.csv"), gt_csv("Trier", 2));
}

#[test]
fn ner_ocr_text_mode_reads_a_prior_run() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 2);

    run_ok(root, &["--cassette", "replay:cassette.json", "ocr"]);
    run_ok(
        root,
        &[
            "--cassette",
            "replay:cassette.json",
            "ner",
            "--mode",
            "ocr-text",
            "--from-run",
            "runs/fixture/ocr",
        ],
    );
    assert_eq!(read(root, "runs/fixture/ner-ocr-text/Trier-1853/final.csv"), gt_csv("Trier", 2));
}

#[test]
fn ner_mode_and_source_flags_must_agree() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 1);

    let output = run_err(root, &["ner", "--mode", "gt-text", "--baseline", "transkribus"]);
    assert!(stderr(&output).contains("drop --baseline"));

    let output = run_err(root, &["ner", "--mode", "ocr-text"]);
    assert!(stderr(&output).contains("needs exactly one of --baseline or --from-run"));
}

#[test]
fn ner_malformed_reply_fails_and_keeps_the_raw_text() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 1);

    let cassette_path = root.join("cassette.json");
    let mut cassette = Cassette::load(&cassette_path).unwrap();
    let ner = builtin_template("ner-image").unwrap();
    let key = request_key(MODEL, ner.body(), Some(&page_image("Trier", 1853, 0)));
    cassette.entries.get_mut(&key).expect("fixture entry").text = "not json at all".to_string();
    cassette.save(&cassette_path).unwrap();

    let output = run_err(root, &["--cassette", "replay:cassette.json", "ner", "--mode", "image"]);
    assert!(stderr(&output).contains("Trier-1853 page 0"), "stderr:\n{}", stderr(&output));
    assert_eq!(
        read(root, "runs/fixture/ner-image/Trier-1853/pages/page_0000.txt"),
        "not json at all",
        "the raw reply stays on disk for inspection"
    );
}

#[test]
fn eval_ocr_of_a_perfect_run_is_all_zeros() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 2);

    run_ok(root, &["--cassette", "replay:cassette.json", "ocr"]);
    let output = run_ok(root, &["eval-ocr", "--run", "runs/fixture/ocr"]);
    let out = stdout(&output);
    assert!(out.contains("Transcription evaluation, candidate: ocr"), "stdout:\n{out}");
    assert!(out.contains("Trier-1853") && out.contains("0.00"), "stdout:\n{out}");

    let json = report_json(root, "runs/fixture/eval-ocr-ocr/report.json");
    assert_eq!(json["directories"][0]["normalized"]["cer"], 0.0);
    assert_eq!(json["directories"][0]["non_normalized"]["wer"], 0.0);
    assert_eq!(read(root, "runs/fixture/eval-ocr-ocr/report.txt"), out);
}

#[test]
fn eval_ocr_counts_a_single_substitution() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 1);
    fs::write(root.join("Trier-1853/gt.txt"), "a".repeat(100)).unwrap();

    let fake = root.join("fake/Trier-1853");
    fs::create_dir_all(&fake).unwrap();
    fs::write(fake.join("final.txt"), format!("{}b", "a".repeat(99))).unwrap();

    let output = run_ok(root, &["eval-ocr", "--run", "fake"]);
    let out = stdout(&output);
    assert!(out.contains("1.00"), "one substitution in 100 chars is 1.00% CER\n{out}");
    assert!(out.contains("100.00"), "the only word differs, so WER is 100.00%\n{out}");
}

#[test]
fn eval_ocr_micro_average_pools_edits_over_directories() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TWO_CITIES, 1);
    fs::write(root.join("Aachen-1838/gt.txt"), "aaaa").unwrap();
    fs::write(root.join("Bonn-1850/gt.txt"), "bb").unwrap();

    for (dir, text) in [("Aachen-1838", "aaab"), ("Bonn-1850", "bb")] {
        let fake = root.join("fake").join(dir);
        fs::create_dir_all(&fake).unwrap();
        fs::write(fake.join("final.txt"), text).unwrap();
    }

    let output = run_ok(root, &["eval-ocr", "--run", "fake"]);
    let out = stdout(&output);
    let micro = out.lines().find(|l| l.contains("Full Sample (micro)")).expect("micro row");
    assert!(micro.contains("16.67"), "1 edit over 6 chars pooled\n{out}");
    let macro_row = out.lines().find(|l| l.contains("Full Sample (macro)")).expect("macro row");
    assert!(macro_row.contains("12.50"), "mean of 25% and 0%\n{out}");
}

#[test]
fn eval_ocr_missing_candidate_warns_but_succeeds() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TWO_CITIES, 1);

    let fake = root.join("fake/Aachen-1838");
    fs::create_dir_all(&fake).unwrap();
    fs::write(fake.join("final.txt"), gt_txt("Aachen", 1838, 1)).unwrap();

    let output = run_ok(root, &["eval-ocr", "--run", "fake"]);
    assert!(stderr(&output).contains("Bonn-1850: no candidate transcription"));
    let bonn_row = stdout(&output)
        .lines()
        .find(|l| l.starts_with("Bonn-1850"))
        .expect("row for the skipped directory")
        .to_string();
    assert!(bonn_row.contains('-'), "missing scores print as dashes: {bonn_row}");

    let json = report_json(root, "runs/fixture/eval-ocr-fake/report.json");
    assert_eq!(json["skipped"], serde_json::json!(["Bonn-1850"]));
    assert_eq!(json["directories"].as_array().unwrap().len(), 1);
}

#[test]
fn eval_ocr_scores_a_named_baseline() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 2);

    let output = run_ok(root, &["eval-ocr", "--baseline", "transkribus"]);
    let out = stdout(&output);
    assert!(out.contains("Transcription evaluation, candidate: transkribus"));

    // The baseline mangles two characters per page, so its CER is nonzero.
    let json = report_json(root, "runs/fixture/eval-ocr-transkribus/report.json");
    let cer = json["directories"][0]["normalized"]["cer"].as_f64().unwrap();
    assert!(cer > 0.0, "noisy baseline must not score 0: {cer}");
}

#[test]
fn eval_ocr_needs_exactly_one_candidate() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 1);

    let output = run_err(root, &["eval-ocr"]);
    assert!(stderr(&output).contains("exactly one of --run or --baseline"));

    let output =
        run_err(root, &["eval-ocr", "--run", "runs/fixture/ocr", "--baseline", "transkribus"]);
    assert!(stderr(&output).contains("cannot be used with"));
}

#[test]
fn eval_ner_identity_run_scores_hundred_percent() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 3);

    run_ok(root, &["--cassette", "replay:cassette.json", "ner", "--mode", "image"]);
    let output = run_ok(root, &["eval-ner", "--run", "runs/fixture/ner-image"]);
    let out = stdout(&output);
    assert!(out.contains("fuzzy threshold: 0.90"), "stdout:\n{out}");
    assert!(out.contains("100.00"), "stdout:\n{out}");
    assert!(out.contains("(1 of 1 directories)"), "stdout:\n{out}");

    let json = report_json(root, "runs/fixture/eval-ner-ner-image/report.json");
    assert_eq!(json["aggregate"]["counts"]["cells"], 24, "3 pages x 2 rows x 4 cells");
    assert_eq!(json["aggregate"]["counts"]["strict"], 24);
    assert_eq!(read(root, "runs/fixture/eval-ner-ner-image/cell_diff.txt"), "");
}

#[test]
fn eval_ner_gates_mismatched_row_counts() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TWO_CITIES, 1);

    // Aachen matches its ground truth; Bonn is one row short.
    let aachen = root.join("fake/Aachen-1838");
    fs::create_dir_all(&aachen).unwrap();
    fs::write(aachen.join("final.csv"), gt_csv("Aachen", 1)).unwrap();
    let bonn = root.join("fake/Bonn-1850");
    fs::create_dir_all(&bonn).unwrap();
    let truncated: String =
        gt_csv("Bonn", 1).lines().take(2).map(|l| format!("{l}\n")).collect();
    fs::write(bonn.join("final.csv"), truncated).unwrap();

    let output = run_ok(root, &["eval-ner", "--run", "fake"]);
    let out = stdout(&output);
    assert!(out.contains("(1 of 2 directories)"), "stdout:\n{out}");
    let bonn_row = out.lines().find(|l| l.starts_with("Bonn-1850")).expect("gated row");
    assert!(bonn_row.contains('-'), "gated rates print as dashes: {bonn_row}");
    assert!(read(root, "runs/fixture/eval-ner-fake/cell_diff.txt")
        .contains("Bonn-1850: gated out (1 generated rows vs 2 ground-truth rows)"));
}

#[test]
fn eval_ner_with_everything_gated_fails() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 1);

    let fake = root.join("fake/Trier-1853");
    fs::create_dir_all(&fake).unwrap();
    let truncated: String =
        gt_csv("Trier", 1).lines().take(2).map(|l| format!("{l}\n")).collect();
    fs::write(fake.join("final.csv"), truncated).unwrap();

    let output = run_err(root, &["eval-ner", "--run", "fake"]);
    assert!(stderr(&output).contains("no evaluable directories"));
    // The report is still written so the gating is inspectable.
    assert!(root.join("runs/fixture/eval-ner-fake/report.txt").is_file());
}

#[test]
fn eval_ner_malformed_candidate_names_the_file() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 1);

    let fake = root.join("fake/Trier-1853");
    fs::create_dir_all(&fake).unwrap();
    fs::write(
        fake.join("final.csv"),
        "first and middle names,surname,occupation,address\nHans,Gruber\n",
    )
    .unwrap();

    let output = run_err(root, &["eval-ner", "--run", "fake"]);
    let err = stderr(&output);
    assert!(err.contains("final.csv"), "stderr:\n{err}");
    assert!(err.contains("row 2"), "stderr:\n{err}");
}

#[test]
fn eval_ner_threshold_flag_overrides_the_config() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 1);
    fs::write(
        root.join("Trier-1853/gt.csv"),
        "first and middle names,surname,occupation,address\nHans,reg.-bote,Kaufmann,Markt 1\n",
    )
    .unwrap();

    let fake = root.join("fake/Trier-1853");
    fs::create_dir_all(&fake).unwrap();
    fs::write(
        fake.join("final.csv"),
        "first and middle names,surname,occupation,address\nHans,reg.=bote,Kaufmann,Markt 1\n",
    )
    .unwrap();

    // Separator confusion scores ~0.956, fuzzy at 0.9 but not strict.
    let lenient = run_ok(root, &["eval-ner", "--run", "fake"]);
    let out = stdout(&lenient);
    assert!(out.contains("75.00") && out.contains("100.00"), "stdout:\n{out}");
    let diff = read(root, "runs/fixture/eval-ner-fake/cell_diff.txt");
    assert!(diff.contains("reg.=bote / reg.-bote (gt) [fuzzy]"), "diff:\n{diff}");

    // At threshold 1.0 the fuzzy rate collapses onto strict.
    let strict = run_ok(root, &["eval-ner", "--run", "fake", "--threshold", "1.0"]);
    let out = stdout(&strict);
    assert!(out.contains("fuzzy threshold: 1.00"));
    let row = out.lines().find(|l| l.starts_with("Trier-1853")).expect("directory row");
    let tokens: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(&tokens[tokens.len() - 2..], &["75.00", "75.00"], "strict == fuzzy: {row}");

    let rejected = run_err(root, &["eval-ner", "--run", "fake", "--threshold", "0"]);
    assert!(stderr(&rejected).contains("threshold must be in (0, 1]"));
}

#[test]
fn eval_reruns_write_identical_reports() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 2);

    run_ok(root, &["--cassette", "replay:cassette.json", "ocr"]);
    run_ok(root, &["eval-ocr", "--run", "runs/fixture/ocr"]);
    let before = snapshot_tree(&root.join("runs/fixture/eval-ocr-ocr"));
    run_ok(root, &["eval-ocr", "--run", "runs/fixture/ocr"]);
    assert_eq!(before, snapshot_tree(&root.join("runs/fixture/eval-ocr-ocr")));
}

fn request_line(page: Option<u32>, model: &str, elapsed: f64, input: u64, output: u64) -> String {
    let page_field = match page {
        Some(p) => format!("\"page\":{p},"),
        None => String::new(),
    };
    format!(
        "{{\"kind\":\"request\",{page_field}\"model\":\"{model}\",\"prompt\":\"ocr-default\",\
         \"elapsed_seconds\":{elapsed},\"input_tokens\":{input},\"output_tokens\":{output},\
         \"attempt_count\":1}}\n"
    )
}

#[test]
fn cost_reports_per_page_time_and_dollars() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_corpus(root, TRIER, 1);
    write_config(
        root,
        "",
        "price_per_million_input_tokens = 2.0\nprice_per_million_output_tokens = 4.0\n",
    );

    // Two directories' logs: 30 page requests, 11.5 s and 1,000/500 tokens each.
    for dir in ["A", "B"] {
        let log_dir = root.join("run").join(dir);
        fs::create_dir_all(&log_dir).unwrap();
        let mut log = String::new();
        for p in 0..15 {
            log.push_str(&request_line(Some(p), MODEL, 11.5, 1000, 500));
        }
        fs::write(log_dir.join("provenance.log"), log).unwrap();
    }

    let output = run_ok(root, &["cost", "--run", "run"]);
    let out = stdout(&output);
    let row = out.lines().find(|l| l.starts_with(MODEL)).expect("model row");
    assert!(row.contains("30"), "30 pages: {row}");
    assert!(row.contains("345.00"), "total seconds: {row}");
    assert!(row.contains("11.50"), "seconds per page: {row}");
    assert!(row.contains("$4.00"), "(30k * $2 + 15k * $4) / 1M over 30 pages, per 1,000: {row}");
}

#[test]
fn cost_skips_models_without_page_requests() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_corpus(root, TRIER, 1);
    write_config(root, "", "");

    let log_dir = root.join("run/Trier-1853");
    fs::create_dir_all(&log_dir).unwrap();
    let mut log = request_line(None, "text-model", 3.0, 10, 10);
    log.push_str(&request_line(Some(0), MODEL, 7.25, 100, 50));
    fs::write(log_dir.join("provenance.log"), log).unwrap();

    let output = run_ok(root, &["cost", "--run", "run"]);
    assert!(stderr(&output).contains("text-model: no per-page requests"));
    let out = stdout(&output);
    assert!(out.contains("7.25"), "stdout:\n{out}");
    assert!(!out.lines().any(|l| l.starts_with("text-model")), "stdout:\n{out}");
}

#[test]
fn cost_without_logs_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_workspace(root, TRIER, 1);
    fs::create_dir_all(root.join("empty")).unwrap();

    let output = run_err(root, &["cost", "--run", "empty"]);
    assert!(stderr(&output).contains("no provenance logs under"));
}
