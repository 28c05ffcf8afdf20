// Shared across test binaries; each binary uses a subset.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dirscribe_core::llmclient::{request_key, Cassette, CassetteEntry};
use dirscribe_core::pipeline::{builtin_template, OCR_TEXT_PLACEHOLDER};

/// A 1x1 transparent PNG, small enough to embed in fixtures.
pub const TINY_PNG: &[u8] = &[
    0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x48, 0x44,
    0x52, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00, 0x00, 0x1F,
    0x15, 0xC4, 0x89, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9C, 0x63, 0x60,
    0x60, 0x60, 0x60, 0x00, 0x00, 0x00, 0x05, 0x00, 0x01, 0x5E, 0xF3, 0x2A, 0x3A, 0x00, 0x00,
    0x00, 0x00, 0x49, 0x45, 0x4E, 0x44, 0xAE, 0x42, 0x60, 0x82,
];

/// Model id used by every fixture config and cassette.
pub const MODEL: &str = "test-model";

/// The clean transcription of one fixture page.
pub fn page_text(city: &str, year: u16, page: usize) -> String {
    format!("Seite {page} aus {city} {year}: Müller, Kaufmann, Markt {page}.")
}

/// The noisy per-page baseline: `ll` mangled into `11` (two substitutions).
pub fn noisy_text(city: &str, year: u16, page: usize) -> String {
    page_text(city, year, page).replace("Müller", "Mü11er")
}

/// Whole-directory ground-truth text (pages joined with newlines, no
/// trailing newline, matching how page transcriptions are concatenated).
pub fn gt_txt(city: &str, year: u16, pages: usize) -> String {
    (0..pages).map(|p| page_text(city, year, p)).collect::<Vec<_>>().join("\n")
}

/// Per-page image bytes: a valid PNG signature plus trailer bytes that make
/// every page of every directory distinct.
pub fn page_image(city: &str, year: u16, page: usize) -> Vec<u8> {
    let mut bytes = TINY_PNG.to_vec();
    bytes.extend_from_slice(city.as_bytes());
    bytes.extend_from_slice(&year.to_le_bytes());
    bytes.push(page as u8);
    bytes
}

/// The JSON array the fixture model extracts from one page image: two
/// entries whose fields line up with two rows of `gt_csv`.
pub fn ner_reply(city: &str, page: usize) -> String {
    serde_json::json!([
        {
            "first and middle names": "Hans",
            "surname": format!("{city}{page}"),
            "occupation": "Kaufmann",
            "address": format!("Markt {page}")
        },
        {
            "first and middle names": null,
            "surname": format!("Weber{page}"),
            "occupation": "Bäcker",
            "address": format!("Gasse {page}")
        }
    ])
    .to_string()
}

/// One array holding every page's entries in page order, as the fixture
/// model would emit for a whole-directory text request.
pub fn ner_reply_all(city: &str, pages: usize) -> String {
    let mut records = Vec::new();
    for p in 0..pages {
        let page: serde_json::Value = serde_json::from_str(&ner_reply(city, p)).unwrap();
        records.extend(page.as_array().unwrap().clone());
    }
    serde_json::Value::Array(records).to_string()
}

/// Ground-truth dataset matching `ner_reply` for every page, two rows per
/// page in page order.
pub fn gt_csv(city: &str, pages: usize) -> String {
    let mut csv = String::from("first and middle names,surname,occupation,address\n");
    for p in 0..pages {
        csv.push_str(&format!("Hans,{city}{p},Kaufmann,Markt {p}\n"));
        csv.push_str(&format!(",Weber{p},Bäcker,Gasse {p}\n"));
    }
    csv
}

/// Writes one corpus directory per (city, year) with `pages` pages, ground
/// truth, and a per-page "transkribus" baseline; returns the manifest path.
pub fn write_corpus(root: &Path, cities: &[(&str, u16)], pages: usize) -> PathBuf {
    let mut manifest = String::new();
    for (city, year) in cities {
        let dir_name = format!("{city}-{year}");
        let dir = root.join(&dir_name);
        fs::create_dir_all(&dir).unwrap();
        let mut page_list = Vec::new();
        let mut baseline_list = Vec::new();
        for p in 0..pages {
            fs::write(dir.join(format!("page_{p}.png")), page_image(city, *year, p)).unwrap();
            page_list.push(format!("\"{dir_name}/page_{p}.png\""));
            fs::write(dir.join(format!("transkribus_{p}.txt")), noisy_text(city, *year, p))
                .unwrap();
            baseline_list.push(format!("\"{dir_name}/transkribus_{p}.txt\""));
        }
        fs::write(dir.join("gt.txt"), gt_txt(city, *year, pages)).unwrap();
        fs::write(dir.join("gt.csv"), gt_csv(city, pages)).unwrap();
        manifest.push_str(&format!(
            "[[directory]]\ncity = \"{city}\"\nyear = {year}\npages = [{}]\ngt_txt = \"{dir_name}/gt.txt\"\ngt_csv = \"{dir_name}/gt.csv\"\nbaseline_txt.transkribus = [{}]\n\n",
            page_list.join(", "),
            baseline_list.join(", "),
        ));
    }
    let path = root.join("corpus.toml");
    fs::write(&path, manifest).unwrap();
    path
}

/// Builds a cassette that answers every OCR, post-correction, and image-mode
/// NER request the fixture corpus can produce; returns the cassette path.
pub fn write_cassette(root: &Path, cities: &[(&str, u16)], pages: usize) -> PathBuf {
    let ocr = builtin_template("ocr-default").unwrap();
    let postcorrect = builtin_template("postcorrect-default").unwrap();
    let ner_image = builtin_template("ner-image").unwrap();
    let ner_text = builtin_template("ner-text").unwrap();

    let mut cassette = Cassette::new();
    let mut answer = |prompt: &str, image: Option<&[u8]>, text: String, page: usize| {
        cassette.insert(
            request_key(MODEL, prompt, image),
            CassetteEntry {
                model_id: MODEL.to_string(),
                text,
                input_tokens: 100 + page as u64,
                output_tokens: 50 + page as u64,
                elapsed_seconds: 0.5,
            },
        );
    };

    for (city, year) in cities {
        for p in 0..pages {
            let image = page_image(city, *year, p);
            let truth = page_text(city, *year, p);
            answer(ocr.body(), Some(&image), truth.clone(), p);
            let noisy = noisy_text(city, *year, p);
            let prompt = postcorrect.substitute(&[(OCR_TEXT_PLACEHOLDER, noisy.as_str())]).unwrap();
            answer(&prompt, Some(&image), truth, p);
            answer(ner_image.body(), Some(&image), ner_reply(city, p), p);
        }
        // Whole-directory text requests: one keyed on the clean transcription
        // (gt-text mode, and ocr-text off a perfect run) and one on the
        // joined noisy baseline (ocr-text off the baseline).
        let clean = ner_text.append_text(&gt_txt(city, *year, pages));
        answer(&clean, None, ner_reply_all(city, pages), pages);
        let joined_noisy =
            (0..pages).map(|p| noisy_text(city, *year, p)).collect::<Vec<_>>().join("\n");
        let noisy_prompt = ner_text.append_text(&joined_noisy);
        answer(&noisy_prompt, None, ner_reply_all(city, pages), pages);
    }

    let path = root.join("cassette.json");
    cassette.save(&path).unwrap();
    path
}

/// Writes `dirscribe.toml` next to the corpus. `top_extra` lands before the
/// provider table (for keys like `threshold`), `provider_extra` inside it
/// (for keys like prices). The endpoint is a non-routable localhost port and
/// the credential variable is left unset, so any accidental live request
/// fails fast instead of leaving the sandbox.
pub fn write_config(root: &Path, top_extra: &str, provider_extra: &str) -> PathBuf {
    let config = format!(
        concat!(
            "manifest = \"corpus.toml\"\n",
            "model = \"{model}\"\n",
            "out = \"runs\"\n",
            "{top}",
            "\n",
            "[provider]\n",
            "name = \"fixture\"\n",
            "kind = \"gemini\"\n",
            "endpoint = \"http://127.0.0.1:1\"\n",
            "credential_env = \"DIRSCRIBE_FIXTURE_KEY\"\n",
            "requests_per_minute = 100000\n",
            "max_retries = 0\n",
            "retry_base_delay_seconds = 0.0\n",
            "{provider}",
        ),
        model = MODEL,
        top = top_extra,
        provider = provider_extra,
    );
    let path = root.join("dirscribe.toml");
    fs::write(&path, config).unwrap();
    path
}

/// Full fixture workspace: corpus + cassette + config under one root.
pub fn write_workspace(root: &Path, cities: &[(&str, u16)], pages: usize) -> PathBuf {
    write_corpus(root, cities, pages);
    write_cassette(root, cities, pages);
    write_config(root, "", "")
}

/// Runs the compiled binary with `args`, working directory `root`. The
/// fixture credential variable is scrubbed so a run that should stay offline
/// fails loudly if it ever reaches the live transport.
pub fn dirscribe(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dirscribe"))
        .args(args)
        .current_dir(root)
        .env_remove("DIRSCRIBE_FIXTURE_KEY")
        .output()
        .expect("binary should spawn")
}

/// Runs the binary and asserts it exited successfully.
pub fn run_ok(root: &Path, args: &[&str]) -> Output {
    let output = dirscribe(root, args);
    assert!(
        output.status.success(),
        "expected success for {args:?}\nstdout:\n{}\nstderr:\n{}",
        stdout(&output),
        stderr(&output)
    );
    output
}

/// Runs the binary and asserts it exited with a failure code.
pub fn run_err(root: &Path, args: &[&str]) -> Output {
    let output = dirscribe(root, args);
    assert!(
        !output.status.success(),
        "expected failure for {args:?}\nstdout:\n{}\nstderr:\n{}",
        stdout(&output),
        stderr(&output)
    );
    output
}

pub fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

pub fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// Relative path -> file bytes for every file under `root`, for
/// byte-identity comparisons between runs.
pub fn snapshot_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    collect_files(root, root, &mut files);
    files
}

fn collect_files(root: &Path, dir: &Path, files: &mut BTreeMap<String, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(root, &path, files);
        } else {
            let rel = path
                .strip_prefix(root)
                .unwrap()
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            files.insert(rel, fs::read(&path).unwrap());
        }
    }
}
