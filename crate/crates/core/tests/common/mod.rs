// Shared across test binaries; each binary uses a subset.
#![allow(dead_code)]

use std::fs;
use std::path::Path;

/// A 1x1 transparent PNG, small enough to embed in fixtures.
pub const TINY_PNG: &[u8] = &[
    0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x48, 0x44,
    0x52, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00, 0x00, 0x1F,
    0x15, 0xC4, 0x89, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9C, 0x63, 0x60,
    0x60, 0x60, 0x60, 0x00, 0x00, 0x00, 0x05, 0x00, 0x01, 0x5E, 0xF3, 0x2A, 0x3A, 0x00, 0x00,
    0x00, 0x00, 0x49, 0x45, 0x4E, 0x44, 0xAE, 0x42, 0x60, 0x82,
];

/// Writes a corpus of `cities` directories, each with `pages` pages, a
/// ground-truth TXT/CSV, and a per-page "transkribus" baseline. Returns the
/// manifest path.
pub fn write_corpus(root: &Path, cities: &[(&str, u16)], pages: usize) -> std::path::PathBuf {
    let mut manifest = String::new();
    for (city, year) in cities {
        let dir = root.join(format!("{city}-{year}"));
        fs::create_dir_all(&dir).unwrap();
        let mut page_list = Vec::new();
        let mut baseline_list = Vec::new();
        for p in 0..pages {
            let png = dir.join(format!("page_{p}.png"));
            fs::write(&png, TINY_PNG).unwrap();
            page_list.push(format!("\"{city}-{year}/page_{p}.png\""));
            let base = dir.join(format!("transkribus_{p}.txt"));
            fs::write(&base, format!("noisy {city} page {p}\n")).unwrap();
            baseline_list.push(format!("\"{city}-{year}/transkribus_{p}.txt\""));
        }
        fs::write(dir.join("gt.txt"), format!("ground truth for {city} {year}\n")).unwrap();
        fs::write(
            dir.join("gt.csv"),
            "first and middle names,surname,occupation,address\nAnna,Becker,Apotheker,Marktplatz 1\n",
        )
        .unwrap();
        manifest.push_str(&format!(
            "[[directory]]\ncity = \"{city}\"\nyear = {year}\npages = [{}]\ngt_txt = \"{city}-{year}/gt.txt\"\ngt_csv = \"{city}-{year}/gt.csv\"\nbaseline_txt.transkribus = [{}]\n\n",
            page_list.join(", "),
            baseline_list.join(", "),
        ));
    }
    let path = root.join("corpus.toml");
    fs::write(&path, manifest).unwrap();
    path
}
