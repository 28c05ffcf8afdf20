//! Edit-distance metrics for transcription quality: Levenshtein with an
//! insertion/deletion/substitution breakdown, CER/WER under two text
//! normalization regimes, and Jaro-Winkler similarity for fuzzy cell
//! matching.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty ground truth: reference normalizes to nothing but hypothesis does not")]
    EmptyGroundTruth,
    #[error("cannot aggregate an empty list of rates")]
    EmptyAggregate,
    #[error("cannot aggregate rates computed under different normalization modes")]
    MixedModes,
}

/// The two text preparation regimes used when scoring transcriptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Lowercase, ASCII-fold via canonical decomposition, strip punctuation,
    /// collapse whitespace. Output is limited to `[a-z0-9 ]`.
    Normalized,
    /// Original characters preserved; only whitespace runs are collapsed.
    NonNormalized,
}

impl NormalizationMode {
    pub const ALL: [NormalizationMode; 2] =
        [NormalizationMode::Normalized, NormalizationMode::NonNormalized];

    pub fn label(self) -> &'static str {
        match self {
            NormalizationMode::Normalized => "normalized",
            NormalizationMode::NonNormalized => "non-normalized",
        }
    }
}

/// Counts of the single edits along one optimal alignment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditDistanceBreakdown {
    pub insertions: u64,
    pub deletions: u64,
    pub substitutions: u64,
}

impl EditDistanceBreakdown {
    /// The minimal edit distance; always `insertions + deletions + substitutions`.
    pub fn total(&self) -> u64 {
        self.insertions + self.deletions + self.substitutions
    }

    pub fn add(&mut self, other: &EditDistanceBreakdown) {
        self.insertions += other.insertions;
        self.deletions += other.deletions;
        self.substitutions += other.substitutions;
    }
}

/// Character- and word-level error rates of one hypothesis against one
/// reference, with the raw counts the rates were derived from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorRates {
    pub mode: NormalizationMode,
    pub char_edits: EditDistanceBreakdown,
    pub word_edits: EditDistanceBreakdown,
    /// Reference length in characters after normalization.
    pub gt_char_count: u64,
    /// Reference length in words after normalization.
    pub gt_word_count: u64,
}

impl ErrorRates {
    /// Character error rate: edit distance over reference characters.
    /// May exceed 1. Zero when the reference is empty (so is the hypothesis,
    /// or construction would have failed).
    pub fn cer(&self) -> f64 {
        ratio(self.char_edits.total(), self.gt_char_count)
    }

    /// Word error rate, computed analogously on tokens.
    pub fn wer(&self) -> f64 {
        ratio(self.word_edits.total(), self.gt_word_count)
    }
}

fn ratio(numerator: u64, denominator: u64) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        numerator as f64 / denominator as f64
    }
}

/// Corpus-level rates: micro (pooled counts) plus the per-entry macro means.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateRates {
    pub micro: ErrorRates,
    pub macro_cer: f64,
    pub macro_wer: f64,
    pub entries: usize,
}

/// Prepares text for comparison under the given mode.
///
/// Both modes collapse every run of space, tab, line feed, or carriage
/// return into a single space and trim the ends. `Normalized` additionally
/// applies canonical decomposition, drops every code point above 127
/// (including combining marks split off by the decomposition), drops ASCII
/// punctuation and control characters, and lowercases.
pub fn normalize(text: &str, mode: NormalizationMode) -> String {
    match mode {
        NormalizationMode::NonNormalized => collapse_whitespace(text.chars()),
        NormalizationMode::Normalized => {
            let folded = text
                .nfd()
                .filter(|c| c.is_ascii())
                .map(|c| c.to_ascii_lowercase())
                .filter(|c| c.is_ascii_alphanumeric() || is_collapsible(*c));
            collapse_whitespace(folded)
        }
    }
}

fn is_collapsible(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\n' | '\r')
}

fn collapse_whitespace(chars: impl Iterator<Item = char>) -> String {
    let mut out = String::new();
    let mut pending_space = false;
    for c in chars {
        if is_collapsible(c) {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    out
}

/// Splits normalized text into words. Empty input yields no tokens.
pub fn word_tokenize(text: &str) -> Vec<&str> {
    text.split(' ').filter(|t| !t.is_empty()).collect()
}

/// Levenshtein distance between two strings, by characters.
pub fn levenshtein(a: &str, b: &str) -> EditDistanceBreakdown {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_seq(&a, &b)
}

#[derive(Clone, Copy, Default)]
struct Cell {
    cost: u64,
    edits: EditDistanceBreakdown,
}

/// Levenshtein distance between two sequences, tracking the edit counts of
/// one optimal alignment. Two rolling rows, so memory stays linear in the
/// second sequence even for page-length inputs.
pub fn levenshtein_seq<T: PartialEq>(a: &[T], b: &[T]) -> EditDistanceBreakdown {
    let mut prev: Vec<Cell> = (0..=b.len() as u64)
        .map(|j| Cell {
            cost: j,
            edits: EditDistanceBreakdown { insertions: j, ..Default::default() },
        })
        .collect();
    let mut cur = vec![Cell::default(); b.len() + 1];

    for (i, sa) in a.iter().enumerate() {
        cur[0] = Cell {
            cost: i as u64 + 1,
            edits: EditDistanceBreakdown { deletions: i as u64 + 1, ..Default::default() },
        };
        for (j, sb) in b.iter().enumerate() {
            let diag = &prev[j];
            let mut best = if sa == sb {
                *diag
            } else {
                let mut c = *diag;
                c.cost += 1;
                c.edits.substitutions += 1;
                c
            };
            if prev[j + 1].cost + 1 < best.cost {
                best = prev[j + 1];
                best.cost += 1;
                best.edits.deletions += 1;
            }
            if cur[j].cost + 1 < best.cost {
                best = cur[j];
                best.cost += 1;
                best.edits.insertions += 1;
            }
            cur[j + 1] = best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()].edits
}

/// CER and WER of `hyp` against `gt`, both prepared under `mode`.
///
/// Errors when the reference normalizes to nothing while the hypothesis does
/// not; the rates have no denominator in that case.
pub fn error_rates(gt: &str, hyp: &str, mode: NormalizationMode) -> Result<ErrorRates, MetricsError> {
    let gt = normalize(gt, mode);
    let hyp = normalize(hyp, mode);
    if gt.is_empty() && !hyp.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }

    let gt_chars: Vec<char> = gt.chars().collect();
    let hyp_chars: Vec<char> = hyp.chars().collect();
    let gt_words = word_tokenize(&gt);
    let hyp_words = word_tokenize(&hyp);

    Ok(ErrorRates {
        mode,
        char_edits: levenshtein_seq(&gt_chars, &hyp_chars),
        word_edits: levenshtein_seq(&gt_words, &hyp_words),
        gt_char_count: gt_chars.len() as u64,
        gt_word_count: gt_words.len() as u64,
    })
}

/// Pools per-entry rates into corpus-level figures. Micro pools the raw
/// counts (the headline figure); the macro mean of per-entry rates is kept
/// alongside.
pub fn aggregate_rates(per_entry: &[ErrorRates]) -> Result<AggregateRates, MetricsError> {
    let first = per_entry.first().ok_or(MetricsError::EmptyAggregate)?;
    if per_entry.iter().any(|r| r.mode != first.mode) {
        return Err(MetricsError::MixedModes);
    }

    let mut micro = ErrorRates {
        mode: first.mode,
        char_edits: EditDistanceBreakdown::default(),
        word_edits: EditDistanceBreakdown::default(),
        gt_char_count: 0,
        gt_word_count: 0,
    };
    let mut macro_cer = 0.0;
    let mut macro_wer = 0.0;
    for rates in per_entry {
        micro.char_edits.add(&rates.char_edits);
        micro.word_edits.add(&rates.word_edits);
        micro.gt_char_count += rates.gt_char_count;
        micro.gt_word_count += rates.gt_word_count;
        macro_cer += rates.cer();
        macro_wer += rates.wer();
    }

    Ok(AggregateRates {
        micro,
        macro_cer: macro_cer / per_entry.len() as f64,
        macro_wer: macro_wer / per_entry.len() as f64,
        entries: per_entry.len(),
    })
}

/// Jaro-Winkler similarity in `[0, 1]`.
///
/// Standard Jaro with the Winkler prefix boost: scaling factor 0.1, prefix
/// capped at four characters, no boost threshold. Equal strings score 1;
/// if exactly one side is empty the score is 0.
pub fn jaro_winkler(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a == b {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }

    let jaro = jaro_similarity(&a, &b);
    let prefix = a
        .iter()
        .zip(&b)
        .take(4)
        .take_while(|(x, y)| x == y)
        .count();
    jaro + prefix as f64 * 0.1 * (1.0 - jaro)
}

fn jaro_similarity(a: &[char], b: &[char]) -> f64 {
    let window = (a.len().max(b.len()) / 2).saturating_sub(1);
    let mut b_matched = vec![false; b.len()];
    let mut a_matches: Vec<usize> = Vec::new();

    for (i, ca) in a.iter().enumerate() {
        let low = i.saturating_sub(window);
        let high = (i + window + 1).min(b.len());
        for j in low..high {
            if !b_matched[j] && b[j] == *ca {
                b_matched[j] = true;
                a_matches.push(i);
                break;
            }
        }
    }
    let matches = a_matches.len();
    if matches == 0 {
        return 0.0;
    }

    let mut mismatches = 0u64;
    let mut k = 0;
    for i in a_matches {
        while !b_matched[k] {
            k += 1;
        }
        if a[i] != b[k] {
            mismatches += 1;
        }
        k += 1;
    }
    let transpositions = mismatches as f64 / 2.0;

    let m = matches as f64;
    (m / a.len() as f64 + m / b.len() as f64 + (m - transpositions) / m) / 3.0
}
