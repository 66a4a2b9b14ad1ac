//! Multiple-choice benchmark harness: dataset loading, prompt rendering,
//! answer parsing and per-category scoring.
//!
//! Accuracies are kept as exact hundredths. For integer tallies the
//! rounding is done in integer arithmetic (half up), so `52.325` can never
//! drift to `52.32` through a float representation error.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::modelclient::{
    hex, prompt_seed, Completion, CompletionRequest, ModelClient, ModelError,
};

/// Instruction line that opens every MCQ prompt.
pub const MCQ_INSTRUCTION: &str = "Instruct: Answer the following question. Your answer must start with the number of the correct answer followed by the text of the answer.";

pub const MIN_OPTIONS: usize = 2;
pub const MAX_OPTIONS: usize = 5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("malformed dataset JSON: {0}")]
    Json(String),
    #[error("dataset rejected:\n{}", format_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("answer for unknown item {0:?}")]
    UnknownItem(String),
    #[error("no answer recorded for item {0:?}")]
    MissingAnswer(String),
    #[error("item {0:?} answered more than once")]
    DuplicateAnswer(String),
    #[error("reports come from different datasets ({a} vs {b})")]
    DatasetMismatch { a: String, b: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where a dataset entry came from and what is wrong with it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// `line N` for JSON lines, `entry "key"` or `entry N` for JSON documents.
    pub location: String,
    pub item_id: Option<String>,
    pub message: String,
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| match &d.item_id {
            Some(id) => format!("  {} (item {id}): {}", d.location, d.message),
            None => format!("  {}: {}", d.location, d.message),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Lexicon,
    ResearchOverview,
    ResearchPublications,
    StandardsOverview,
    StandardsSpecifications,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Lexicon,
        Category::ResearchOverview,
        Category::ResearchPublications,
        Category::StandardsOverview,
        Category::StandardsSpecifications,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Lexicon => "Lexicon",
            Category::ResearchOverview => "ResearchOverview",
            Category::ResearchPublications => "ResearchPublications",
            Category::StandardsOverview => "StandardsOverview",
            Category::StandardsSpecifications => "StandardsSpecifications",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    /// Accepts the canonical names and the spaced forms used by the public
    /// dataset ("Standards specifications", "Standard overview", ...).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        Ok(match key.as_str() {
            "lexicon" => Category::Lexicon,
            "researchoverview" => Category::ResearchOverview,
            "researchpublications" => Category::ResearchPublications,
            "standardsoverview" | "standardoverview" => Category::StandardsOverview,
            "standardsspecifications" | "standardspecifications" => {
                Category::StandardsSpecifications
            }
            _ => return Err(format!("unknown category {s:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqItem {
    pub item_id: String,
    pub category: Category,
    pub question: String,
    pub options: Vec<String>,
    /// 1-based.
    pub correct_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

impl McqItem {
    pub fn validate(&self) -> Result<(), String> {
        let n = self.options.len();
        if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&n) {
            return Err(format!("expected {MIN_OPTIONS}-{MAX_OPTIONS} options, found {n}"));
        }
        if self.correct_index == 0 || self.correct_index > n {
            return Err(format!("correct_index {} outside 1..={n}", self.correct_index));
        }
        let mut seen = HashSet::new();
        for (i, opt) in self.options.iter().enumerate() {
            if !seen.insert(opt.trim()) {
                return Err(format!("duplicate option {} ({opt:?})", i + 1));
            }
        }
        Ok(())
    }

    pub fn correct_option(&self) -> &str {
        &self.options[self.correct_index - 1]
    }
}

// ---------------------------------------------------------------------------
// loading

/// Raw entry in the public dataset layout.
#[derive(Debug, Deserialize)]
struct RawEntry {
    question: Option<String>,
    answer: Option<String>,
    category: Option<String>,
    #[serde(default)]
    explanation: Option<String>,
    #[serde(default)]
    item_id: Option<String>,
    #[serde(flatten)]
    rest: serde_json::Map<String, serde_json::Value>,
}

fn normalize_raw(raw: RawEntry, fallback_id: String) -> Result<McqItem, (Option<String>, String)> {
    let item_id = raw.item_id.unwrap_or(fallback_id);
    let fail = |msg: String| (Some(item_id.clone()), msg);
    let question = raw.question.ok_or_else(|| fail("missing \"question\"".into()))?;
    let mut options = Vec::new();
    for k in 1..=MAX_OPTIONS {
        match raw.rest.get(&format!("option {k}")) {
            Some(serde_json::Value::String(s)) => {
                if options.len() != k - 1 {
                    return Err(fail(format!("\"option {k}\" present but an earlier option is missing")));
                }
                options.push(s.clone());
            }
            Some(serde_json::Value::Null) | None => {}
            Some(other) => return Err(fail(format!("\"option {k}\" is not a string: {other}"))),
        }
    }
    let category_raw = raw.category.ok_or_else(|| fail("missing \"category\"".into()))?;
    let category = category_raw.parse::<Category>().map_err(fail)?;
    let answer = raw.answer.ok_or_else(|| fail("missing \"answer\"".into()))?;
    let correct_index = resolve_answer(&answer, &options).map_err(fail)?;
    let item = McqItem {
        item_id: item_id.clone(),
        category,
        question,
        options,
        correct_index,
        explanation: raw.explanation,
    };
    item.validate().map_err(fail)?;
    Ok(item)
}

/// Maps an answer string of the form `"option k: <text>"` (or bare option
/// text) to a 1-based index.
fn resolve_answer(answer: &str, options: &[String]) -> Result<usize, String> {
    let trimmed = answer.trim();
    let lower = trimmed.to_lowercase();
    if let Some(rest) = lower.strip_prefix("option") {
        let digits: String = rest.trim_start().chars().take_while(|c| c.is_ascii_digit()).collect();
        if let Ok(k) = digits.parse::<usize>() {
            if k == 0 || k > options.len() {
                return Err(format!("answer {answer:?} names option {k}, but only {} exist", options.len()));
            }
            // text after "option k:" must agree with that option, if given
            let offset = trimmed.len() - rest.trim_start().len() + digits.len();
            let text = trimmed[offset..].trim_start_matches([':', '.', ')']).trim();
            if !text.is_empty() && text != options[k - 1].trim() {
                return Err(format!(
                    "answer {answer:?} names option {k} but its text does not match {:?}",
                    options[k - 1]
                ));
            }
            return Ok(k);
        }
    }
    let matches: Vec<usize> = options
        .iter()
        .enumerate()
        .filter(|(_, o)| o.trim() == trimmed)
        .map(|(i, _)| i + 1)
        .collect();
    match matches.as_slice() {
        [k] => Ok(*k),
        [] => Err(format!("answer {answer:?} does not match any option")),
        _ => Err(format!("answer {answer:?} is ambiguous")),
    }
}

fn parse_line_item(value: serde_json::Value, fallback_id: String) -> Result<McqItem, (Option<String>, String)> {
    if value.get("options").is_some() {
        let id = value.get("item_id").and_then(|v| v.as_str()).map(str::to_string);
        let item: McqItem = serde_json::from_value(value).map_err(|e| (id.clone(), e.to_string()))?;
        item.validate().map_err(|m| (Some(item.item_id.clone()), m))?;
        Ok(item)
    } else {
        let raw: RawEntry = serde_json::from_value(value).map_err(|e| (None, e.to_string()))?;
        normalize_raw(raw, fallback_id)
    }
}

/// Parses a dataset from text. Three layouts are accepted:
///
/// * a JSON object mapping ids to raw entries (the public dataset layout),
/// * a JSON array of raw entries,
/// * JSON lines, each either a raw entry or a canonical [`McqItem`].
pub fn parse_dataset(text: &str) -> Result<Vec<McqItem>, EvalError> {
    let mut items = Vec::new();
    let mut diags = Vec::new();
    let mut push = |res: Result<McqItem, (Option<String>, String)>, location: String| match res {
        Ok(item) => items.push(item),
        Err((item_id, message)) => diags.push(Diagnostic {
            location,
            item_id,
            message,
        }),
    };
    let whole: Option<serde_json::Value> = serde_json::from_str(text).ok();
    match whole {
        Some(serde_json::Value::Object(map)) if !looks_like_single_entry(&map) => {
            for (key, value) in map {
                let location = format!("entry {key:?}");
                push(parse_line_item(value, key), location);
            }
        }
        Some(serde_json::Value::Array(values)) => {
            for (i, value) in values.into_iter().enumerate() {
                push(parse_line_item(value, format!("q{i}")), format!("entry {i}"));
            }
        }
        _ => {
            for (idx, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let location = format!("line {}", idx + 1);
                match serde_json::from_str::<serde_json::Value>(line) {
                    Ok(value) => push(parse_line_item(value, format!("q{idx}")), location),
                    Err(e) => {
                        return Err(EvalError::Json(format!("{location}: {e}")));
                    }
                }
            }
        }
    }
    let mut ids = HashSet::new();
    for item in &items {
        if !ids.insert(item.item_id.clone()) {
            diags.push(Diagnostic {
                location: "dataset".into(),
                item_id: Some(item.item_id.clone()),
                message: "duplicate item id".into(),
            });
        }
    }
    if diags.is_empty() {
        Ok(items)
    } else {
        Err(EvalError::Invalid(diags))
    }
}

fn looks_like_single_entry(map: &serde_json::Map<String, serde_json::Value>) -> bool {
    map.contains_key("question") || map.contains_key("options")
}

pub fn load_dataset(path: &Path) -> Result<Vec<McqItem>, EvalError> {
    let mut text = String::new();
    BufReader::new(File::open(path)?).read_to_string(&mut text)?;
    parse_dataset(&text)
}

/// Writes items in the canonical JSON-lines form.
pub fn write_dataset_jsonl<W: Write>(mut out: W, items: &[McqItem]) -> Result<(), EvalError> {
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// SHA-256 over the canonical JSON-lines serialization, in dataset order.
pub fn dataset_fingerprint(items: &[McqItem]) -> String {
    let mut hasher = Sha256::new();
    for item in items {
        hasher.update(serde_json::to_vec(item).expect("items serialize"));
        hasher.update(b"\n");
    }
    hex(&hasher.finalize())
}

// ---------------------------------------------------------------------------
// prompts and parsing

/// Renders the MCQ instruction prompt. Options are right-trimmed.
pub fn render_prompt(item: &McqItem) -> String {
    let mut out = String::with_capacity(256);
    out.push_str(MCQ_INSTRUCTION);
    out.push('\n');
    out.push_str(&item.question);
    out.push('\n');
    for (i, opt) in item.options.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, opt.trim_end()));
    }
    out.push_str("Output:");
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    LeadingNumber,
    EmbeddedNumber,
    TextMatch,
    Unparsed,
}

/// `Strict` accepts only a leading option number; `Cascade` falls back to
/// an embedded number and then to option-text matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    Strict,
    #[default]
    Cascade,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelAnswer {
    pub item_id: String,
    pub raw_text: String,
    pub parsed_index: Option<usize>,
    pub parse_status: ParseStatus,
}

impl ModelAnswer {
    pub fn parse(item: &McqItem, raw_text: impl Into<String>, mode: ParseMode) -> Self {
        let raw_text = raw_text.into();
        let (parsed_index, parse_status) = parse_answer_with(&raw_text, &item.options, mode);
        Self {
            item_id: item.item_id.clone(),
            raw_text,
            parsed_index,
            parse_status,
        }
    }
}

/// Whole-number tokens in `s`: maximal ASCII digit runs not glued to letters
/// (so `5G` and `3GPP` are not numbers) and not part of a decimal like `3.5`.
/// Returns `(byte offset, value)` pairs.
pub(crate) fn integer_tokens(s: &str) -> Vec<(usize, u64)> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        let before = s[..start].chars().next_back();
        let after = s[i..].chars().next();
        let glued_before = before.is_some_and(|c| c.is_alphanumeric())
            || (before == Some('.') && start >= 2 && bytes[start - 2].is_ascii_digit());
        let glued_after = after.is_some_and(|c| c.is_alphanumeric())
            || (after == Some('.') && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit()));
        if glued_before || glued_after {
            continue;
        }
        if let Ok(v) = s[start..i].parse::<u64>() {
            out.push((start, v));
        }
    }
    out
}

pub fn parse_answer(raw: &str, options: &[String]) -> (Option<usize>, ParseStatus) {
    parse_answer_with(raw, options, ParseMode::Cascade)
}

/// Extracts the chosen 1-based option from a model reply.
///
/// 1. an integer in range at the start of the reply (after whitespace);
/// 2. the first in-range integer anywhere on the first non-empty line;
/// 3. exactly one option's text contained in the reply (case-insensitive).
pub fn parse_answer_with(raw: &str, options: &[String], mode: ParseMode) -> (Option<usize>, ParseStatus) {
    let n = options.len() as u64;
    let in_range = |v: u64| (1..=n).contains(&v);
    let trimmed = raw.trim_start();
    if let Some(&(0, v)) = integer_tokens(trimmed).first() {
        if in_range(v) {
            return (Some(v as usize), ParseStatus::LeadingNumber);
        }
    }
    if mode == ParseMode::Strict {
        return (None, ParseStatus::Unparsed);
    }
    let first_line = trimmed.lines().next().unwrap_or("");
    if let Some((_, v)) = integer_tokens(first_line).into_iter().find(|&(_, v)| in_range(v)) {
        return (Some(v as usize), ParseStatus::EmbeddedNumber);
    }
    let lower = raw.to_lowercase();
    let hits: Vec<usize> = options
        .iter()
        .enumerate()
        .filter(|(_, o)| {
            let o = o.trim().to_lowercase();
            !o.is_empty() && lower.contains(&o)
        })
        .map(|(i, _)| i + 1)
        .collect();
    if let [k] = hits.as_slice() {
        return (Some(*k), ParseStatus::TextMatch);
    }
    (None, ParseStatus::Unparsed)
}

// ---------------------------------------------------------------------------
// running

/// Result of presenting one item to a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Answered(ModelAnswer),
    Errored { item_id: String, message: String },
}

impl Outcome {
    pub fn item_id(&self) -> &str {
        match self {
            Outcome::Answered(a) => &a.item_id,
            Outcome::Errored { item_id, .. } => item_id,
        }
    }

    pub fn raw_text(&self) -> Option<&str> {
        match self {
            Outcome::Answered(a) => Some(&a.raw_text),
            Outcome::Errored { .. } => None,
        }
    }
}

/// Maps `f` over items on at most `concurrency` threads, preserving order.
pub fn run_bounded<T, R, F>(items: &[T], concurrency: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Send + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| items.par_iter().map(f).collect())
}

/// Sends one rendered prompt and parses the reply. Model failures become
/// [`Outcome::Errored`].
pub fn answer_item(
    client: &dyn ModelClient,
    item: &McqItem,
    prompt: &str,
    mode: ParseMode,
) -> (Outcome, Option<Completion>) {
    match client.complete(&CompletionRequest::for_item(&item.item_id, prompt)) {
        Ok(c) => (
            Outcome::Answered(ModelAnswer::parse(item, c.text.clone(), mode)),
            Some(c),
        ),
        Err(e) => (
            Outcome::Errored {
                item_id: item.item_id.clone(),
                message: e.to_string(),
            },
            None,
        ),
    }
}

/// Plain (no retrieval) evaluation of every item.
pub fn evaluate(client: &dyn ModelClient, items: &[McqItem], concurrency: usize, mode: ParseMode) -> Vec<Outcome> {
    run_bounded(items, concurrency, |item| {
        answer_item(client, item, &render_prompt(item), mode).0
    })
}

// ---------------------------------------------------------------------------
// scoring

/// `correct / count` as a percentage in hundredths, rounded half up.
pub fn accuracy_hundredths(correct: u64, count: u64) -> u64 {
    if count == 0 {
        return 0;
    }
    (2 * correct * 10_000 + count) / (2 * count)
}

/// Rounds to two decimals, halves away from zero.
pub fn round2(x: f64) -> f64 {
    // nudge by a relative epsilon so 0.125-style halves stored just below
    // the midpoint still round up
    let scaled = x * 100.0;
    (scaled + scaled.signum() * scaled.abs().max(1.0) * 1e-12).round() / 100.0
}

/// Count-weighted mean of per-category accuracies, rounded to two decimals.
pub fn weighted_accuracy(groups: &[(u64, f64)]) -> f64 {
    let total: u64 = groups.iter().map(|g| g.0).sum();
    if total == 0 {
        return 0.0;
    }
    let weighted: f64 = groups.iter().map(|&(n, acc)| n as f64 * acc).sum();
    round2(weighted / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub category: Category,
    pub count: u64,
    pub correct: u64,
    pub errored: u64,
    pub unparsed: u64,
    pub accuracy_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallStats {
    pub count: u64,
    pub correct: u64,
    pub errored: u64,
    pub unparsed: u64,
    pub accuracy_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    /// Snapshot of the model configuration.
    pub model: serde_json::Value,
    pub rag: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub parse_mode: ParseMode,
}

impl RunMetadata {
    pub fn plain(model: serde_json::Value) -> Self {
        Self {
            model,
            rag: false,
            k: None,
            parse_mode: ParseMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_fingerprint: String,
    pub run: RunMetadata,
    /// Categories present in the dataset, in canonical order.
    pub categories: Vec<CategoryStats>,
    pub overall: OverallStats,
}

/// Tallies outcomes per category. Unparsed and errored answers count in the
/// denominator only. Outcome order does not matter.
pub fn score(items: &[McqItem], outcomes: &[Outcome], run: RunMetadata) -> Result<EvalReport, EvalError> {
    let by_id: HashMap<&str, &McqItem> = items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    let mut seen: HashMap<&str, &Outcome> = HashMap::new();
    for outcome in outcomes {
        if !by_id.contains_key(outcome.item_id()) {
            return Err(EvalError::UnknownItem(outcome.item_id().to_string()));
        }
        if seen.insert(outcome.item_id(), outcome).is_some() {
            return Err(EvalError::DuplicateAnswer(outcome.item_id().to_string()));
        }
    }
    #[derive(Default, Clone, Copy)]
    struct Tally {
        count: u64,
        correct: u64,
        errored: u64,
        unparsed: u64,
    }
    let mut tallies: HashMap<Category, Tally> = HashMap::new();
    for item in items {
        let outcome = seen
            .get(item.item_id.as_str())
            .ok_or_else(|| EvalError::MissingAnswer(item.item_id.clone()))?;
        let t = tallies.entry(item.category).or_default();
        t.count += 1;
        match outcome {
            Outcome::Errored { .. } => t.errored += 1,
            Outcome::Answered(a) => match a.parsed_index {
                None => t.unparsed += 1,
                Some(k) if k == item.correct_index => t.correct += 1,
                Some(_) => {}
            },
        }
    }
    let categories: Vec<CategoryStats> = Category::ALL
        .iter()
        .filter_map(|c| tallies.get(c).map(|t| (*c, *t)))
        .map(|(category, t)| CategoryStats {
            category,
            count: t.count,
            correct: t.correct,
            errored: t.errored,
            unparsed: t.unparsed,
            accuracy_percent: accuracy_hundredths(t.correct, t.count) as f64 / 100.0,
        })
        .collect();
    let sum = |f: fn(&CategoryStats) -> u64| categories.iter().map(f).sum::<u64>();
    let (count, correct) = (sum(|c| c.count), sum(|c| c.correct));
    let overall = OverallStats {
        count,
        correct,
        errored: sum(|c| c.errored),
        unparsed: sum(|c| c.unparsed),
        accuracy_percent: accuracy_hundredths(correct, count) as f64 / 100.0,
    };
    Ok(EvalReport {
        dataset_fingerprint: dataset_fingerprint(items),
        run,
        categories,
        overall,
    })
}

impl EvalReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-category CSV with a trailing `Overall` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["category", "count", "correct", "errored", "accuracy"])?;
        for c in &self.categories {
            w.write_record([
                c.category.as_str().to_string(),
                c.count.to_string(),
                c.correct.to_string(),
                c.errored.to_string(),
                format!("{:.2}", c.accuracy_percent),
            ])?;
        }
        w.write_record([
            "Overall".to_string(),
            self.overall.count.to_string(),
            self.overall.correct.to_string(),
            self.overall.errored.to_string(),
            format!("{:.2}", self.overall.accuracy_percent),
        ])?;
        w.flush()?;
        Ok(())
    }

    pub fn errored(&self) -> u64 {
        self.overall.errored
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRow {
    pub category: String,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

/// Per-category and overall accuracy deltas `b - a`.
pub fn compare_runs(a: &EvalReport, b: &EvalReport) -> Result<Vec<DeltaRow>, EvalError> {
    if a.dataset_fingerprint != b.dataset_fingerprint {
        return Err(EvalError::DatasetMismatch {
            a: a.dataset_fingerprint.clone(),
            b: b.dataset_fingerprint.clone(),
        });
    }
    let mut rows = Vec::new();
    for ca in &a.categories {
        if let Some(cb) = b.categories.iter().find(|c| c.category == ca.category) {
            rows.push(DeltaRow {
                category: ca.category.as_str().to_string(),
                a: ca.accuracy_percent,
                b: cb.accuracy_percent,
                delta: round2(cb.accuracy_percent - ca.accuracy_percent),
            });
        }
    }
    rows.push(DeltaRow {
        category: "Overall".into(),
        a: a.overall.accuracy_percent,
        b: b.overall.accuracy_percent,
        delta: round2(b.overall.accuracy_percent - a.overall.accuracy_percent),
    });
    Ok(rows)
}

pub fn write_delta_csv<W: Write>(out: W, rows: &[DeltaRow]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["category", "a", "b", "delta"])?;
    for r in rows {
        w.write_record([
            r.category.clone(),
            format!("{:.2}", r.a),
            format!("{:.2}", r.b),
            format!("{:+.2}", r.delta),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// oracle mock

/// One answer-key line for [`McqOracle`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleKeyEntry {
    pub item_id: String,
    pub correct_index: usize,
    pub n_options: usize,
    /// When set, the oracle only answers correctly if this text appears in
    /// the prompt; otherwise it guesses uniformly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_text: Option<String>,
}

/// Mock model that knows every answer. With a gold text it behaves like a
/// reader: correct when the evidence is in the prompt, a uniform guess
/// (seeded by the prompt) when it is not.
#[derive(Debug, Clone, Default)]
pub struct McqOracle {
    key: HashMap<String, OracleKeyEntry>,
    seed: u64,
}

impl McqOracle {
    pub fn new(entries: impl IntoIterator<Item = OracleKeyEntry>, seed: u64) -> Self {
        Self {
            key: entries.into_iter().map(|e| (e.item_id.clone(), e)).collect(),
            seed,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(line).map_err(|e| ModelError::Transcript {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?);
        }
        Ok(Self::new(entries, 0))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

impl ModelClient for McqOracle {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ModelError> {
        if request.prompt.is_empty() {
            return Err(ModelError::EmptyPrompt);
        }
        let id = request
            .item_id
            .ok_or_else(|| ModelError::Protocol("oracle mock needs an item id".into()))?;
        let entry = self
            .key
            .get(id)
            .ok_or_else(|| ModelError::Protocol(format!("item {id:?} not in oracle key")))?;
        let knows = entry
            .gold_text
            .as_deref()
            .is_none_or(|gold| request.prompt.contains(gold));
        let choice = if knows {
            entry.correct_index
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(prompt_seed(self.seed, request.prompt));
            rng.random_range(1..=entry.n_options)
        };
        Ok(Completion {
            text: format!("{choice}."),
            latency_ms: 0,
            attempt_count: 1,
        })
    }
}
