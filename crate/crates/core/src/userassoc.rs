//! Avoid-the-strongest user association probes.
//!
//! A device hears `n` base stations and must connect to the strongest one
//! except the strongest, i.e. the runner-up. Problems are seeded, answers are
//! checked against an argmax oracle, and accuracy is tallied per station count.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalharness::{integer_tokens, run_bounded};
use crate::modelclient::{
    prompt_seed, Completion, CompletionRequest, ModelClient, ModelError,
};

pub const MIN_STATIONS: usize = 2;
pub const MAX_STATIONS: usize = 26;
pub const SIGNAL_MIN_DBM: i32 = -110;
pub const SIGNAL_MAX_DBM: i32 = -50;
pub const DEFAULT_TRIALS: usize = 100;

#[derive(Debug, Error)]
pub enum AssocError {
    #[error("need between {MIN_STATIONS} and {MAX_STATIONS} stations, got {0}")]
    StationCount(usize),
    #[error("signal strengths must be pairwise distinct")]
    DuplicateSignals,
    #[error("trials per station count must be at least 1")]
    ZeroTrials,
    #[error("cannot draw {trials} distinct problems with {n} stations")]
    Exhausted { n: usize, trials: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssocProblem {
    pub problem_id: String,
    pub signals_dbm: Vec<i32>,
    pub n: usize,
    /// 1-based index of the strongest station.
    pub forbidden_index: usize,
    /// 1-based index of the second strongest station.
    pub correct_index: usize,
}

impl AssocProblem {
    pub fn from_signals(problem_id: impl Into<String>, signals_dbm: Vec<i32>) -> Result<Self, AssocError> {
        let n = signals_dbm.len();
        if !(MIN_STATIONS..=MAX_STATIONS).contains(&n) {
            return Err(AssocError::StationCount(n));
        }
        if signals_dbm.iter().collect::<HashSet<_>>().len() != n {
            return Err(AssocError::DuplicateSignals);
        }
        let forbidden = argmax(&signals_dbm, None);
        let correct = argmax(&signals_dbm, Some(forbidden));
        Ok(Self {
            problem_id: problem_id.into(),
            signals_dbm,
            n,
            forbidden_index: forbidden + 1,
            correct_index: correct + 1,
        })
    }
}

fn argmax(signals: &[i32], skip: Option<usize>) -> usize {
    signals
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .max_by_key(|(_, s)| **s)
        .map(|(i, _)| i)
        .expect("at least two signals")
}

/// Draws `n` distinct integer signals uniformly from the dBm range.
pub fn generate_problem(n: usize, seed: u64) -> Result<AssocProblem, AssocError> {
    if !(MIN_STATIONS..=MAX_STATIONS).contains(&n) {
        return Err(AssocError::StationCount(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<i32> = (SIGNAL_MIN_DBM..=SIGNAL_MAX_DBM).collect();
    let (picked, _) = pool.partial_shuffle(&mut rng, n);
    AssocProblem::from_signals(format!("n{n}-s{seed}"), picked.to_vec())
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn distinct_limit(n: usize) -> u128 {
    let values = (SIGNAL_MAX_DBM - SIGNAL_MIN_DBM + 1) as u128;
    (0..n as u128).fold(1u128, |acc, i| acc.saturating_mul(values - i))
}

/// `trials` problems with `n` stations, no two with the same signal list.
/// Duplicates would share a prompt and make transcript replay ambiguous.
pub fn generate_problem_set(n: usize, trials: usize, seed: u64) -> Result<Vec<AssocProblem>, AssocError> {
    if trials == 0 {
        return Err(AssocError::ZeroTrials);
    }
    if !(MIN_STATIONS..=MAX_STATIONS).contains(&n) {
        return Err(AssocError::StationCount(n));
    }
    if (trials as u128) > distinct_limit(n) {
        return Err(AssocError::Exhausted { n, trials });
    }
    let base = mix(seed ^ mix(n as u64));
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(trials);
    let mut draw = 0u64;
    while out.len() < trials {
        let mut p = generate_problem(n, mix(base.wrapping_add(draw)))?;
        draw += 1;
        if seen.insert(p.signals_dbm.clone()) {
            p.problem_id = format!("n{n}-t{}", out.len());
            out.push(p);
        }
    }
    Ok(out)
}

/// English cardinal for 2..=26.
fn number_word(n: usize) -> String {
    const SMALL: [&str; 20] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
        "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen",
        "eighteen", "nineteen",
    ];
    match n {
        0..=19 => SMALL[n].to_string(),
        20 => "twenty".to_string(),
        21..=29 => format!("twenty-{}", SMALL[n - 20]),
        _ => n.to_string(),
    }
}

pub fn render_problem_prompt(p: &AssocProblem) -> String {
    let mut s = format!(
        "Instruct: A mobile device receives signals from {} different base stations. The signal strengths are as follows:\n",
        number_word(p.n)
    );
    for (i, sig) in p.signals_dbm.iter().enumerate() {
        s.push_str(&format!("- The signal strength from base station {} is {sig} dBm\n", i + 1));
    }
    s.push_str(&format!(
        "The device must connect to the base station providing the strongest signal but avoiding base station {}.\n",
        p.forbidden_index
    ));
    s.push_str("Given these signal strengths, to which base station should the mobile device connect?\nOutput:");
    s
}

/// Recovers the problem from a rendered prompt. Used by oracle mocks.
pub fn parse_problem_prompt(prompt: &str) -> Option<AssocProblem> {
    let re = Regex::new(r"(?m)^- The signal strength from base station (\d+) is (-?\d+) dBm$").unwrap();
    let mut signals = Vec::new();
    for (expected, cap) in re.captures_iter(prompt).enumerate() {
        if cap[1].parse::<usize>().ok()? != expected + 1 {
            return None;
        }
        signals.push(cap[2].parse::<i32>().ok()?);
    }
    AssocProblem::from_signals("parsed", signals).ok()
}

/// 1-based index of the strongest station other than the strongest.
pub fn oracle(p: &AssocProblem) -> usize {
    p.correct_index
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssocCheck {
    pub chosen: Option<usize>,
    pub correct: bool,
}

/// "base station k" wins, else the first integer in `1..=n`.
pub fn check_answer(p: &AssocProblem, raw: &str) -> AssocCheck {
    let phrase = Regex::new(r"(?i)\bbase\s+station\s+(\d+)").unwrap();
    let in_range = |k: u64| k >= 1 && k as usize <= p.n;
    let chosen = phrase
        .captures_iter(raw)
        .filter_map(|c| c[1].parse::<u64>().ok())
        .find(|k| in_range(*k))
        .or_else(|| {
            integer_tokens(raw)
                .into_iter()
                .map(|(_, v)| v)
                .find(|k| in_range(*k))
        })
        .map(|k| k as usize);
    AssocCheck {
        chosen,
        correct: chosen == Some(oracle(p)),
    }
}

/// How the association mock picks its answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssocPolicy {
    /// Always the runner-up.
    Perfect,
    /// Uniform over all stations, seeded by the prompt.
    Random,
    /// Always the strongest, ignoring the avoid clause.
    Strongest,
}

pub struct AssocOracleModel {
    policy: AssocPolicy,
    seed: u64,
}

impl AssocOracleModel {
    pub fn new(policy: AssocPolicy, seed: u64) -> Self {
        Self { policy, seed }
    }
}

impl ModelClient for AssocOracleModel {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ModelError> {
        if request.prompt.trim().is_empty() {
            return Err(ModelError::EmptyPrompt);
        }
        let p = parse_problem_prompt(request.prompt)
            .ok_or_else(|| ModelError::Protocol("prompt is not an association problem".into()))?;
        let pick = match self.policy {
            AssocPolicy::Perfect => p.correct_index,
            AssocPolicy::Strongest => p.forbidden_index,
            AssocPolicy::Random => {
                ChaCha8Rng::seed_from_u64(prompt_seed(self.seed, request.prompt)).random_range(1..=p.n)
            }
        };
        Ok(Completion {
            text: format!("The device should connect to base station {pick}."),
            latency_ms: 0,
            attempt_count: 1,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n_bs: usize,
    pub trials: usize,
    pub correct: usize,
    pub errored: usize,
    pub accuracy_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    pub points: Vec<CurvePoint>,
}

impl AccuracyCurve {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "n_bs,trials,correct,errored,accuracy")?;
        for p in &self.points {
            writeln!(
                out,
                "{},{},{},{},{:.2}",
                p.n_bs, p.trials, p.correct, p.errored, p.accuracy_percent
            )?;
        }
        out.flush()
    }
}

/// Per-problem result of a curve run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub problem_id: String,
    pub n_bs: usize,
    pub raw_model_output: Option<String>,
    pub chosen: Option<usize>,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Queries `client` on `trials` seeded problems for each station count.
/// Model errors count as incorrect and are tallied separately.
pub fn run_curve(
    client: &dyn ModelClient,
    n_values: &[usize],
    trials: usize,
    seed: u64,
    concurrency: usize,
) -> Result<(AccuracyCurve, Vec<TrialResult>), AssocError> {
    let mut points = Vec::with_capacity(n_values.len());
    let mut results = Vec::new();
    for &n in n_values {
        let problems = generate_problem_set(n, trials, seed)?;
        let batch = run_bounded(&problems, concurrency, |p| {
            let prompt = render_problem_prompt(p);
            match client.complete(&CompletionRequest::for_item(&p.problem_id, &prompt)) {
                Ok(c) => {
                    let check = check_answer(p, &c.text);
                    TrialResult {
                        problem_id: p.problem_id.clone(),
                        n_bs: n,
                        raw_model_output: Some(c.text),
                        chosen: check.chosen,
                        correct: check.correct,
                        error: None,
                    }
                }
                Err(e) => TrialResult {
                    problem_id: p.problem_id.clone(),
                    n_bs: n,
                    raw_model_output: None,
                    chosen: None,
                    correct: false,
                    error: Some(e.to_string()),
                },
            }
        });
        let correct = batch.iter().filter(|r| r.correct).count();
        let errored = batch.iter().filter(|r| r.error.is_some()).count();
        points.push(CurvePoint {
            n_bs: n,
            trials,
            correct,
            errored,
            accuracy_percent: correct as f64 * 100.0 / trials as f64,
        });
        results.extend(batch);
    }
    Ok((AccuracyCurve { points }, results))
}

/// One problem per line, with its rendered prompt, for transcript replay.
pub fn write_problems_jsonl<W: Write>(mut out: W, problems: &[AssocProblem]) -> std::io::Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        #[serde(flatten)]
        problem: &'a AssocProblem,
        prompt: String,
    }
    for p in problems {
        serde_json::to_writer(
            &mut out,
            &Line {
                problem: p,
                prompt: render_problem_prompt(p),
            },
        )?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelclient::{ConstantModel, FnModel};

    fn example() -> AssocProblem {
        AssocProblem::from_signals("ex", vec![-80, -62, -70]).unwrap()
    }

    #[test]
    fn example_indices() {
        let p = example();
        assert_eq!((p.forbidden_index, p.correct_index), (2, 3));
        assert_eq!(oracle(&p), 3);
        let two = AssocProblem::from_signals("two", vec![-90, -60]).unwrap();
        assert_eq!((two.forbidden_index, two.correct_index), (2, 1));
        let dec = AssocProblem::from_signals("dec", vec![-50, -60, -70, -80]).unwrap();
        assert_eq!(oracle(&dec), 2);
    }

    #[test]
    fn rejects_bad_problems() {
        assert!(matches!(generate_problem(1, 0), Err(AssocError::StationCount(1))));
        assert!(matches!(generate_problem(27, 0), Err(AssocError::StationCount(27))));
        assert!(matches!(
            AssocProblem::from_signals("d", vec![-60, -60]),
            Err(AssocError::DuplicateSignals)
        ));
    }

    #[test]
    fn generation_is_reproducible_and_in_range() {
        let a = generate_problem(10, 99).unwrap();
        assert_eq!(a, generate_problem(10, 99).unwrap());
        assert_ne!(a.signals_dbm, generate_problem(10, 100).unwrap().signals_dbm);
        assert!(a.signals_dbm.iter().all(|s| (SIGNAL_MIN_DBM..=SIGNAL_MAX_DBM).contains(s)));
        let max = generate_problem(26, 3).unwrap();
        assert_eq!(max.n, 26);
    }

    #[test]
    fn problem_sets_are_distinct() {
        let set = generate_problem_set(2, 1000, 5).unwrap();
        let distinct: HashSet<_> = set.iter().map(|p| p.signals_dbm.clone()).collect();
        assert_eq!(distinct.len(), 1000);
        assert_eq!(set, generate_problem_set(2, 1000, 5).unwrap());
        assert!(matches!(
            generate_problem_set(2, 4000, 5),
            Err(AssocError::Exhausted { .. })
        ));
    }

    #[test]
    fn prompt_for_three_stations() {
        let want = "Instruct: A mobile device receives signals from three different base stations. The signal strengths are as follows:\n\
- The signal strength from base station 1 is -80 dBm\n\
- The signal strength from base station 2 is -62 dBm\n\
- The signal strength from base station 3 is -70 dBm\n\
The device must connect to the base station providing the strongest signal but avoiding base station 2.\n\
Given these signal strengths, to which base station should the mobile device connect?\n\
Output:";
        assert_eq!(render_problem_prompt(&example()), want);
    }

    #[test]
    fn prompt_lines_follow_index_order() {
        let p = generate_problem(5, 8).unwrap();
        let text = render_problem_prompt(&p);
        assert!(text.contains("from five different"));
        let lines: Vec<_> = text.lines().filter(|l| l.starts_with("- The signal")).collect();
        assert_eq!(lines.len(), 5);
        for (i, (line, s)) in lines.iter().zip(&p.signals_dbm).enumerate() {
            assert_eq!(*line, format!("- The signal strength from base station {} is {s} dBm", i + 1));
        }
        assert!(render_problem_prompt(&generate_problem(21, 1).unwrap()).contains("twenty-one"));
    }

    #[test]
    fn prompt_parses_back() {
        let p = generate_problem(7, 4).unwrap();
        let back = parse_problem_prompt(&render_problem_prompt(&p)).unwrap();
        assert_eq!(back.signals_dbm, p.signals_dbm);
        assert!(parse_problem_prompt("hello").is_none());
    }

    #[test]
    fn answer_checking() {
        let p = example();
        assert_eq!(
            check_answer(&p, "The device should connect to base station 3"),
            AssocCheck { chosen: Some(3), correct: true }
        );
        assert_eq!(check_answer(&p, "2"), AssocCheck { chosen: Some(2), correct: false });
        assert_eq!(check_answer(&p, "no idea"), AssocCheck { chosen: None, correct: false });
        // the signal values never count as a station index
        assert_eq!(check_answer(&p, "-62 dBm is too strong, use 3").chosen, Some(3));
        assert_eq!(check_answer(&p, "Base Station 9, or base station 1").chosen, Some(1));
    }

    #[test]
    fn policies() {
        for (policy, want) in [(AssocPolicy::Perfect, 100.0), (AssocPolicy::Strongest, 0.0)] {
            let model = AssocOracleModel::new(policy, 0);
            let (curve, _) = run_curve(&model, &[2, 4, 6, 8, 10], 50, 1, 4).unwrap();
            assert!(curve.points.iter().all(|p| p.accuracy_percent == want));
        }
    }

    #[test]
    fn model_errors_are_tallied() {
        let failing = FnModel(|_: &CompletionRequest<'_>| Err(ModelError::Protocol("bad body".into())));
        let (curve, results) = run_curve(&failing, &[3], 5, 0, 2).unwrap();
        assert_eq!((curve.points[0].correct, curve.points[0].errored), (0, 5));
        assert!(results.iter().all(|r| r.error.is_some()));

        let silent = ConstantModel::new("I cannot tell");
        let (curve, _) = run_curve(&silent, &[3], 5, 0, 2).unwrap();
        assert_eq!((curve.points[0].correct, curve.points[0].errored), (0, 0));

        let model = AssocOracleModel::new(AssocPolicy::Perfect, 0);
        assert!(model.complete(&CompletionRequest::new("What is 5G?")).is_err());
    }

    #[test]
    fn curve_csv_shape() {
        let model = AssocOracleModel::new(AssocPolicy::Perfect, 0);
        let (curve, _) = run_curve(&model, &[2, 4], 3, 0, 1).unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "n_bs,trials,correct,errored,accuracy\n2,3,3,0,100.00\n4,3,3,0,100.00\n"
        );
    }
}
