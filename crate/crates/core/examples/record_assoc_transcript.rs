//! Records a user-association transcript with a fixed per-count accuracy.
//!
//! For each station count `n` with target `a`, the first `a` problems of the
//! seeded set are answered with the runner-up and the rest with the strongest
//! station. Replaying the output with the same seed and trial count gives
//! exactly `a` correct answers per count.
//!
//! ```text
//! cargo run -p telerag --example record_assoc_transcript -- out.jsonl
//! ```

use std::collections::HashMap;
use std::path::PathBuf;

use telerag::modelclient::{save_transcript, FnModel, ModelError, RecordingModel};
use telerag::userassoc::{parse_problem_prompt, run_curve};

/// Small-model curve at 100 trials per count.
const TARGETS: [(usize, usize); 5] = [(2, 93), (4, 61), (6, 44), (8, 29), (10, 19)];
const TRIALS: usize = 100;
const SEED: u64 = 7;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| "assoc_small_model_transcript.jsonl".into());
    let targets: HashMap<usize, usize> = TARGETS.into_iter().collect();

    let scripted = FnModel(|req: &telerag::modelclient::CompletionRequest<'_>| {
        let p = parse_problem_prompt(req.prompt)
            .ok_or_else(|| ModelError::Protocol("not an association prompt".into()))?;
        let trial: usize = req
            .item_id
            .and_then(|id| id.rsplit_once("-t"))
            .and_then(|(_, t)| t.parse().ok())
            .ok_or_else(|| ModelError::Protocol("missing trial id".into()))?;
        let pick = if trial < targets[&p.n] { p.correct_index } else { p.forbidden_index };
        Ok(format!("The device should connect to base station {pick}."))
    });
    let recorder = RecordingModel::new(scripted);
    let counts: Vec<usize> = TARGETS.iter().map(|(n, _)| *n).collect();
    let (curve, _) = run_curve(&recorder, &counts, TRIALS, SEED, 1)?;
    for p in &curve.points {
        println!("n={} correct={}/{}", p.n_bs, p.correct, p.trials);
    }
    save_transcript(&out, &recorder.into_entries())?;
    println!("wrote {}", out.display());
    Ok(())
}
