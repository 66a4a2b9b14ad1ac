use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use telerag::corpus::{load_chunks, WhitespaceTokenizer, DEFAULT_CHUNK_SIZE};
use telerag::embed::{EmbedError, EmbeddingProviderConfig};
use telerag::energymodel::{
    self, EnergyError, EnergyKind, FittedEnergyModel, SyntheticConfig,
};
use telerag::evalharness::{self, dataset_fingerprint, load_dataset, ParseMode, RunMetadata};
use telerag::modelclient::{save_transcript, ModelClient, ModelConfig, ModelError, RecordingModel};
use telerag::pipeline::{self, PipelineError};
use telerag::rag::{self, ChunkIndex, QueryMode, RagConfig, Retriever};
use telerag::userassoc::{self, DEFAULT_TRIALS, MAX_STATIONS, MIN_STATIONS};
use telerag::vstore::VectorStore;

#[derive(Parser)]
#[command(name = "telerag", version, about = "Telecom RAG evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chunk every .txt file in a directory into a corpus JSONL file.
    Ingest(IngestArgs),
    /// Embed a corpus into a vector store file.
    Embed(EmbedArgs),
    /// Score a model on an MCQ dataset, optionally with retrieval.
    Eval(EvalArgs),
    /// Per-category accuracy deltas between two eval reports.
    Compare(CompareArgs),
    /// Fit the two base-station energy formulas.
    UsecaseEnergy(EnergyArgs),
    /// Accuracy of a model on avoid-the-strongest association problems.
    UsecaseAssoc(AssocArgs),
}

#[derive(Args, Serialize)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CHUNK_SIZE)]
    chunk_size: usize,
    #[arg(long, default_value_t = 0)]
    overlap: usize,
}

#[derive(Args, Serialize)]
struct EmbedArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    provider_config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Add to an existing store instead of replacing it.
    #[arg(long)]
    append: bool,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ParseModeArg {
    Strict,
    Cascade,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum QueryModeArg {
    QuestionOnly,
    QuestionPlusOptions,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    model_config: PathBuf,
    /// Vector store to retrieve context from.
    #[arg(long, requires_all = ["corpus", "provider_config"])]
    rag: Option<PathBuf>,
    /// Corpus JSONL the store was built from.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Embedding provider the store was built with.
    #[arg(long)]
    provider_config: Option<PathBuf>,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long, default_value_t = 1536)]
    max_context_tokens: usize,
    #[arg(long, value_enum, default_value_t = QueryModeArg::QuestionPlusOptions)]
    query_mode: QueryModeArg,
    #[arg(long, value_enum, default_value_t = ParseModeArg::Cascade)]
    parse_mode: ParseModeArg,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Audit log; defaults to the report path with `.audit.jsonl`.
    #[arg(long)]
    audit: Option<PathBuf>,
    /// Save every exchange as a replayable transcript.
    #[arg(long)]
    record_transcript: Option<PathBuf>,
    /// Overrides the concurrency from the model config.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    concurrency: Option<u64>,
}

#[derive(Args, Serialize)]
struct CompareArgs {
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long)]
    candidate: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ModelChoice {
    Eq1,
    Eq2,
    Both,
}

#[derive(Args, Serialize)]
struct EnergyArgs {
    /// CSV with columns bs_id,L,MTX,DSS,E.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    data: Option<PathBuf>,
    /// Generate this many synthetic base stations instead of reading data.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    synthetic: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Relative noise on synthetic energy (0.02 is 2%).
    #[arg(long, default_value_t = 0.02)]
    noise_sd: f64,
    #[arg(long, value_enum, default_value_t = ModelChoice::Both)]
    model: ModelChoice,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    plot_csv: Option<PathBuf>,
    /// Also write the records that were fitted.
    #[arg(long)]
    data_out: Option<PathBuf>,
    /// Print the two task prompts to stdout.
    #[arg(long)]
    print_prompts: bool,
}

fn station_count(s: &str) -> Result<usize, String> {
    let n: usize = s.parse().map_err(|_| format!("{s:?} is not a station count"))?;
    if (MIN_STATIONS..=MAX_STATIONS).contains(&n) {
        Ok(n)
    } else {
        Err(format!("station counts must be in {MIN_STATIONS}..={MAX_STATIONS}"))
    }
}

#[derive(Args, Serialize)]
struct AssocArgs {
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10", value_parser = station_count)]
    bs_counts: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_TRIALS as u64, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    #[arg(long)]
    model_config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-trial results as JSONL.
    #[arg(long)]
    results: Option<PathBuf>,
    /// The generated problems as JSONL.
    #[arg(long)]
    problems_out: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    concurrency: Option<u64>,
}

// ---------------------------------------------------------------------------
// failures and exit codes

enum Failure {
    Data(anyhow::Error),
    Model(anyhow::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Data(_) => 2,
            Failure::Model(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Data(e) | Failure::Model(e) => e,
        }
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

trait ResultExt<T> {
    fn data(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> ResultExt<T> for Result<T, E> {
    fn data(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Data(e.into()))
    }
}

fn model_failure(e: ModelError) -> Failure {
    match e {
        ModelError::Config(_) | ModelError::Transcript { .. } | ModelError::Io(_) => {
            Failure::Data(e.into())
        }
        _ => Failure::Model(e.into()),
    }
}

fn embed_failure(e: EmbedError) -> Failure {
    match e {
        EmbedError::Config(_) => Failure::Data(e.into()),
        _ => Failure::Model(e.into()),
    }
}

fn pipeline_failure(e: PipelineError) -> Failure {
    match e {
        PipelineError::Embed(inner) => embed_failure(inner),
        other => Failure::Data(other.into()),
    }
}

// ---------------------------------------------------------------------------
// run plumbing

/// Held while a command writes to its primary output.
struct OutputLock(PathBuf);

impl OutputLock {
    fn acquire(output: &Path) -> CmdResult<Self> {
        let path = with_suffix(output, ".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Failure::Data(anyhow!(
                "{} is locked by another run (remove {} if it is stale)",
                output.display(),
                path.display()
            ))),
            Err(e) => Err(Failure::Data(
                anyhow::Error::new(e).context(format!("cannot create {}", path.display())),
            )),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes through a temporary sibling so a failed run leaves no partial file.
fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> anyhow::Result<()>) -> CmdResult {
    let tmp = with_suffix(path, ".partial");
    let result = (|| -> anyhow::Result<()> {
        let mut w = BufWriter::new(
            File::create(&tmp).with_context(|| format!("cannot write {}", tmp.display()))?,
        );
        f(&mut w)?;
        w.flush()?;
        drop(w);
        fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.data()
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    dataset_fingerprint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    started_at: String,
    finished_at: String,
    outputs: Vec<PathBuf>,
}

struct Run {
    command: &'static str,
    config: Value,
    started_at: String,
    dataset_fingerprint: Option<String>,
    seed: Option<u64>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn start(command: &'static str, args: &impl Serialize) -> Self {
        Self {
            command,
            config: serde_json::to_value(args).unwrap_or(Value::Null),
            started_at: now(),
            dataset_fingerprint: None,
            seed: None,
            outputs: Vec::new(),
        }
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes `<primary>.manifest.json`.
    fn finish(self, primary: &Path) -> CmdResult {
        let manifest = RunManifest {
            command: self.command.to_string(),
            config: self.config,
            dataset_fingerprint: self.dataset_fingerprint,
            seed: self.seed,
            started_at: self.started_at,
            finished_at: now(),
            outputs: self.outputs,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_text(&with_suffix(primary, ".manifest.json"), &(text + "\n"))
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s} (pass --seed {s} to reproduce)");
        s
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> CmdResult<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {what} {}", path.display()))
        .data()?;
    serde_json::from_str(&text)
        .with_context(|| format!("invalid {what} {}", path.display()))
        .data()
}

fn load_model(path: &Path) -> CmdResult<(ModelConfig, Box<dyn ModelClient>)> {
    let cfg = ModelConfig::load(path).map_err(model_failure)?;
    let client = cfg.build().map_err(model_failure)?;
    Ok((cfg, client))
}

// ---------------------------------------------------------------------------
// commands

fn cmd_ingest(args: IngestArgs) -> CmdResult {
    let _lock = OutputLock::acquire(&args.out)?;
    let mut run = Run::start("ingest", &args);
    let (_, chunks, summary) =
        pipeline::ingest_dir(&args.input, &WhitespaceTokenizer, args.chunk_size, args.overlap)
            .map_err(pipeline_failure)?;
    write_atomic(&args.out, |w| Ok(telerag::corpus::write_chunks_jsonl(w, &chunks)?))?;
    run.output(&args.out);
    println!(
        "ingested {} documents into {} chunks ({} tokens; per document min {} max {}; mean chunk {:.1} tokens)",
        summary.documents,
        summary.chunks,
        summary.total_tokens,
        summary.min_doc_tokens,
        summary.max_doc_tokens,
        summary.mean_chunk_tokens
    );
    run.finish(&args.out)
}

fn cmd_embed(args: EmbedArgs) -> CmdResult {
    let _lock = OutputLock::acquire(&args.out)?;
    let mut run = Run::start("embed", &args);
    let chunks = load_chunks(&args.corpus).data()?;
    let provider_cfg: EmbeddingProviderConfig = read_json(&args.provider_config, "provider config")?;
    let provider = provider_cfg.build().map_err(embed_failure)?;
    let mut store = if args.append && args.out.exists() {
        VectorStore::load(&args.out).data()?
    } else {
        VectorStore::new(provider.dims(), provider.fingerprint())
    };
    let before = store.len();
    pipeline::embed_into(&mut store, provider.as_ref(), &chunks).map_err(pipeline_failure)?;
    write_atomic(&args.out, |w| Ok(store.write_to(w)?))?;
    run.output(&args.out);
    println!(
        "stored {} embeddings ({} new) with {}",
        store.len(),
        store.len() - before,
        store.fingerprint()
    );
    run.finish(&args.out)
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let _lock = OutputLock::acquire(&args.report)?;
    let mut run = Run::start("eval", &args);
    let items = load_dataset(&args.dataset).data()?;
    run.dataset_fingerprint = Some(dataset_fingerprint(&items));
    let (model_cfg, client) = load_model(&args.model_config)?;
    let concurrency = args.concurrency.map(|c| c as usize).unwrap_or(model_cfg.concurrency);
    let parse_mode = match args.parse_mode {
        ParseModeArg::Strict => ParseMode::Strict,
        ParseModeArg::Cascade => ParseMode::Cascade,
    };
    let rag_cfg = RagConfig {
        k: args.k as usize,
        max_context_tokens: args.max_context_tokens,
        query_mode: match args.query_mode {
            QueryModeArg::QuestionOnly => QueryMode::QuestionOnly,
            QueryModeArg::QuestionPlusOptions => QueryMode::QuestionPlusOptions,
        },
    };

    let rag_parts = match &args.rag {
        None => None,
        Some(store_path) => {
            let store = VectorStore::load(store_path).data()?;
            let chunks = load_chunks(args.corpus.as_ref().expect("clap requires corpus")).data()?;
            let max_chunk = chunks.iter().map(|c| c.token_count).max().unwrap_or(0);
            rag_cfg.validate(max_chunk).data()?;
            let provider_cfg: EmbeddingProviderConfig = read_json(
                args.provider_config.as_ref().expect("clap requires provider config"),
                "provider config",
            )?;
            let provider = provider_cfg.build().map_err(embed_failure)?;
            Some((store, chunks.into_iter().collect::<ChunkIndex>(), provider))
        }
    };
    let retriever = match &rag_parts {
        None => None,
        Some((store, index, provider)) => {
            Some(Retriever::new(store, provider.as_ref(), index, rag_cfg).data()?)
        }
    };

    let recorder = args.record_transcript.as_ref().map(|_| RecordingModel::new(&*client));
    let active: &dyn ModelClient = match &recorder {
        Some(r) => r,
        None => client.as_ref(),
    };
    let (outcomes, audit) = rag::evaluate_with(active, retriever.as_ref(), &items, concurrency, parse_mode);

    let meta = RunMetadata {
        model: serde_json::to_value(&model_cfg).unwrap_or(Value::Null),
        rag: retriever.is_some(),
        k: retriever.as_ref().map(|r| r.config().k),
        parse_mode,
    };
    let report = evalharness::score(&items, &outcomes, meta).data()?;
    write_text(&args.report, &(report.to_json_pretty() + "\n"))?;
    run.output(&args.report);
    if let Some(csv_path) = &args.csv {
        write_atomic(csv_path, |w| Ok(report.write_csv(w)?))?;
        run.output(csv_path);
    }
    let audit_path = args
        .audit
        .clone()
        .unwrap_or_else(|| args.report.with_extension("audit.jsonl"));
    write_atomic(&audit_path, |w| Ok(rag::write_audit_jsonl(w, &audit)?))?;
    run.output(&audit_path);
    if let (Some(path), Some(rec)) = (&args.record_transcript, recorder) {
        save_transcript(path, &rec.into_entries()).data()?;
        run.output(path);
    }

    for c in &report.categories {
        println!("{:<28} {:>6} {:>6.2}%", c.category.as_str(), c.count, c.accuracy_percent);
    }
    println!(
        "{:<28} {:>6} {:>6.2}%",
        "Overall", report.overall.count, report.overall.accuracy_percent
    );
    run.finish(&args.report)?;
    if report.errored() > 0 {
        return Err(Failure::Model(anyhow!(
            "{} of {} items errored; see {}",
            report.errored(),
            report.overall.count,
            audit_path.display()
        )));
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> CmdResult {
    let a: evalharness::EvalReport = read_json(&args.baseline, "report")?;
    let b: evalharness::EvalReport = read_json(&args.candidate, "report")?;
    let rows = evalharness::compare_runs(&a, &b).data()?;
    write_atomic(&args.out, |w| Ok(evalharness::write_delta_csv(w, &rows)?))?;
    for r in &rows {
        println!("{:<28} {:>6.2} -> {:>6.2} ({:+.2})", r.category, r.a, r.b, r.delta);
    }
    Ok(())
}

fn cmd_energy(args: EnergyArgs) -> CmdResult {
    let _lock = OutputLock::acquire(&args.out)?;
    let mut run = Run::start("usecase-energy", &args);
    if args.print_prompts {
        let (t1, t2) = energymodel::render_task_prompts();
        println!("{t1}\n\n{t2}\n");
    }
    let records = match (&args.data, args.synthetic) {
        (Some(path), _) => energymodel::load_records(path).data()?,
        (None, Some(n)) => {
            let seed = resolve_seed(args.seed);
            run.seed = Some(seed);
            let cfg = SyntheticConfig {
                n_bs: n as usize,
                noise_sd: args.noise_sd,
                seed,
                ..SyntheticConfig::default()
            };
            run.config["synthetic_config"] = serde_json::to_value(&cfg).unwrap_or(Value::Null);
            energymodel::generate_synthetic(&cfg).data()?
        }
        (None, None) => unreachable!("clap requires --data or --synthetic"),
    };
    if let Some(path) = &args.data_out {
        write_atomic(path, |w| Ok(energymodel::write_records(w, &records)?))?;
        run.output(path);
    }
    let kinds: &[EnergyKind] = match args.model {
        ModelChoice::Eq1 => &[EnergyKind::Eq1],
        ModelChoice::Eq2 => &[EnergyKind::Eq2],
        ModelChoice::Both => &[EnergyKind::Eq1, EnergyKind::Eq2],
    };
    let fits: Vec<FittedEnergyModel> = kinds
        .iter()
        .map(|k| energymodel::fit(&records, *k))
        .collect::<Result<_, EnergyError>>()
        .data()?;
    let json = if fits.len() == 1 {
        serde_json::to_string_pretty(&fits[0])
    } else {
        serde_json::to_string_pretty(&fits)
    }
    .expect("fit serializes");
    write_text(&args.out, &(json + "\n"))?;
    run.output(&args.out);
    if let Some(path) = &args.plot_csv {
        write_atomic(path, |w| Ok(energymodel::write_plot_csv(w, &records, &fits)?))?;
        run.output(path);
    }
    for f in &fits {
        println!(
            "{}: MAPE {:.2}% over {} records, params {}",
            f.kind,
            f.mape_percent,
            f.n_records,
            json!(f.params)
        );
    }
    run.finish(&args.out)
}

fn cmd_assoc(args: AssocArgs) -> CmdResult {
    let _lock = OutputLock::acquire(&args.out)?;
    let mut run = Run::start("usecase-assoc", &args);
    let seed = resolve_seed(args.seed);
    run.seed = Some(seed);
    let (model_cfg, client) = load_model(&args.model_config)?;
    let concurrency = args.concurrency.map(|c| c as usize).unwrap_or(model_cfg.concurrency);
    let trials = args.trials as usize;
    if let Some(path) = &args.problems_out {
        let mut problems = Vec::new();
        for &n in &args.bs_counts {
            problems.extend(userassoc::generate_problem_set(n, trials, seed).data()?);
        }
        write_atomic(path, |w| Ok(userassoc::write_problems_jsonl(w, &problems)?))?;
        run.output(path);
    }
    let (curve, results) =
        userassoc::run_curve(client.as_ref(), &args.bs_counts, trials, seed, concurrency).data()?;
    write_atomic(&args.out, |w| Ok(curve.write_csv(w)?))?;
    run.output(&args.out);
    if let Some(path) = &args.results {
        write_atomic(path, |w| {
            for r in &results {
                serde_json::to_writer(&mut *w, r)?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })?;
        run.output(path);
    }
    for p in &curve.points {
        println!(
            "n={:<3} {:>4}/{:<4} {:>6.2}%{}",
            p.n_bs,
            p.correct,
            p.trials,
            p.accuracy_percent,
            if p.errored > 0 { format!(" ({} errored)", p.errored) } else { String::new() }
        );
    }
    run.finish(&args.out)?;
    let errored: usize = curve.points.iter().map(|p| p.errored).sum();
    if errored > 0 {
        let first = results.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(Failure::Model(anyhow!("{errored} trials errored; first error: {first}")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
        Command::UsecaseEnergy(a) => cmd_energy(a),
        Command::UsecaseAssoc(a) => cmd_assoc(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.exit_code())
        }
    }
}
