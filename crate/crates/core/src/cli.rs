//! The `ner-harness` command line.
//!
//! Each subcommand reads files, calls the library, and writes its outputs
//! under `--out` only after every input has been validated, so a failed run
//! leaves nothing behind. Exit codes: 0 success, 1 validation, 2 config.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::artifact::Provenance;
use crate::corpus::{encode, ingest, tokenize, Document, LabelVocabulary, Scheme};
use crate::imbalance::{class_weights, label_stats, oversample, LabelCount, DEFAULT_CAP};
use crate::llm::{
    run_extraction, to_predictions, usage_summary, write_summary_csv, write_usage_csv, ChatClient, DocStatus,
    PromptTemplate, ProviderConfig, RunSummary,
};
use crate::metrics::{evaluate, pr_curve, sweep_threshold, GoldStandard, MetricsReport, PredictionSet, SweepResult};
use crate::stratify::{split, split_quality, SplitFile, SplitMethod, SplitSpec};

#[derive(Debug, Parser)]
#[command(
    name = "ner-harness",
    version,
    about = "Multilabel clinical NER experimentation harness"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus and count documents per label.
    Ingest(Common),
    /// Partition the corpus into subsets.
    Split(SplitArgs),
    /// Class weights from document frequencies.
    Weights(WeightsArgs),
    /// Replication plan for rare-label documents.
    Oversample(OversampleArgs),
    /// Export tokens and tag matrices.
    Encode(EncodeArgs),
    /// Score predictions at a fixed threshold.
    Evaluate(EvalArgs),
    /// Find the threshold maximizing micro F1.
    Sweep(EvalArgs),
    /// Precision-recall curve per channel.
    Prcurve(PrCurveArgs),
    /// Few-shot extraction through a chat-completions provider.
    LlmRun(LlmArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Corpus JSONL.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Label vocabulary JSON array.
    #[arg(long)]
    pub vocab: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Subset {
    /// Split file restricting the documents used.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Subset of `--split` to use.
    #[arg(long, requires = "split")]
    pub subset: Option<String>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "iterative")]
    pub method: SplitMethod,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "0.6,0.2,0.2")]
    pub ratios: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub subset: Subset,
    /// Raise every weight below 1.0 to 1.0.
    #[arg(long)]
    pub clamp: bool,
}

#[derive(Debug, Args)]
pub struct OversampleArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub subset: Subset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Plan size limit as a multiple of the document count.
    #[arg(long, default_value_t = DEFAULT_CAP)]
    pub cap: f64,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub subset: Subset,
    #[arg(long, default_value = "io")]
    pub scheme: Scheme,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub subset: Subset,
    #[arg(long, default_value = "io")]
    pub scheme: Scheme,
    /// Prediction JSONL.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Decision threshold (evaluate only).
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct PrCurveArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Channel to plot; repeatable. Defaults to every channel.
    #[arg(long)]
    pub label: Vec<String>,
}

#[derive(Debug, Args)]
pub struct LlmArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub subset: Subset,
    #[arg(long, default_value = "io")]
    pub scheme: Scheme,
    /// Provider config, TOML or JSON.
    #[arg(long)]
    pub provider: PathBuf,
    /// Prompt template JSON `{system, user}`; the built-in prompt otherwise.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Document used as the few-shot example.
    #[arg(long)]
    pub example_id: Option<String>,
    /// Number of responses the summary cost is scaled to.
    #[arg(long, default_value_t = 1000)]
    pub batch: u32,
}

#[derive(Debug)]
pub enum Failure {
    Validation(anyhow::Error),
    Config(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Config(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Validation(e) | Failure::Config(e) => e,
        }
    }
}

trait OrFail<T> {
    fn invalid(self) -> Result<T, Failure>;
    fn config(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrFail<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Validation(e.into()))
    }

    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run(argv: Vec<String>) -> u8 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli, argv.get(1..).unwrap_or_default().to_vec()) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            f.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, args: Vec<String>) -> Result<(), Failure> {
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a, args),
        Command::Split(a) => cmd_split(a, args),
        Command::Weights(a) => cmd_weights(a, args),
        Command::Oversample(a) => cmd_oversample(a, args),
        Command::Encode(a) => cmd_encode(a, args),
        Command::Evaluate(a) => cmd_evaluate(a, args),
        Command::Sweep(a) => cmd_sweep(a, args),
        Command::Prcurve(a) => cmd_prcurve(a, args),
        Command::LlmRun(a) => cmd_llm_run(a, args),
    }
}

/// Files produced by a command, written together at the end.
#[derive(Default)]
struct Outputs(Vec<(String, Vec<u8>)>);

impl Outputs {
    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let mut bytes = serde_json::to_vec_pretty(value).config()?;
        bytes.push(b'\n');
        self.0.push((name.to_string(), bytes));
        Ok(())
    }

    fn bytes(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.0.push((name.into(), bytes));
    }

    fn write(self, dir: &Path) -> Result<(), Failure> {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))
            .config()?;
        for (name, bytes) in self.0 {
            let path = dir.join(&name);
            fs::write(&path, bytes)
                .with_context(|| format!("cannot write {}", path.display()))
                .config()?;
        }
        Ok(())
    }
}

fn jsonl<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, &row).expect("serializable row");
        out.push(b'\n');
    }
    out
}

fn require(path: &Path, prov: &mut Provenance) -> Result<(), Failure> {
    if !path.is_file() {
        return Err(Failure::Config(anyhow!("input file {} does not exist", path.display())));
    }
    prov.add_input(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .config()
}

/// Loads the vocabulary and corpus, recording their hashes.
fn load(common: &Common, prov: &mut Provenance) -> Result<(LabelVocabulary, Vec<Document>), Failure> {
    require(&common.vocab, prov)?;
    require(&common.corpus, prov)?;
    let vocab = LabelVocabulary::load(&common.vocab).invalid()?;
    let docs = ingest(&common.corpus, &vocab).invalid()?;
    if docs.is_empty() {
        return Err(Failure::Validation(anyhow!(
            "{}: no documents",
            common.corpus.display()
        )));
    }
    Ok((vocab, docs))
}

fn check_hash(artifact: &Path, found: Option<&str>, vocab: &LabelVocabulary) -> Result<(), Failure> {
    match found {
        Some(h) if h != vocab.hash() => Err(Failure::Validation(anyhow!(
            "vocabulary hash mismatch: {} was produced with {h}, the vocabulary is {}",
            artifact.display(),
            vocab.hash()
        ))),
        Some(_) => Ok(()),
        None => {
            log::warn!("{} carries no vocabulary hash", artifact.display());
            Ok(())
        }
    }
}

/// Documents of the requested subset, or the whole corpus without `--split`.
fn select<'a>(
    docs: &'a [Document],
    subset: &Subset,
    default_subset: &str,
    vocab: &LabelVocabulary,
    prov: &mut Provenance,
) -> Result<Vec<&'a Document>, Failure> {
    let Some(path) = &subset.split else {
        return Ok(docs.iter().collect());
    };
    require(path, prov)?;
    let raw = fs::read_to_string(path).config()?;
    let file: SplitFile = serde_json::from_str(&raw)
        .with_context(|| format!("malformed split file {}", path.display()))
        .invalid()?;
    check_hash(path, file.vocab_hash.as_deref(), vocab)?;
    let assignment = file.into_assignment().invalid()?;
    assignment.check_partition(docs).invalid()?;
    let name = subset.subset.as_deref().unwrap_or(default_subset);
    let chosen = assignment
        .select(name, docs)
        .ok_or_else(|| anyhow!("split file has no subset `{name}`"))
        .invalid()?;
    if chosen.is_empty() {
        return Err(Failure::Validation(anyhow!("subset `{name}` has no documents")));
    }
    Ok(chosen)
}

#[derive(Serialize)]
struct StatsFile {
    documents: u64,
    labels: Vec<LabelCount>,
    vocab_hash: String,
    provenance: Provenance,
}

fn cmd_ingest(a: &Common, args: Vec<String>) -> Result<(), Failure> {
    let mut prov = Provenance::new("ingest", args, None);
    let (vocab, docs) = load(a, &mut prov)?;
    let stats = label_stats(&docs, &vocab);
    println!("{:<32} {:>8}", "label", "records");
    for c in &stats.labels {
        println!("{:<32} {:>8}", c.label, c.containing);
    }
    println!("{:<32} {:>8}", "documents", stats.total);
    let mut out = Outputs::default();
    out.json(
        "stats.json",
        &StatsFile {
            documents: stats.total,
            labels: stats.labels,
            vocab_hash: vocab.hash(),
            provenance: prov,
        },
    )?;
    out.write(&a.out)
}

#[derive(Serialize)]
struct QualityFile<'a> {
    #[serde(flatten)]
    report: &'a crate::stratify::SplitQualityReport,
    vocab_hash: String,
    provenance: &'a Provenance,
}

fn cmd_split(a: &SplitArgs, args: Vec<String>) -> Result<(), Failure> {
    let mut prov = Provenance::new("split", args, Some(a.seed));
    let (vocab, docs) = load(&a.common, &mut prov)?;
    let spec = SplitSpec::new(a.ratios.clone(), a.method, a.seed).config()?;
    let assignment = split(&docs, &spec).invalid()?;
    let quality = split_quality(&docs, &assignment, &spec);
    let mut out = Outputs::default();
    out.json(
        "split_quality.json",
        &QualityFile {
            report: &quality,
            vocab_hash: vocab.hash(),
            provenance: &prov,
        },
    )?;
    out.json("split.json", &assignment.to_file(Some(vocab.hash()), Some(prov)))?;
    out.write(&a.common.out)
}

fn cmd_weights(a: &WeightsArgs, args: Vec<String>) -> Result<(), Failure> {
    let mut prov = Provenance::new("weights", args, None);
    let (vocab, docs) = load(&a.common, &mut prov)?;
    let train = select(&docs, &a.subset, "train", &vocab, &mut prov)?;
    let weights = class_weights(&label_stats(&train, &vocab), a.clamp).invalid()?;
    let mut out = Outputs::default();
    out.json("weights.json", &weights.to_file(Some(vocab.hash()), Some(prov)))?;
    out.write(&a.common.out)
}

fn cmd_oversample(a: &OversampleArgs, args: Vec<String>) -> Result<(), Failure> {
    let mut prov = Provenance::new("oversample", args, Some(a.seed));
    let (vocab, docs) = load(&a.common, &mut prov)?;
    let train = select(&docs, &a.subset, "train", &vocab, &mut prov)?;
    let plan = oversample(&train, &vocab, a.seed, a.cap).config()?;
    let mut out = Outputs::default();
    out.json("oversample.json", &plan.to_file(Some(vocab.hash()), Some(prov)))?;
    out.write(&a.common.out)
}

#[derive(Serialize)]
struct Sidecar<'a> {
    file: &'a str,
    documents: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    scheme: Option<Scheme>,
    vocab_hash: String,
    provenance: Provenance,
}

fn cmd_encode(a: &EncodeArgs, args: Vec<String>) -> Result<(), Failure> {
    let mut prov = Provenance::new("encode", args, None);
    let (vocab, docs) = load(&a.common, &mut prov)?;
    let chosen = select(&docs, &a.subset, "train", &vocab, &mut prov)?;
    let records = chosen.iter().map(|d| {
        let tokens = tokenize(&d.text);
        encode(d, &tokens, &vocab, a.scheme).to_record(&tokens, &vocab)
    });
    let mut out = Outputs::default();
    out.bytes("encoded.jsonl", jsonl(records));
    out.json(
        "encoded.provenance.json",
        &Sidecar {
            file: "encoded.jsonl",
            documents: chosen.len(),
            scheme: Some(a.scheme),
            vocab_hash: vocab.hash(),
            provenance: prov,
        },
    )?;
    out.write(&a.common.out)
}

/// Gold matrices and validated predictions for an evaluation command.
fn eval_inputs(a: &EvalArgs, prov: &mut Provenance) -> Result<(GoldStandard, PredictionSet, LabelVocabulary), Failure> {
    let (vocab, docs) = load(&a.common, prov)?;
    let chosen = select(&docs, &a.subset, "test", &vocab, prov)?;
    require(&a.predictions, prov)?;
    let pred = PredictionSet::load(&a.predictions).invalid()?;
    pred.check_vocabulary(&vocab, a.scheme)
        .with_context(|| format!("{}", a.predictions.display()))
        .invalid()?;
    let gold = GoldStandard::from_documents(chosen, &vocab, a.scheme);
    Ok((gold, pred, vocab))
}

#[derive(Serialize)]
struct ReportFile<'a, T> {
    #[serde(flatten)]
    result: &'a T,
    scheme: Scheme,
    vocab_hash: String,
    provenance: Provenance,
}

fn cmd_evaluate(a: &EvalArgs, args: Vec<String>) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(Failure::Config(anyhow!("--threshold {} outside [0, 1]", a.threshold)));
    }
    let mut prov = Provenance::new("evaluate", args, None);
    let (gold, pred, vocab) = eval_inputs(a, &mut prov)?;
    let report: MetricsReport = evaluate(&gold, &pred, a.threshold).invalid()?;
    println!(
        "micro P {:.4} R {:.4} F1 {:.4} | macro P {:.4} R {:.4} F1 {:.4}",
        report.micro.precision,
        report.micro.recall,
        report.micro.f1,
        report.macro_.precision,
        report.macro_.recall,
        report.macro_.f1
    );
    let mut out = Outputs::default();
    out.json(
        "metrics.json",
        &ReportFile {
            result: &report,
            scheme: a.scheme,
            vocab_hash: vocab.hash(),
            provenance: prov,
        },
    )?;
    out.write(&a.common.out)
}

fn cmd_sweep(a: &EvalArgs, args: Vec<String>) -> Result<(), Failure> {
    let mut prov = Provenance::new("sweep", args, None);
    let (gold, pred, vocab) = eval_inputs(a, &mut prov)?;
    let result: SweepResult = sweep_threshold(&gold, &pred).invalid()?;
    println!("threshold {} micro F1 {:.4}", result.threshold, result.report.micro.f1);
    let mut out = Outputs::default();
    out.json(
        "sweep.json",
        &ReportFile {
            result: &result,
            scheme: a.scheme,
            vocab_hash: vocab.hash(),
            provenance: prov,
        },
    )?;
    out.write(&a.common.out)
}

/// File-name-safe form of a channel name.
pub fn curve_file_name(label: &str) -> String {
    let stem: String = label
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    format!("prcurve_{stem}.csv")
}

#[derive(Serialize)]
struct CurveIndex {
    files: indexmap::IndexMap<String, String>,
    warnings: Vec<String>,
    scheme: Scheme,
    vocab_hash: String,
    provenance: Provenance,
}

fn cmd_prcurve(a: &PrCurveArgs, args: Vec<String>) -> Result<(), Failure> {
    let mut prov = Provenance::new("prcurve", args, None);
    let (gold, pred, vocab) = eval_inputs(&a.eval, &mut prov)?;
    let labels = if a.label.is_empty() {
        gold.channels.clone()
    } else {
        a.label.clone()
    };
    let mut out = Outputs::default();
    let mut files = indexmap::IndexMap::new();
    let mut warnings = Vec::new();
    for label in &labels {
        let curve = pr_curve(&gold, &pred, label).invalid()?;
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).config()?;
        let name = curve_file_name(label);
        if files.values().any(|n| *n == name) {
            return Err(Failure::Validation(anyhow!(
                "channels map to the same file name {name}"
            )));
        }
        files.insert(label.clone(), name.clone());
        warnings.extend(curve.warning);
        out.bytes(name, buf);
    }
    out.json(
        "prcurve.provenance.json",
        &CurveIndex {
            files,
            warnings,
            scheme: a.eval.scheme,
            vocab_hash: vocab.hash(),
            provenance: prov,
        },
    )?;
    out.write(&a.eval.common.out)
}

#[derive(Serialize)]
struct RunFile<'a> {
    model: &'a str,
    effort: &'a str,
    example_id: &'a str,
    scheme: Scheme,
    summary: RunSummary,
    unprocessed: Vec<&'a str>,
    hallucinations: Vec<DocHallucinations<'a>>,
    vocab_hash: String,
    provenance: Provenance,
}

#[derive(Serialize)]
struct DocHallucinations<'a> {
    id: &'a str,
    items: &'a [crate::llm::Hallucination],
}

fn cmd_llm_run(a: &LlmArgs, args: Vec<String>) -> Result<(), Failure> {
    let mut prov = Provenance::new("llm-run", args, None);
    require(&a.provider, &mut prov)?;
    let config = ProviderConfig::load(&a.provider).config()?;
    let template = match &a.template {
        Some(path) => {
            require(path, &mut prov)?;
            PromptTemplate::load(path).config()?
        }
        None => PromptTemplate::default(),
    };
    template.validate().config()?;
    let (vocab, docs) = load(&a.common, &mut prov)?;
    let chosen = select(&docs, &a.subset, "test", &vocab, &mut prov)?;

    let example = match &a.example_id {
        Some(id) => docs
            .iter()
            .find(|d| d.id == *id)
            .ok_or_else(|| anyhow!("example document `{id}` is not in the corpus"))
            .invalid()?,
        None => {
            let pool = match &a.subset.split {
                Some(_) => select(
                    &docs,
                    &Subset {
                        split: a.subset.split.clone(),
                        subset: None,
                    },
                    "train",
                    &vocab,
                    &mut prov,
                )?,
                None => docs.iter().collect(),
            };
            pool.into_iter()
                .find(|d| !d.entities.is_empty())
                .ok_or_else(|| anyhow!("no annotated document to use as the example"))
                .invalid()?
        }
    };
    let targets: Vec<&Document> = chosen.into_iter().filter(|d| d.id != example.id).collect();
    if targets.is_empty() {
        return Err(Failure::Validation(anyhow!("no documents left besides the example")));
    }

    let client = ChatClient::new(config.clone()).config()?;
    let outcomes = run_extraction(&client, config.max_parallel, &template, &vocab, example, &targets).config()?;
    let summary = RunSummary::from_outcomes(&outcomes);
    eprintln!(
        "{} processed, {} unparsable, {} unprocessed; {} spans accepted, {} hallucinated",
        summary.processed, summary.parse_failures, summary.failed, summary.accepted_spans, summary.hallucinations
    );

    let spans: Vec<_> = outcomes.iter().map(|o| o.spans.clone()).collect();
    let predictions = to_predictions(&targets, &spans, &vocab, a.scheme);
    let usage: Vec<_> = outcomes.iter().filter_map(|o| o.usage.clone()).collect();
    let aligned = targets
        .iter()
        .zip(&spans)
        .map(|(d, s)| Document::new(d.id.clone(), d.text.clone(), s.clone()));

    let mut out = Outputs::default();
    out.bytes("raw_responses.jsonl", jsonl(outcomes.iter().map(|o| o.raw_record())));
    let mut buf = Vec::new();
    predictions.write(&mut buf).config()?;
    out.bytes("predictions.jsonl", buf);
    out.bytes("aligned.jsonl", jsonl(aligned));
    let mut buf = Vec::new();
    write_usage_csv(&usage, &mut buf).config()?;
    out.bytes("usage.csv", buf);
    let mut buf = Vec::new();
    write_summary_csv(&usage_summary(&usage, a.batch), &mut buf).config()?;
    out.bytes("usage_summary.csv", buf);
    out.json(
        "run.json",
        &RunFile {
            model: &config.model,
            effort: config.effort(),
            example_id: &example.id,
            scheme: a.scheme,
            summary,
            unprocessed: outcomes
                .iter()
                .filter(|o| o.status != DocStatus::Processed)
                .map(|o| o.id.as_str())
                .collect(),
            hallucinations: outcomes
                .iter()
                .filter(|o| !o.alignment.hallucinations.is_empty())
                .map(|o| DocHallucinations {
                    id: &o.id,
                    items: &o.alignment.hallucinations,
                })
                .collect(),
            vocab_hash: vocab.hash(),
            provenance: prov,
        },
    )?;
    out.write(&a.common.out)
}
