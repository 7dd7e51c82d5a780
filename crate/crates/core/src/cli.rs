//! Command-line front end. `src/bin/ctran.rs` only parses arguments and
//! calls [`run`].

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{DecoderAlignment, EmbeddingKind, RunConfig};
use crate::data::{encode_batch, is_punctuation, parse_corpus, synthetic, CorpusFormat, Example, Splits};
use crate::decoders::MaskMatrix;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalMetrics, MetricsReport, SeedMetrics};
use crate::training::{train_run, Checkpoint, EpochRecord};
use crate::verify::{self, Scope};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ctran", version, about = "Joint intent detection and slot filling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert tabbed train/dev/test files to JSONL.
    Convert(ConvertArgs),
    /// Write the synthetic toy corpus as JSONL splits.
    Synth(SynthArgs),
    /// Train one model per seed, keep the best dev epoch, report test metrics.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled corpus file.
    Eval(EvalArgs),
    /// Tag and classify every utterance of a JSONL file.
    Predict(PredictArgs),
    /// Run the gradient, mask and metric self-checks.
    Verify(VerifyArgs),
    /// Print the causal and alignment masks for a length.
    Masks(MasksArgs),
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Directory holding train.tsv, dev.tsv and test.tsv.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for train.jsonl, dev.jsonl and test.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Seeds given as an inclusive range `1..10` or a list `1,4,9`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

impl FromStr for SeedList {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("bad seed list {s:?}; use 1..10 or 1,2,3"));
        let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
            (a..=b).collect()
        } else {
            s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
        };
        if seeds.is_empty() {
            return Err(bad());
        }
        Ok(SeedList(seeds))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Ablation {
    /// Train with the regular and the aligned slot decoder and compare.
    Decoder,
}

fn parse_embedding(s: &str) -> Result<EmbeddingKind> {
    match s {
        "learned_static" => Ok(EmbeddingKind::LearnedStatic),
        "frozen_file" => Ok(EmbeddingKind::FrozenFile),
        _ => Err(Error::config(format!("unknown embedding {s:?}; expected learned_static or frozen_file"))),
    }
}

#[derive(Clone, Debug, Default, Args)]
pub struct TrainArgs {
    /// JSON run configuration `{model, train}`; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory with train/dev/test splits.
    #[arg(long)]
    pub data: PathBuf,
    /// Split file format: jsonl or tabbed.
    #[arg(long, default_value = "jsonl")]
    pub format: Option<CorpusFormat>,
    #[arg(long)]
    pub out: PathBuf,
    /// Seeds to train, e.g. 1..10 or 1,2,3 [default: 1..10]
    #[arg(long)]
    pub seeds: Option<SeedList>,
    /// [default: 50]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Comma-separated kernel widths [default: 1,2,3,5]
    #[arg(long, value_delimiter = ',')]
    pub kernel_sizes: Option<Vec<usize>>,
    /// aligned or regular [default: aligned]
    #[arg(long)]
    pub decoder: Option<DecoderAlignment>,
    /// learned_static or frozen_file [default: learned_static]
    #[arg(long, value_parser = parse_embedding)]
    pub embedding: Option<EmbeddingKind>,
    /// Vector directory (manifest.json + vectors.bin) for frozen_file.
    #[arg(long)]
    pub embedding_file: Option<PathBuf>,
    /// Drop punctuation tokens tagged O.
    #[arg(long)]
    pub strip_punct: bool,
    /// Single-threaded reproducible execution (the only mode this build has).
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long, value_enum)]
    pub ablation: Option<Ablation>,
}

impl TrainArgs {
    /// Configuration file (or defaults) with command-line overrides applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = &self.seeds {
            cfg.train.seeds = s.0.clone();
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(k) = &self.kernel_sizes {
            cfg.model.set_kernel_sizes(k.clone());
        }
        if let Some(d) = self.decoder {
            cfg.model.slot.alignment = d;
        }
        if let Some(e) = self.embedding {
            cfg.model.embedding.kind = e;
        }
        if let Some(f) = &self.embedding_file {
            cfg.model.embedding.file = Some(f.clone());
        }
        if self.strip_punct {
            cfg.train.strip_punct = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labeled corpus file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "jsonl")]
    pub format: CorpusFormat,
    /// Also write the metrics JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSONL with a `tokens` array per line; other fields are ignored.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// grad, masks, metrics or all
    #[arg(long, default_value = "all")]
    pub scope: Scope,
}

#[derive(Debug, Args)]
pub struct MasksArgs {
    #[arg(long, default_value_t = 5)]
    pub n: usize,
}

/// Everything needed to repeat a run.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub config: RunConfig,
    pub data: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub deterministic: bool,
    pub wall_clock: WallClock,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct WallClock {
    pub total_seconds: f64,
    pub per_run: Vec<RunTiming>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunTiming {
    pub label: String,
    pub seed: u64,
    pub seconds: f64,
    pub epoch_seconds: Vec<f64>,
}

/// One row of the decoder comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub dataset: String,
    pub regular: EvalMetrics,
    pub aligned: EvalMetrics,
    pub slot_f1_delta: f64,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::Parse { .. } | Error::Load(_) | Error::Json(_) => EXIT_IO,
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_VERIFY_FAILED,
    }
}

/// Executes a parsed command and returns the process exit code.
pub fn run(cli: Cli, argv: Vec<String>) -> i32 {
    let result = match cli.command {
        Command::Convert(a) => cmd_convert(&a).map(|_| EXIT_OK),
        Command::Synth(a) => synthetic::splits(a.seed).write_jsonl(&a.out).map(|_| EXIT_OK),
        Command::Train(a) => cmd_train(&a, argv).map(|_| EXIT_OK),
        Command::Eval(a) => cmd_eval(&a).map(|m| {
            println!("{}", serde_json::to_string_pretty(&m).unwrap_or_default());
            EXIT_OK
        }),
        Command::Predict(a) => cmd_predict(&a.checkpoint, &a.input, &a.out).map(|_| EXIT_OK),
        Command::Verify(a) => Ok(cmd_verify(a.scope)),
        Command::Masks(a) => cmd_masks(a.n).map(|_| EXIT_OK),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn cmd_convert(args: &ConvertArgs) -> Result<Splits> {
    let splits = Splits::load(&args.data, CorpusFormat::Tabbed)?;
    splits.write_jsonl(&args.out)?;
    log::info!(
        "wrote {} / {} / {} examples to {}",
        splits.train.len(),
        splits.dev.len(),
        splits.test.len(),
        args.out.display()
    );
    Ok(splits)
}

/// Result of `ctran train`: one median report per decoder variant trained.
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub reports: Vec<(String, MetricsReport)>,
    pub ablation: Option<AblationRow>,
    pub manifest: RunManifest,
}

pub fn cmd_train(args: &TrainArgs, argv: Vec<String>) -> Result<TrainSummary> {
    let started = Instant::now();
    let cfg = args.resolve()?;
    let format = args.format.unwrap_or(CorpusFormat::Jsonl);
    let splits = Splits::load(&args.data, format)?;
    create_dir(&args.out)?;
    write_json(&args.out.join("config.json"), &cfg)?;

    let variants: Vec<(String, RunConfig, PathBuf)> = match args.ablation {
        None => vec![("main".into(), cfg.clone(), args.out.clone())],
        Some(Ablation::Decoder) => [DecoderAlignment::Regular, DecoderAlignment::Aligned]
            .into_iter()
            .map(|a| {
                let mut c = cfg.clone();
                c.model.slot.alignment = a;
                (a.to_string(), c, args.out.join(a.to_string()))
            })
            .collect(),
    };

    let mut reports = Vec::new();
    let mut timings = Vec::new();
    for (label, cfg, dir) in &variants {
        let (report, t) = train_seeds(&splits, cfg, dir, label)?;
        timings.extend(t);
        reports.push((label.clone(), report));
    }

    let ablation = if args.ablation.is_some() {
        let regular = reports[0].1.median;
        let aligned = reports[1].1.median;
        let row = AblationRow {
            dataset: args.data.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            regular,
            aligned,
            slot_f1_delta: aligned.slot_f1 - regular.slot_f1,
        };
        write_json(&args.out.join("ablation.json"), &row)?;
        println!("| Dataset | Regular decoder SF F1 | Aligned decoder SF F1 | Delta |");
        println!("|---|---|---|---|");
        println!(
            "| {} | {:.2} | {:.2} | {:+.2} |",
            row.dataset,
            100.0 * row.regular.slot_f1,
            100.0 * row.aligned.slot_f1,
            100.0 * row.slot_f1_delta
        );
        Some(row)
    } else {
        let m = &reports[0].1.median;
        println!(
            "median over {} seed(s): slot F1 {:.4} (P {:.4} R {:.4}), intent accuracy {:.4}",
            cfg.train.seeds.len(),
            m.slot_f1,
            m.slot_precision,
            m.slot_recall,
            m.intent_accuracy
        );
        None
    };

    let manifest = RunManifest {
        command: "train".into(),
        argv,
        config_path: args.config.clone(),
        config: cfg.clone(),
        data: vec![args.data.clone()],
        seeds: cfg.train.seeds.clone(),
        out: args.out.clone(),
        deterministic: args.deterministic,
        wall_clock: WallClock { total_seconds: started.elapsed().as_secs_f64(), per_run: timings },
    };
    write_json(&args.out.join("run_manifest.json"), &manifest)?;
    Ok(TrainSummary { reports, ablation, manifest })
}

/// Trains every seed of `cfg` into `dir/seed-<n>` and writes `dir/metrics.json`.
pub fn train_seeds(splits: &Splits, cfg: &RunConfig, dir: &Path, label: &str) -> Result<(MetricsReport, Vec<RunTiming>)> {
    create_dir(dir)?;
    let mut per_seed = Vec::new();
    let mut timings = Vec::new();
    for &seed in &cfg.train.seeds {
        let started = Instant::now();
        log::info!("{label}: seed {seed}");
        let outcome = train_run(splits, &cfg.model, &cfg.train, seed, |_: &EpochRecord| {})?;
        let seed_dir = dir.join(format!("seed-{seed}"));
        outcome.best.save(seed_dir.join("checkpoint"))?;
        write_json(&seed_dir.join("history.json"), &outcome.history)?;
        write_json(&seed_dir.join("losses.json"), &outcome.step_losses)?;
        let test = evaluate(
            &outcome.best.model,
            &splits.test,
            &outcome.best.labels,
            cfg.train.strip_punct,
            cfg.train.batch_size,
        )?;
        log::info!("{label}: seed {seed} best epoch {} test {test:?}", outcome.best_epoch);
        per_seed.push(SeedMetrics { seed, best_epoch: outcome.best_epoch, dev: outcome.best_dev, test });
        timings.push(RunTiming {
            label: label.to_string(),
            seed,
            seconds: started.elapsed().as_secs_f64(),
            epoch_seconds: outcome.history.iter().map(|r| r.seconds).collect(),
        });
    }
    let report = MetricsReport::from_runs(per_seed)?;
    write_json(&dir.join("metrics.json"), &report)?;
    Ok((report, timings))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalMetrics> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let examples = parse_corpus(&args.input, args.format)?;
    if examples.is_empty() {
        return Err(Error::EmptyBatch(format!("{} has no examples", args.input.display())));
    }
    let m = evaluate(&ck.model, &examples, &ck.labels, ck.train.strip_punct, ck.train.batch_size)?;
    if let Some(out) = &args.out {
        write_json(out, &m)?;
    }
    Ok(m)
}

#[derive(Debug, Deserialize)]
struct PredictInput {
    #[serde(default)]
    id: Option<String>,
    tokens: Vec<String>,
}

/// One line of `ctran predict` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub slots: Vec<String>,
    pub intent: String,
    pub latency_ms: f64,
}

/// Predicts every line of `input` in order, one utterance at a time.
pub fn cmd_predict(checkpoint: &Path, input: &Path, out: &Path) -> Result<Vec<PredictRecord>> {
    let ck = Checkpoint::load(checkpoint)?;
    let file = fs::File::open(input).map_err(|e| Error::io(input, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(input, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PredictInput = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: input.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let id = parsed.id.unwrap_or_else(|| records.len().to_string());
        if parsed.tokens.is_empty() {
            records.push(PredictRecord { id, tokens: vec![], slots: vec![], intent: String::new(), latency_ms: 0.0 });
            continue;
        }
        let started = Instant::now();
        let keep: Vec<usize> = if ck.train.strip_punct {
            let k: Vec<usize> = (0..parsed.tokens.len()).filter(|&j| !is_punctuation(&parsed.tokens[j])).collect();
            if k.is_empty() { (0..parsed.tokens.len()).collect() } else { k }
        } else {
            (0..parsed.tokens.len()).collect()
        };
        let tokens: Vec<&str> = keep.iter().map(|&j| parsed.tokens[j].as_str()).collect();
        let mut ex = Example::new(&tokens, &vec!["O"; tokens.len()], "<none>");
        ex.id = Some(id.clone());
        let batch = encode_batch(std::slice::from_ref(&ex), &ck.labels, false)?;
        let pred = ck.model.predict(&batch)?.remove(0);
        let mut slots = vec!["O".to_string(); parsed.tokens.len()];
        for (&j, &t) in keep.iter().zip(&pred.slots) {
            slots[j] = ck.labels.slot(t).to_string();
        }
        records.push(PredictRecord {
            id,
            tokens: parsed.tokens,
            slots,
            intent: ck.labels.intent(pred.intent).to_string(),
            latency_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
    let f = fs::File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = BufWriter::new(f);
    for r in &records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(out, e))?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(records)
}

pub fn cmd_verify(scope: Scope) -> i32 {
    let report = verify::run(scope);
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if report.passed() {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    }
}

pub fn render_mask(m: &MaskMatrix<f64>) -> String {
    let mut s = String::new();
    for t in 0..m.target_len() {
        let row: Vec<&str> = (0..m.source_len()).map(|j| if m.is_open(t, j) { "   0" } else { "-inf" }).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn cmd_masks(n: usize) -> Result<()> {
    println!("causal ({n}x{n}):\n{}", render_mask(&crate::decoders::build_causal_mask(n)?));
    println!("zero diagonal ({n}x{n}):\n{}", render_mask(&crate::decoders::build_zero_diag_mask(n)?));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!("1..10".parse::<SeedList>().unwrap().0, (1..=10).collect::<Vec<_>>());
        assert_eq!("3, 5".parse::<SeedList>().unwrap().0, vec![3, 5]);
        assert!("x".parse::<SeedList>().is_err());
        assert!("5..1".parse::<SeedList>().is_err());
    }

    #[test]
    fn cli_shape_is_valid() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn overrides_apply_and_revalidate() {
        let args = TrainArgs {
            epochs: Some(3),
            kernel_sizes: Some(vec![1, 3, 5]),
            decoder: Some(DecoderAlignment::Regular),
            ..Default::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.model.d_model(), 504);
        assert_eq!(cfg.model.slot.alignment, DecoderAlignment::Regular);
        let bad = TrainArgs { batch_size: Some(0), ..Default::default() };
        assert!(matches!(bad.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn masks_render() {
        let m = crate::decoders::build_zero_diag_mask::<f64>(2).unwrap();
        assert_eq!(render_mask(&m), "   0 -inf\n-inf    0\n");
    }
}
