use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use complexity_lens::classify::confusion;
use complexity_lens::corpus::{derive_labels, write_instances_jsonl, Split};
use complexity_lens::explain::ExplainerKind;
use complexity_lens::metrics::{correlate, read_tsv_columns, CorrelationMethod};
use complexity_lens::pipeline::{
    evaluate_dataset, explain_dataset, load_corpus, split_instances, train_classifier, RunConfig,
};
use complexity_lens::report::{read_report, render_tsv, write_highlights, write_report, ReportFormat, RunLabel};
use complexity_lens::Error;

#[derive(Parser)]
#[command(name = "complexity-lens", version, about = "Explainable text-complexity evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize a parallel corpus and write labeled instances as JSON lines.
    Ingest(RunArgs),
    /// Train a classifier and write `model.json` and `vocab.json`.
    Train(RunArgs),
    /// Highlight complex tokens in the gold-complex test sentences.
    Explain(RunArgs),
    /// Run the full pipeline and write reports.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Report formats to write.
        #[arg(long, value_delimiter = ',', default_value = "json,tsv,highlighted-text")]
        format: Vec<ReportFormat>,
    },
    /// Correlate two numeric columns of a TSV file.
    Correlate {
        input: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        /// pearson, spearman, kendall, or all.
        #[arg(long, default_value = "all")]
        method: String,
    },
    /// Re-render a saved `report.json`.
    Report {
        input: PathBuf,
        #[arg(long, default_value = "tsv")]
        format: ReportFormat,
        /// Output directory; the TSV table goes to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Settings shared by the pipeline subcommands. Flags override `--config`.
#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single corpus, split by pair id.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// tsv or two-file.
    #[arg(long)]
    format_in: Option<String>,
    /// Domain tags, one per corpus line.
    #[arg(long)]
    domains: Option<PathBuf>,
    #[arg(long)]
    tokenize: Option<String>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// lr or nb.
    #[arg(long)]
    classifier: Option<String>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// random, lexicon, top-features, lime, shap, oracle, none.
    #[arg(long)]
    explainer: Option<String>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any other configuration key, as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let flags = [
            ("corpus", path(&self.corpus)),
            ("train", path(&self.train)),
            ("valid", path(&self.valid)),
            ("test", path(&self.test)),
            ("format", self.format_in.clone()),
            ("domains", path(&self.domains)),
            ("tokenize", self.tokenize.clone()),
            ("lexicon", path(&self.lexicon)),
            ("classifier", self.classifier.clone()),
            ("model", path(&self.model)),
            ("vocab", path(&self.vocab)),
            ("explainer", self.explainer.clone()),
            ("preset", self.preset.clone()),
            ("seed", self.seed.map(|s| s.to_string())),
            ("out", path(&self.out)),
        ];
        for (key, value) in flags {
            if let Some(value) = value {
                cfg.set(key, &value)?;
            }
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_owned(),
        source,
    })
}

fn announce(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn ingest(args: &RunArgs) -> Result<(), Error> {
    let mut cfg = args.config()?;
    // Ingest needs neither a classifier nor an explainer.
    cfg.explainer = ExplainerKind::None;
    cfg.validate()?;
    let pairs = load_corpus(&cfg)?;
    create_dir(&cfg.out)?;
    let path = cfg.out.join("instances.jsonl");
    let file = fs::File::create(&path).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    let mut out = io::BufWriter::new(file);
    write_instances_jsonl(&pairs, &mut out)?;
    out.flush().map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    log::info!("{} pairs ingested", pairs.len());
    announce(&[path]);
    Ok(())
}

fn train(args: &RunArgs) -> Result<(), Error> {
    let mut cfg = args.config()?;
    cfg.explainer = ExplainerKind::None;
    cfg.model = None;
    cfg.vocab = None;
    cfg.validate()?;
    let pairs = load_corpus(&cfg)?;
    let splits = split_instances(derive_labels(&pairs));
    let trained = train_classifier(&cfg, &splits)?;
    for split in [Split::Valid, Split::Test] {
        if let Some(insts) = splits.get(&split).filter(|i| !i.is_empty()) {
            let conf = confusion(&trained.classifier, &trained.featurizer, insts)?;
            log::info!(
                "{split:?} accuracy {:.4} on {} instances",
                conf.accuracy().unwrap_or(0.0),
                conf.total()
            );
        }
    }
    let (model, vocab) = trained.save(&cfg, &cfg.out)?;
    announce(&[model, vocab]);
    Ok(())
}

fn explain(args: &RunArgs) -> Result<(), Error> {
    let cfg = args.config()?;
    let sentences = explain_dataset(&cfg)?;
    let run = RunLabel {
        dataset: &cfg.dataset,
        explainer: cfg.explainer.name(),
        seed: cfg.seed,
    };
    announce(&write_highlights(run, &sentences, &cfg.out)?);
    Ok(())
}

fn evaluate(args: &RunArgs, formats: &[ReportFormat]) -> Result<(), Error> {
    let cfg = args.config()?;
    let report = evaluate_dataset(&cfg)?;
    log::info!(
        "{} accuracy {:.4}; {} sentences explained by {}",
        report.classification.classifier,
        report.classification.accuracy,
        report.overall.sentences,
        report.explainer
    );
    for &format in formats {
        announce(&write_report(&report, format, &cfg.out)?);
    }
    Ok(())
}

fn correlate_columns(input: &Path, x: &str, y: &str, method: &str) -> Result<(), Error> {
    let methods: Vec<CorrelationMethod> = match method {
        "all" => CorrelationMethod::ALL.to_vec(),
        m => vec![m.parse()?],
    };
    let cols = read_tsv_columns(input, &[x, y])?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let _ = writeln!(out, "method\tn\tcoefficient");
    for m in methods {
        let value = match correlate(&cols[0], &cols[1], m) {
            Ok(v) => format!("{v:.6}"),
            Err(Error::Undefined(_)) => "NA".into(),
            Err(e) => return Err(e),
        };
        let _ = writeln!(out, "{}\t{}\t{value}", m.name(), cols[0].len());
    }
    Ok(())
}

fn rerender(input: &Path, format: ReportFormat, out: Option<&Path>) -> Result<(), Error> {
    let report = read_report(input)?;
    match out {
        Some(dir) => announce(&write_report(&report, format, dir)?),
        None if format == ReportFormat::Tsv => print!("{}", render_tsv(&report)),
        None => return Err(Error::Config("--out is required for this format".into())),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Ingest(args) => ingest(&args),
        Command::Train(args) => train(&args),
        Command::Explain(args) => explain(&args),
        Command::Evaluate { run, format } => evaluate(&run, &format),
        Command::Correlate { input, x, y, method } => correlate_columns(&input, &x, &y, &method),
        Command::Report { input, format, out } => rerender(&input, format, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
