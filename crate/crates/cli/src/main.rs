use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use easytune::dataforge::{self, Relation};
use easytune::embedkit::PairMode;
use easytune::runner::{self, Baseline, ComparisonReport, ExperimentConfig, PublishedScores, RunOutput};
use easytune::synth::{self, SynthConfig};
use easytune::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(name = "easytune", version, about = "Tune SVM relatedness classifiers for knowledge-unit pairs with differential evolution")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Overrides `folds`.
    #[arg(long)]
    folds: Option<usize>,
    /// Overrides `pair_mode` (add or concat).
    #[arg(long)]
    pair_mode: Option<String>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(f) = self.folds {
            cfg.folds = f;
        }
        if let Some(m) = &self.pair_mode {
            cfg.pair_mode = m.parse::<PairMode>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse a dump or benchmark into units and labelled pairs.
    Ingest(Common),
    /// Train the skip-gram embedding on the unit corpus.
    Embed(Common),
    /// Tune the SVM with differential evolution in every fold.
    Tune(Common),
    /// Run the untuned SVM on the same folds.
    Baseline(Common),
    /// Compare a run with another run or with published scores.
    Compare {
        /// Run directory of method a.
        #[arg(long)]
        a: PathBuf,
        /// Run directory of method b.
        #[arg(long, conflicts_with = "published", required_unless_present = "published")]
        b: Option<PathBuf>,
        /// Bundled method name (xu-svm, xu-cnn, tuned-svm) or a score CSV.
        #[arg(long)]
        published: Option<String>,
        /// Where to write the comparison JSON.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write tables, chart data and timing summaries.
    Report {
        /// Run directories.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Comparison JSON files from `compare`.
        #[arg(long, num_args = 0..)]
        comparisons: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write a synthetic Posts.xml / PostLinks.xml pair.
    #[command(hide = true)]
    Synth {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ingest(cfg: &ExperimentConfig) -> Result<()> {
    let ing = runner::ingest(cfg)?;
    let dir = cfg.output_dir.join("data");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    dataforge::write_units(&ing.units, &dir.join("units.jsonl"))?;
    ing.pairs.save(&dir.join("pairs.jsonl"))?;
    let summary = format!(
        "units: {}\n{}content_hash: {}\n",
        ing.units.len(),
        ing.pairs.summary(),
        ing.pairs.content_hash()?
    );
    write(&dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn embed(cfg: &ExperimentConfig) -> Result<()> {
    let units = runner::load_units(cfg)?;
    let model = runner::train_embedding(cfg, &units)?;
    let dir = cfg.output_dir.join("embedding");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    model.save(&dir.join("model.txt"))?;
    let meta = serde_json::to_string_pretty(&model.meta).map_err(|e| Error::Internal(e.to_string()))?;
    write(&dir.join("meta.json"), &(meta + "\n"))?;
    println!(
        "vocabulary {} words, dim {}, loss by epoch {:?}",
        model.vocab_size(),
        model.dim(),
        model.meta.loss_by_epoch
    );
    Ok(())
}

fn run(cfg: &ExperimentConfig, tuned: bool) -> Result<()> {
    let dataset = runner::prepare(cfg)?;
    let out = if tuned {
        runner::run_tuned(cfg, &dataset)?
    } else {
        runner::run_untuned(cfg, &dataset)?
    };
    let dir = cfg.output_dir.join(&out.method);
    out.save(&dir)?;
    let names = Relation::display_names();
    print!(
        "{}",
        out.aggregate
            .to_table(&names, &format!("{} ({} runs)", out.method, out.records.len()))
    );
    log::info!("{} finished in {:.1}s", out.method, out.timing.total_seconds);
    Ok(())
}

fn compare(a: &Path, b: Option<&Path>, published: Option<&str>, out: Option<&Path>) -> Result<()> {
    let run_a = RunOutput::load(a)?;
    let report = match (b, published) {
        (Some(b), _) => runner::compare(&run_a, Baseline::Run(&RunOutput::load(b)?))?,
        (None, Some(p)) => {
            let scores = if Path::new(p).is_file() {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                PublishedScores::from_csv(&text)?
            } else {
                PublishedScores::bundled(p).map_err(|_| {
                    Error::Argument(format!(
                        "`{p}` is neither a score file nor one of {:?}",
                        PublishedScores::bundled_methods()
                    ))
                })?
            };
            runner::compare(&run_a, Baseline::Published(&scores))?
        }
        (None, None) => return Err(Error::Argument("compare needs --b or --published".into())),
    };
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => a
            .parent()
            .unwrap_or(Path::new("."))
            .join("comparisons")
            .join(format!("{}_vs_{}.json", report.a, report.b)),
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    report.save(&path)?;
    print!("{}", report.to_text());
    Ok(())
}

fn report(runs: &[PathBuf], comparisons: &[PathBuf], out: &Path) -> Result<()> {
    let loaded: Vec<RunOutput> = runs.iter().map(|p| RunOutput::load(p)).collect::<Result<_>>()?;
    let mut comps: Vec<ComparisonReport> = comparisons
        .iter()
        .map(|p| ComparisonReport::load(p))
        .collect::<Result<_>>()?;
    // comparison files carry no timings; refill them from the loaded runs
    for c in &mut comps {
        let secs = |m: &str| loaded.iter().find(|r| r.method == m).map(|r| r.timing.total_seconds);
        if let (Some(a), Some(b)) = (secs(&c.a), secs(&c.b)) {
            c.seconds = Some((a, b));
        }
    }
    let refs: Vec<&RunOutput> = loaded.iter().collect();
    for p in runner::emit_report(&refs, &comps, out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest(c) => ingest(&c.load()?),
        Command::Embed(c) => embed(&c.load()?),
        Command::Tune(c) => run(&c.load()?, true),
        Command::Baseline(c) => run(&c.load()?, false),
        Command::Compare { a, b, published, out } => compare(&a, b.as_deref(), published.as_deref(), out.as_deref()),
        Command::Report { runs, comparisons, out } => report(&runs, &comparisons, &out),
        Command::Synth { out, seed } => {
            let dump = synth::generate(&SynthConfig {
                seed,
                ..SynthConfig::default()
            })?;
            synth::write_dump(&dump, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Data => 1,
                ErrorClass::Config => 2,
                ErrorClass::Internal => 3,
            })
        }
    }
}
