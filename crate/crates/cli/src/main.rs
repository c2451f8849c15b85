use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tabclar::config::{build_backend, GenerateConfig, RunConfig};
use tabclar::corpus::TableCorpus;
use tabclar::evalharness::{
    eval_trace, render_report, run_benchmark, write_trace, DetectorMode, MetricsReport, Resources,
};
use tabclar::genpipe::{generate_dataset, GenError};
use tabclar::instance::{read_jsonl, write_jsonl, Split};
use tabclar::registry::DomainId;
use tabclar::simulator::SimulatorMode;

/// Underspecified table QA: dataset generation and closed-loop evaluation.
///
/// Exit codes: 0 success, 1 input error, 2 generation shortfall.
/// The model API key is read from the variable named by `api_key_env` in
/// the backend config (TABCLAR_API_KEY by default).
#[derive(Parser)]
#[command(name = "tabclar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a corpus manifest and print table, row and domain counts.
    Ingest { manifest: PathBuf },
    /// Generate a dataset JSONL.
    ///
    /// Config keys: manifest, templates, intents, output, counts
    /// {specified, select, from, where, mixed}, split {train, validation,
    /// test}, seed, abbreviation (rule|llm), paraphrase, max_attempts, llm.
    Generate(GenerateArgs),
    /// Run the closed loop over a dataset; writes report.json and
    /// trace.jsonl.
    ///
    /// Config keys: manifest, templates, intents, dataset, output_dir,
    /// detector {type: pipeline|oracle|noisy, rate, seed}, simulator
    /// {type: fixed|dynamic, max_retries}, gating (strict|slot_type),
    /// ablation {no_select, no_from, no_where}, backends {slu, summarizer,
    /// sqlgen: reference|llm}, k1, b, split, llm, sql_examples,
    /// summary_examples.
    Run(RunArgs),
    /// Recompute the report JSON from a trace.
    Eval {
        trace: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the metrics table of a trace.
    Report { trace: PathBuf },
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output path.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Fixed,
    Dynamic,
}

#[derive(Clone, Copy, ValueEnum)]
enum Detector {
    Pipeline,
    Oracle,
    Noisy,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Simulator mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, value_enum)]
    detector: Option<Detector>,
    /// Corruption rate of the noisy detector.
    #[arg(long, default_value_t = 0.2)]
    noise_rate: f64,
    /// Seed for the noisy detector.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to available parallelism.
    #[arg(long, env = "TABCLAR_WORKERS")]
    workers: Option<usize>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    no_select_clarify: bool,
    #[arg(long)]
    no_from_clarify: bool,
    #[arg(long)]
    no_where_clarify: bool,
}

/// Failure with a specific exit code.
struct Exit(u8);

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest { manifest } => ingest(&manifest),
        Command::Generate(a) => generate(a),
        Command::Run(a) => run(a),
        Command::Eval { trace, output } => eval(&trace, output.as_deref()),
        Command::Report { trace } => report(&trace),
    };
    match result {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(Exit(code))) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn ingest(manifest: &Path) -> Result<Option<Exit>> {
    let corpus = TableCorpus::load(manifest).with_context(|| format!("loading {}", manifest.display()))?;
    if corpus.table_count() == 0 {
        bail!("{}: manifest lists no tables", manifest.display());
    }
    println!("tables  {}", corpus.table_count());
    println!("rows    {}", corpus.row_count());
    for d in DomainId::ALL {
        println!("domain  {:<13} {} tables", d.as_str(), corpus.list_captions(d).len());
    }
    Ok(None)
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<Option<Exit>> {
    let mut cfg = GenerateConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.dataset.seed = s;
    }
    if let Some(o) = a.output {
        cfg.output = o;
    }
    let ws = cfg.paths.load()?;
    let llm = build_backend(&cfg.llm)?;
    let (dataset, code) = match generate_dataset(&ws.corpus, &ws.pack, &cfg.dataset, llm.as_deref()) {
        Ok(d) => (d, None),
        Err(GenError::Shortfall(short, partial)) => {
            for s in &short {
                eprintln!(
                    "warning: {} reached {}/{} instances",
                    s.category.as_str(),
                    s.got,
                    s.wanted
                );
            }
            (*partial, Some(Exit(2)))
        }
        Err(e) => return Err(e.into()),
    };
    write_file(&cfg.output, |w| write_jsonl(w, &dataset.instances))?;
    let [tr, va, te] = dataset.split_sizes();
    eprintln!(
        "wrote {} instances to {} (train {tr}, validation {va}, test {te})",
        dataset.instances.len(),
        cfg.output.display()
    );
    Ok(code)
}

fn run(a: RunArgs) -> Result<Option<Exit>> {
    let mut cfg = RunConfig::load(&a.config)?;
    let h = &mut cfg.harness;
    match a.mode {
        Some(Mode::Fixed) => h.simulator = SimulatorMode::Fixed,
        Some(Mode::Dynamic) => h.simulator = SimulatorMode::dynamic(),
        None => {}
    }
    let noisy_seed = a.seed.unwrap_or(match h.detector {
        DetectorMode::Noisy { seed, .. } => seed,
        _ => 0,
    });
    match a.detector {
        Some(Detector::Pipeline) => h.detector = DetectorMode::Pipeline,
        Some(Detector::Oracle) => h.detector = DetectorMode::Oracle,
        Some(Detector::Noisy) => {
            h.detector = DetectorMode::Noisy {
                rate: a.noise_rate,
                seed: noisy_seed,
            }
        }
        None => {
            if let (DetectorMode::Noisy { rate, .. }, Some(seed)) = (h.detector, a.seed) {
                h.detector = DetectorMode::Noisy { rate, seed };
            }
        }
    }
    if let DetectorMode::Noisy { rate, .. } = h.detector {
        if !(0.0..=1.0).contains(&rate) {
            bail!("noise rate must lie in [0, 1], got {rate}");
        }
    }
    h.ablation.no_select |= a.no_select_clarify;
    h.ablation.no_from |= a.no_from_clarify;
    h.ablation.no_where |= a.no_where_clarify;
    if let Some(s) = &a.split {
        h.split = Some(s.parse::<Split>().map_err(anyhow::Error::msg)?);
    }
    if let Some(o) = a.output_dir {
        cfg.output_dir = o;
    }
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));

    let ws = cfg.paths.load()?;
    let instances = read_jsonl(&cfg.dataset)?;
    let (sql_bank, summary_bank) = cfg.banks()?;
    let llm = build_backend(&cfg.llm)?;
    let res = Resources {
        corpus: &ws.corpus,
        pack: &ws.pack,
        intents: &ws.intents,
        llm: llm.as_deref(),
        sql_bank: &sql_bank,
        summary_bank: &summary_bank,
    };
    let run = run_benchmark(&instances, &cfg.harness, &res, workers)?;
    write_file(&cfg.output_dir.join("trace.jsonl"), |w| write_trace(w, &run))?;
    write_report(&cfg.output_dir.join("report.json"), &run.report)?;
    print!("{}", render_report(&run.report));
    Ok(None)
}

fn report_json(r: &MetricsReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(r)? + "\n")
}

fn write_report(path: &Path, r: &MetricsReport) -> Result<()> {
    let text = report_json(r)?;
    write_file(path, |w| w.write_all(text.as_bytes()))
}

fn load_trace(trace: &Path) -> Result<MetricsReport> {
    let f = File::open(trace).with_context(|| format!("opening {}", trace.display()))?;
    eval_trace(BufReader::new(f)).with_context(|| trace.display().to_string())
}

fn eval(trace: &Path, output: Option<&Path>) -> Result<Option<Exit>> {
    let r = load_trace(trace)?;
    match output {
        Some(p) => write_report(p, &r)?,
        None => print!("{}", report_json(&r)?),
    }
    Ok(None)
}

fn report(trace: &Path) -> Result<Option<Exit>> {
    print!("{}", render_report(&load_trace(trace)?));
    Ok(None)
}
