use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use promptrefine::metrics::AssdMode;
use promptrefine::pipeline::{
    gen_synthetic, run_pipeline, score_dir, Dataset, RunConfig, SynthParams,
};
use promptrefine::segmenter::conformance::{check_backend, check_worker, probe_image};
use promptrefine::segmenter::protocol;
use promptrefine::{BackendSpec, MockBackend, Profile, SearchTrace};

/// Refines segmentation pseudo-labels by searching box prompts for a
/// promptable segmenter.
#[derive(Parser)]
#[command(name = "promptrefine", version)]
struct Cli {
    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Gen(GenArgs),
    /// Refine every slice of a dataset.
    Run(RunArgs),
    /// Score a directory of label files against ground truth.
    Metrics(MetricsArgs),
    /// Extract the output-change series from trace files.
    TracePlot(TraceArgs),
    /// Check a backend against the segmenter protocol.
    Conformance(ConformanceArgs),
    /// Serve the mock segmenter over stdin/stdout.
    #[command(hide = true)]
    MockWorker(MockWorkerArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    slices: usize,
    /// Image side length.
    #[arg(long, default_value_t = 192)]
    size: usize,
    /// Label classes including background.
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Fraction of object pixels given background-like target features.
    #[arg(long, default_value_t = 0.0)]
    dispersion: f64,
    #[arg(long, default_value_t = 5)]
    slices_per_volume: usize,
    /// Omit the small false-positive blobs.
    #[arg(long)]
    no_fp_patches: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root.
    #[arg(long)]
    data: Option<PathBuf>,
    /// `mock:<seed>` or `proc:<command line>`.
    #[arg(long)]
    backend: Option<BackendSpec>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    profile: Option<Profile>,
    /// Any config key, as `key=value`; may repeat.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    data: PathBuf,
    /// Directory holding `<id>.dfgt` label maps.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value = "slice")]
    assd_mode: AssdMode,
    /// Write report_2d.csv and report_3d.csv here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TraceArgs {
    /// Trace CSV files or directories of them.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    /// Write `<name>_delta.csv` files here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConformanceArgs {
    #[arg(long)]
    backend: BackendSpec,
}

#[derive(Args)]
struct MockWorkerArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    scratch: Option<PathBuf>,
    /// Refuse feature requests.
    #[arg(long)]
    no_features: bool,
}

enum Outcome {
    Done,
    Partial,
}

fn gen(a: GenArgs) -> Result<Outcome> {
    let params = SynthParams {
        seed: a.seed,
        n_slices: a.slices,
        height: a.size,
        width: a.size,
        classes: a.classes,
        dispersion: a.dispersion,
        slices_per_volume: a.slices_per_volume,
        false_positive_patches: !a.no_fp_patches,
    };
    let entries = gen_synthetic(&a.out, &params)?;
    println!("wrote {} slices to {}", entries.len(), a.out.display());
    Ok(Outcome::Done)
}

fn run_config(a: &RunArgs) -> Result<RunConfig> {
    let text = match &a.config {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let mut cfg = RunConfig::parse_with_profile(&text, a.profile)?;
    for kv in &a.overrides {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects key=value, got {kv:?}");
        };
        if k.trim() == "profile" {
            bail!("use --profile to choose a profile");
        }
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(d) = &a.data {
        cfg.dataset_root = Some(d.clone());
    }
    if let Some(b) = &a.backend {
        cfg.backend = Some(b.clone());
    }
    if let Some(j) = a.jobs {
        cfg.parallelism = j;
    }
    if let Some(o) = &a.out {
        cfg.output_dir = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(a: RunArgs) -> Result<Outcome> {
    let cfg = run_config(&a)?;
    let s = run_pipeline(&cfg)?;
    println!("slices     {}", s.slices.len());
    println!("failed     {}", s.failures);
    println!("baseline   {:.4}", s.baseline_dice());
    println!("refined    {:.4}", s.refined_dice());
    if let Some(r) = &s.retrain {
        println!(
            "retrain    loss {:.6} -> {:.6}",
            r.curve.initial_loss, r.curve.final_loss
        );
    }
    println!("output     {}", s.output_dir.display());
    Ok(if s.failures > 0 {
        Outcome::Partial
    } else {
        Outcome::Done
    })
}

fn metrics(a: MetricsArgs) -> Result<Outcome> {
    let ds = Dataset::open(&a.data)?;
    let Some(scores) = score_dir(&ds, &a.labels, a.assd_mode)? else {
        bail!("no slice in {} has ground truth", a.data.display());
    };
    match a.out {
        Some(dir) => {
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("report_2d.csv"), scores.report_2d.to_csv())?;
            fs::write(dir.join("report_3d.csv"), scores.report_3d.to_csv())?;
        }
        None => {
            let mut out = io::stdout().lock();
            write!(
                out,
                "# 2d\n{}# 3d\n{}",
                scores.report_2d.to_csv(),
                scores.report_3d.to_csv()
            )?;
            out.flush()?;
        }
    }
    Ok(Outcome::Done)
}

fn trace_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<io::Result<_>>()?;
            found.retain(|f| f.extension().is_some_and(|x| x == "csv"));
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Class index from a `<slice>_class<k>.csv` name, 0 if absent.
fn class_of(path: &Path) -> usize {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.rsplit_once("_class"))
        .and_then(|(_, k)| k.parse().ok())
        .unwrap_or(0)
}

fn trace_plot(a: TraceArgs) -> Result<Outcome> {
    let files = trace_files(&a.traces)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
    }
    let stdout = io::stdout();
    let mut sink = BufWriter::new(stdout.lock());
    for f in files {
        let text = fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?;
        let trace = SearchTrace::from_csv(class_of(&f), &text)
            .with_context(|| format!("parsing {}", f.display()))?;
        let series = trace.delta_series_csv();
        match &a.out {
            Some(dir) => {
                let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
                fs::write(dir.join(format!("{stem}_delta.csv")), series)?;
            }
            None => write!(sink, "# {}\n{series}", f.display())?,
        }
    }
    sink.flush()?;
    Ok(Outcome::Done)
}

fn conformance(a: ConformanceArgs) -> Result<Outcome> {
    let mut passed = true;
    if let BackendSpec::Process { command } = &a.backend {
        let report = check_worker(command);
        print!("{report}");
        passed &= report.passed();
    }
    let backend = a.backend.build(1)?;
    let report = check_backend(backend.as_ref(), &probe_image(24, 32));
    print!("{report}");
    passed &= report.passed();
    if !passed {
        bail!("backend does not conform");
    }
    Ok(Outcome::Done)
}

fn mock_worker(a: MockWorkerArgs) -> Result<Outcome> {
    if let Some(dir) = &a.scratch {
        log::debug!("scratch directory {}", dir.display());
    }
    let backend = if a.no_features {
        MockBackend::without_features(a.seed)
    } else {
        MockBackend::new(a.seed)
    };
    protocol::serve(&backend, io::stdin().lock(), io::stdout().lock())?;
    Ok(Outcome::Done)
}

/// The error chain, skipping causes the previous message already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.ends_with(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Run(a) => run(a),
        Command::Metrics(a) => metrics(a),
        Command::TracePlot(a) => trace_plot(a),
        Command::Conformance(a) => conformance(a),
        Command::MockWorker(a) => mock_worker(a),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Err(e)
            if e.downcast_ref::<io::Error>()
                .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Ok(Outcome::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}
