//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gradcore::SeedStream;
use crate::harness::{
    ablation_suite, evaluate, invariance_audit, load_model, model_gradcheck, nested_subsets, oracle_check, save_run,
    size_sweep, train, Execution, PositionTagged, RunCache, TrainConfig, TrainFile, TrainedModel, CHECKPOINT_FILE, MODEL_CONFIG_FILE,
    REPORT_FILE,
};
use crate::model::{Copinet, ModelConfig, Variant};
use crate::rpmgen::{
    generate_dataset, generate_instance, instance_seed, read_dataset, sidecar_path,
    write_atomic, write_dataset, ProblemInstance,
};

pub const TRAIN_FILE: &str = "train.rpm";
pub const VAL_FILE: &str = "val.rpm";
pub const TEST_FILE: &str = "test.rpm";

/// Exit status when a command ran but one of its checks failed.
pub const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "copinet", version, about = "Contrastive perceptual inference for Raven-style matrices")]
pub struct Cli {
    /// Worker threads for per-instance work.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,
    /// Run single-threaded and leave wall-clock times out of outputs.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset file, or a train/val/test split into a directory.
    Gen(GenArgs),
    /// Train a model from a key=value config file.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train the four ablation presets over several seeds.
    Ablate(AblateArgs),
    /// Train on nested training subsets of increasing size.
    Sweep(SweepArgs),
    /// Compare analytic and finite-difference gradients of the training loss.
    Gradcheck(GradcheckArgs),
    /// Check potentials under row swaps, column swaps and candidate shuffles.
    Audit(AuditArgs),
    /// Score the symbolic solver and verify answer uniqueness.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
struct Overwrite {
    /// Replace existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("size").required(true).args(["count", "split"])))]
struct GenArgs {
    /// Number of instances, written to the file given by --out.
    #[arg(long)]
    count: Option<usize>,
    /// Train,val,test sizes, written as train.rpm, val.rpm and test.rpm under the directory --out.
    #[arg(long, value_delimiter = ',', value_name = "TRAIN,VAL,TEST")]
    split: Option<Vec<usize>>,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file (--count) or directory (--split).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overwrite: Overwrite,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// key=value config naming train_data, val_data and optionally test_data.
    #[arg(long)]
    config: PathBuf,
    /// Directory for model.ckpt, model.cfg and report.json.
    #[arg(long)]
    out: PathBuf,
    /// Overrides both the initialization seed and the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    overwrite: Overwrite,
}

#[derive(Debug, Args)]
struct ModelSource {
    /// Checkpoint to load; a freshly initialized model is used without it.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Model config for the checkpoint; defaults to model.cfg beside it.
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// Preset of the fresh model when no checkpoint is given.
    #[arg(long, default_value = "copinet")]
    variant: Variant,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Model config for the checkpoint; defaults to model.cfg beside it.
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Optional JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overwrite: Overwrite,
}

#[derive(Debug, Args)]
struct ExperimentData {
    /// Directory holding train.rpm, val.rpm and test.rpm.
    #[arg(long)]
    data: PathBuf,
    /// Training seeds, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// key=value training settings without dataset keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overwrite: Overwrite,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    common: ExperimentData,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Strictly increasing training-set sizes, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "250,500,1000,2000,5000")]
    sizes: Vec<usize>,
    #[command(flatten)]
    common: ExperimentData,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    /// Number of generated instances.
    #[arg(long, default_value_t = 20)]
    instances: usize,
    /// Sampled entries per parameter tensor and instance.
    #[arg(long, default_value_t = 8)]
    per_param: usize,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
    /// Report plain central differences without re-measuring entries whose
    /// stencil straddles a relu kink.
    #[arg(long)]
    raw: bool,
    /// Seeds the instances, the fresh model and the sampled entries.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    model: ModelSource,
    /// Optional JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overwrite: Overwrite,
}

#[derive(Debug, Args)]
struct AuditArgs {
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Audit only the first N instances.
    #[arg(long)]
    trials: Option<usize>,
    /// Seeds the candidate shuffles and the fresh model.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Audit a position-tagged copy of the model instead (negative control).
    #[arg(long)]
    mutant: bool,
    #[command(flatten)]
    model: ModelSource,
    /// Optional JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overwrite: Overwrite,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Optional JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overwrite: Overwrite,
}

/// Output files of one command. Paths are claimed before any work starts;
/// unless the command finishes, claimed paths that did not exist before are
/// removed again.
struct Outputs {
    force: bool,
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    done: bool,
}

impl Outputs {
    fn new(force: bool) -> Self {
        Self {
            force,
            files: Vec::new(),
            dirs: Vec::new(),
            done: false,
        }
    }

    fn claim(&mut self, path: &Path) -> Result<PathBuf> {
        if path.exists() && !self.force {
            return Err(Error::Config(format!("{} exists; pass --force to overwrite", path.display())));
        }
        if path.is_dir() {
            return Err(Error::Config(format!("{} is a directory", path.display())));
        }
        if !path.exists() {
            self.files.push(path.to_path_buf());
        }
        Ok(path.to_path_buf())
    }

    fn claim_dir(&mut self, dir: &Path) -> Result<()> {
        if dir.exists() && !dir.is_dir() {
            return Err(Error::Config(format!("{} exists and is not a directory", dir.display())));
        }
        if !dir.exists() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            self.dirs.push(dir.to_path_buf());
        }
        Ok(())
    }

    fn finish(mut self) {
        self.done = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.done {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

enum Outcome {
    Passed,
    Failed,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    write_atomic(path, text.as_bytes())
}

fn maybe_json<T: Serialize>(path: Option<&PathBuf>, value: &T) -> Result<()> {
    path.map_or(Ok(()), |p| write_json(p, value))
}

fn claim_optional(outputs: &mut Outputs, path: &Option<PathBuf>) -> Result<()> {
    if let Some(p) = path {
        outputs.claim(p)?;
    }
    Ok(())
}

fn check_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            Err(Error::Config(format!("directory {} does not exist", p.display())))
        }
        _ => Ok(()),
    }
}

fn gen(args: &GenArgs) -> Result<Outcome> {
    let mut outputs = Outputs::new(args.overwrite.force);
    match (&args.count, &args.split) {
        (Some(count), _) => {
            check_parent(&args.out)?;
            outputs.claim(&args.out)?;
            outputs.claim(&sidecar_path(&args.out))?;
            let data = generate_dataset(*count, args.seed)?;
            write_dataset(&data, &args.out)?;
            println!("wrote {count} instances to {}", args.out.display());
        }
        (None, Some(sizes)) => {
            if sizes.len() != 3 {
                return Err(Error::Config(format!("--split needs three sizes, got {}", sizes.len())));
            }
            let names = [TRAIN_FILE, VAL_FILE, TEST_FILE];
            let paths: Vec<PathBuf> = names.iter().map(|n| args.out.join(n)).collect();
            outputs.claim_dir(&args.out)?;
            for p in &paths {
                outputs.claim(p)?;
                outputs.claim(&sidecar_path(p))?;
            }
            let stream = SeedStream::new(args.seed);
            for ((name, path), &n) in names.iter().zip(&paths).zip(sizes) {
                let data = generate_dataset(n, stream.split_named(name).seed())?;
                write_dataset(&data, path)?;
                println!("wrote {n} instances to {}", path.display());
            }
        }
        (None, None) => unreachable!("clap requires --count or --split"),
    }
    outputs.finish();
    Ok(Outcome::Passed)
}

fn run_train(args: &TrainArgs, exec: Execution) -> Result<Outcome> {
    let mut file = TrainFile::load(&args.config)?;
    if let Some(seed) = args.seed {
        file.config.master_seed = seed;
        file.config.model.seed = seed;
    }
    for p in [Some(&file.data.train), Some(&file.data.val), file.data.test.as_ref()].into_iter().flatten() {
        if !p.is_file() {
            return Err(Error::Config(format!("dataset {} not found", p.display())));
        }
    }
    let mut outputs = Outputs::new(args.overwrite.force);
    outputs.claim_dir(&args.out)?;
    for name in [CHECKPOINT_FILE, MODEL_CONFIG_FILE, REPORT_FILE] {
        outputs.claim(&args.out.join(name))?;
    }
    let (model, report) = train(&file, exec)?;
    save_run(&args.out, &model, &report)?;
    println!(
        "{}: best epoch {} of {}, best val loss {:.5}",
        report.variant,
        report.best_epoch,
        report.epochs.len(),
        report.best_val_loss
    );
    if let Some(t) = &report.test {
        print!("test {}", t.table());
    }
    outputs.finish();
    Ok(Outcome::Passed)
}

fn run_eval(args: &EvalArgs, exec: Execution) -> Result<Outcome> {
    let mut outputs = Outputs::new(args.overwrite.force);
    claim_optional(&mut outputs, &args.out)?;
    let model = load_model(&args.checkpoint, args.model_config.as_deref())?;
    let data = read_dataset(&args.data)?;
    let report = evaluate(&model, &data, exec)?;
    print!("{}", report.table());
    maybe_json(args.out.as_ref(), &report)?;
    outputs.finish();
    Ok(Outcome::Passed)
}

struct Splits {
    train: Vec<ProblemInstance>,
    val: Vec<ProblemInstance>,
    test: Vec<ProblemInstance>,
}

fn read_splits(dir: &Path) -> Result<Splits> {
    Ok(Splits {
        train: read_dataset(&dir.join(TRAIN_FILE))?,
        val: read_dataset(&dir.join(VAL_FILE))?,
        test: read_dataset(&dir.join(TEST_FILE))?,
    })
}

fn base_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::parse(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => Ok(TrainConfig::default()),
    }
}

fn run_ablate(args: &AblateArgs, exec: Execution) -> Result<Outcome> {
    let c = &args.common;
    let base = base_config(c.config.as_deref())?;
    let mut outputs = Outputs::new(c.overwrite.force);
    outputs.claim_dir(&c.out)?;
    let csv = outputs.claim(&c.out.join("ablation.csv"))?;
    let json = outputs.claim(&c.out.join("ablation.json"))?;
    let splits = read_splits(&c.data)?;
    let report = ablation_suite(&base, &splits.train, &splits.val, &splits.test, &c.seeds, exec, &mut RunCache::new())?;
    write_atomic(&csv, report.to_csv().as_bytes())?;
    write_json(&json, &report)?;
    print!("{}", report.table());
    outputs.finish();
    Ok(Outcome::Passed)
}

fn run_sweep(args: &SweepArgs, exec: Execution) -> Result<Outcome> {
    let c = &args.common;
    let base = base_config(c.config.as_deref())?;
    nested_subsets(args.sizes.iter().copied().max().unwrap_or(0), &args.sizes, 0)?;
    let mut outputs = Outputs::new(c.overwrite.force);
    outputs.claim_dir(&c.out)?;
    let csv = outputs.claim(&c.out.join("sweep.csv"))?;
    let svg = outputs.claim(&c.out.join("sweep.svg"))?;
    let json = outputs.claim(&c.out.join("sweep.json"))?;
    let splits = read_splits(&c.data)?;
    let report = size_sweep(
        &base,
        &splits.train,
        &splits.val,
        &splits.test,
        &args.sizes,
        &c.seeds,
        exec,
        &mut RunCache::new(),
    )?;
    write_atomic(&csv, report.to_csv().as_bytes())?;
    write_atomic(&svg, report.to_svg().as_bytes())?;
    write_json(&json, &report)?;
    for p in &report.points {
        println!("{:>6} {:>7.2}%", p.size, 100.0 * p.median_accuracy);
    }
    outputs.finish();
    Ok(Outcome::Passed)
}

fn source_model(src: &ModelSource, seed: u64) -> Result<TrainedModel> {
    match &src.checkpoint {
        Some(c) => load_model(c, src.model_config.as_deref()),
        None => {
            let (net, params) = Copinet::new(ModelConfig::preset(src.variant).with_seed(seed))?;
            Ok(TrainedModel { net, params })
        }
    }
}

fn run_gradcheck(args: &GradcheckArgs, exec: Execution) -> Result<Outcome> {
    if !(args.eps > 0.0 && args.eps <= 1e-2) {
        return Err(Error::Config(format!("--eps must lie in (0, 1e-2], got {}", args.eps)));
    }
    let mut outputs = Outputs::new(args.overwrite.force);
    claim_optional(&mut outputs, &args.out)?;
    let model = source_model(&args.model, args.seed)?;
    let instances: Vec<ProblemInstance> = (0..args.instances as u64)
        .map(|i| generate_instance(instance_seed(args.seed, i)))
        .collect::<Result<_>>()?;
    let screen = (!args.raw).then_some(args.tolerance);
    let summary = model_gradcheck(&model, &instances, args.per_param, args.eps, screen, args.seed, exec)?;
    let passed = summary.max_rel_error < args.tolerance;
    println!(
        "max relative error {:e} over {} entries on {} instances ({})",
        summary.max_rel_error,
        summary.checked,
        summary.instances,
        if passed { "ok" } else { "FAILED" }
    );
    if !args.raw {
        println!(
            "{} stencils straddled a relu kink; unscreened max relative error {:e}",
            summary.kinks, summary.raw_max_rel_error
        );
    }
    maybe_json(args.out.as_ref(), &summary)?;
    outputs.finish();
    Ok(if passed { Outcome::Passed } else { Outcome::Failed })
}

fn run_audit(args: &AuditArgs, exec: Execution) -> Result<Outcome> {
    let mut outputs = Outputs::new(args.overwrite.force);
    claim_optional(&mut outputs, &args.out)?;
    let model = source_model(&args.model, args.seed)?;
    let mut data = read_dataset(&args.data)?;
    if let Some(n) = args.trials {
        data.truncate(n);
    }
    let report = if args.mutant {
        let tagged = PositionTagged {
            inner: &model,
            strength: 1e-3,
        };
        invariance_audit(&tagged, &data, args.seed, exec)?
    } else {
        invariance_audit(&model, &data, args.seed, exec)?
    };
    print!("{}", report.summary());
    maybe_json(args.out.as_ref(), &report)?;
    outputs.finish();
    Ok(if report.passed() { Outcome::Passed } else { Outcome::Failed })
}

fn run_oracle(args: &OracleArgs, exec: Execution) -> Result<Outcome> {
    let mut outputs = Outputs::new(args.overwrite.force);
    claim_optional(&mut outputs, &args.out)?;
    let data = read_dataset(&args.data)?;
    let summary = oracle_check(&data, exec);
    println!(
        "oracle accuracy {:.2}% ({}/{}), unique answers {}/{}",
        100.0 * summary.accuracy.accuracy,
        summary.accuracy.correct,
        data.len(),
        summary.unique_answers,
        data.len()
    );
    maybe_json(args.out.as_ref(), &summary)?;
    outputs.finish();
    Ok(if summary.passed() { Outcome::Passed } else { Outcome::Failed })
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("COPI_LOG", "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp_secs().try_init();
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging();
    let exec = Execution {
        jobs: cli.jobs as usize,
        deterministic: cli.deterministic,
    };
    let result = match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => run_train(a, exec),
        Command::Eval(a) => run_eval(a, exec),
        Command::Ablate(a) => run_ablate(a, exec),
        Command::Sweep(a) => run_sweep(a, exec),
        Command::Gradcheck(a) => run_gradcheck(a, exec),
        Command::Audit(a) => run_audit(a, exec),
        Command::Oracle(a) => run_oracle(a, exec),
    };
    match result {
        Ok(Outcome::Passed) => 0,
        Ok(Outcome::Failed) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
