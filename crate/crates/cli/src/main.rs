//! `mcqfs`: validate embedding datasets, run few-shot experiments and token
//! ablations, generate synthetic data and export feature matrices.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mcq_fewshot::engine::{run_experiment, slice_ablation, ExperimentConfig, FeatureTable};
use mcq_fewshot::store::{load_dataset, LoadedDataset};
use mcq_fewshot::synthetic::{generate_to_dir, SyntheticConfig};
use mcq_fewshot::{Error, RepresentationSpec};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "mcqfs", version, about = "Few-shot classification over VQA tap activations")]
struct Cli {
    /// Cap on worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dataset manifest and its tap files.
    Validate { manifest: PathBuf },
    /// Run the episodic experiment described by a config file.
    Run {
        config: PathBuf,
        /// Output directory, overriding the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the decoder token index.
    Ablate {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        tokens: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    Synth {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the per-image representation matrix for one spec as CSV.
    Export {
        manifest: PathBuf,
        #[arg(long)]
        spec: RepresentationSpec,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Experiment settings plus where to find the data and put the results.
/// Relative paths resolve against the config file's directory.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfigFile {
    manifest: PathBuf,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default = "defaults::specs")]
    specs: Vec<RepresentationSpec>,
    #[serde(default = "defaults::shots")]
    shots: Vec<usize>,
    #[serde(default = "defaults::trials")]
    trials: usize,
    #[serde(default = "defaults::k_neighbors")]
    k_neighbors: usize,
    #[serde(default = "defaults::prototype_mode")]
    prototype_mode: bool,
    #[serde(default)]
    seed: u64,
    #[serde(default = "defaults::eps")]
    eps: f64,
}

mod defaults {
    use mcq_fewshot::engine::ExperimentConfig;
    use mcq_fewshot::RepresentationSpec;

    pub fn specs() -> Vec<RepresentationSpec> {
        ExperimentConfig::default().specs
    }
    pub fn shots() -> Vec<usize> {
        ExperimentConfig::default().shots
    }
    pub fn trials() -> usize {
        ExperimentConfig::default().trials
    }
    pub fn k_neighbors() -> usize {
        ExperimentConfig::default().k_neighbors
    }
    pub fn prototype_mode() -> bool {
        ExperimentConfig::default().prototype_mode
    }
    pub fn eps() -> f64 {
        ExperimentConfig::default().eps
    }
}

impl RunConfigFile {
    fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            specs: self.specs.clone(),
            shots: self.shots.clone(),
            trials: self.trials,
            k_neighbors: self.k_neighbors,
            prototype_mode: self.prototype_mode,
            seed: self.seed,
            eps: self.eps,
        }
    }
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new(EXIT_IO, format!("{}: {err}", path.display()))
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::Io { .. } => EXIT_IO,
            Error::Config(_)
            | Error::Json(_)
            | Error::TooFewChoices(_)
            | Error::NotEnoughImages { .. }
            | Error::AllIndicesSkipped(_) => EXIT_CONFIG,
            _ => EXIT_VALIDATION,
        };
        Self::new(code, err.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.threads {
        Some(0) => Err(Failure::new(EXIT_CONFIG, "--threads must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(Failure::new(EXIT_CONFIG, e.to_string())),
        },
        None => dispatch(cli.command),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(command: Command) -> CliResult {
    match command {
        Command::Validate { manifest } => cmd_validate(&manifest),
        Command::Run { config, out } => cmd_run(&config, out),
        Command::Ablate {
            config,
            tokens,
            out,
        } => cmd_ablate(&config, &tokens, out),
        Command::Synth { config, out } => cmd_synth(&config, &out),
        Command::Export {
            manifest,
            spec,
            out,
        } => cmd_export(&manifest, &spec, &out),
    }
}

fn cmd_validate(manifest: &Path) -> CliResult {
    let loaded = load_dataset(manifest)?;
    let report = &loaded.report;
    println!("dataset: {}", loaded.manifest.dataset);
    println!("classes: {}", loaded.manifest.class_names.len());
    println!("prompt: ok");
    for (tap, n) in &report.records_per_tap {
        println!("tap {tap}: {n} records");
    }
    println!("complete images: {}", report.complete_images);
    for img in &report.incomplete {
        let missing: Vec<String> = img.missing.iter().map(|t| t.to_string()).collect();
        println!("incomplete: {} (missing {})", img.image_id, missing.join(", "));
    }
    for id in &report.orphan_zero_shot {
        println!("zero-shot text for unknown image: {id}");
    }
    if report.is_consistent() {
        println!("status: consistent");
        Ok(())
    } else {
        Err(Failure::new(EXIT_VALIDATION, "dataset is not fully consistent"))
    }
}

fn read_run_config(path: &Path) -> CliResult<(RunConfigFile, PathBuf)> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let cfg: RunConfigFile = serde_json::from_str(&text)
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
    cfg.experiment().validate()?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((cfg, base))
}

fn load_for(cfg: &RunConfigFile, base: &Path) -> CliResult<LoadedDataset> {
    let loaded = load_dataset(&base.join(&cfg.manifest))?;
    for img in &loaded.report.incomplete {
        eprintln!("warning: skipping incomplete image {}", img.image_id);
    }
    Ok(loaded)
}

fn output_dir(cfg: &RunConfigFile, base: &Path, out: Option<PathBuf>) -> CliResult<PathBuf> {
    let dir = match (out, &cfg.output_dir) {
        (Some(d), _) => d,
        (None, Some(d)) => base.join(d),
        (None, None) => base.to_path_buf(),
    };
    fs::create_dir_all(&dir).map_err(|e| Failure::io(&dir, e))?;
    Ok(dir)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::io(path, e))
}

fn csv_failure(err: csv::Error) -> Failure {
    Failure::new(EXIT_IO, err.to_string())
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

fn cmd_run(config: &Path, out: Option<PathBuf>) -> CliResult {
    let (cfg, base) = read_run_config(config)?;
    let loaded = load_for(&cfg, &base)?;
    let report = run_experiment(&cfg.experiment(), &loaded.dataset)?;
    let dir = output_dir(&cfg, &base, out)?;

    write_text(&dir.join("report.json"), &(report.to_json()? + "\n"))?;
    let csv_path = dir.join("results.csv");
    report.write_csv(create(&csv_path)?)?;
    print!("{}", report.summary_table());
    println!("wrote {} and {}", dir.join("report.json").display(), csv_path.display());
    Ok(())
}

fn cmd_ablate(config: &Path, tokens: &[usize], out: Option<PathBuf>) -> CliResult {
    let (cfg, base) = read_run_config(config)?;
    let loaded = load_for(&cfg, &base)?;
    let report = slice_ablation(&cfg.experiment(), &loaded.dataset, tokens)?;
    for s in &report.skipped {
        eprintln!(
            "warning: token index {} skipped: {} images have too few decoder tokens",
            s.token_index, s.images_lacking
        );
    }
    let dir = output_dir(&cfg, &base, out)?;
    let trials_path = dir.join("ablation.csv");
    let summary_path = dir.join("ablation_summary.csv");
    report.write_csv(create(&trials_path)?)?;
    report.write_summary_csv(create(&summary_path)?)?;
    print!("{}", report.summary_table());
    println!("wrote {} and {}", trials_path.display(), summary_path.display());
    Ok(())
}

fn cmd_synth(config: &Path, out: &Path) -> CliResult {
    let text = fs::read_to_string(config).map_err(|e| Failure::io(config, e))?;
    let cfg: SyntheticConfig = serde_json::from_str(&text)
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", config.display())))?;
    let manifest = generate_to_dir(&cfg, out)?;
    println!(
        "wrote {} images in {} classes to {}",
        cfg.n_classes * cfg.images_per_class,
        cfg.n_classes,
        manifest.display()
    );
    Ok(())
}

fn cmd_export(manifest: &Path, spec: &RepresentationSpec, out: &Path) -> CliResult {
    let loaded = load_dataset(manifest)?;
    let features = FeatureTable::build(&loaded.dataset, spec)?;
    let dim = features
        .dim()
        .ok_or_else(|| Failure::new(EXIT_VALIDATION, "dataset has no complete images"))?;
    let mut w = csv::Writer::from_writer(create(out)?);
    let header = ["image_id".to_owned(), "class_id".to_owned()]
        .into_iter()
        .chain((0..dim).map(|j| format!("f{j}")));
    w.write_record(header).map_err(csv_failure)?;
    for img in &loaded.dataset.images {
        let (class_id, v) = features.get(&img.image_id)?;
        let row = [img.image_id.clone(), class_id.to_string()]
            .into_iter()
            .chain(v.as_slice().iter().map(|x| x.to_string()));
        w.write_record(row).map_err(csv_failure)?;
    }
    w.flush().map_err(|e| Failure::io(out, e))?;
    println!("wrote {} rows x {dim} features to {}", loaded.dataset.len(), out.display());
    Ok(())
}
