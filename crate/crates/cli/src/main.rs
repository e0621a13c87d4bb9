use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use shortcut_lab::data::{load_manifest, write_manifest, BitDepth, CorrelationSpec, Manifest};
use shortcut_lab::eval::shortcut_report;
use shortcut_lab::experiment::{self, ErrorRecord, ExperimentConfig, ERROR_FILE};
use shortcut_lab::model::{gradcam, load_checkpoint};
use shortcut_lab::skew::{resample, DEFAULT_PREVALENCE_WINDOW};
use shortcut_lab::synthgen::{
    generate, inject_filter_bias, FilterBiasSpec, FilterPreset, GeneratorConfig, GroundTruth,
};
use shortcut_lab::train::SchemeName;
use shortcut_lab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "shortcut-lab",
    version,
    about = "Shortcut-learning experiments on synthetic radiographs"
)]
struct Cli {
    /// Only log warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Difficult,
    Moderate,
    Easy,
}

impl From<Preset> for FilterPreset {
    fn from(p: Preset) -> Self {
        match p {
            Preset::Difficult => FilterPreset::Difficult,
            Preset::Moderate => FilterPreset::Moderate,
            Preset::Easy => FilterPreset::Easy,
        }
    }
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Gaussian-filter preset that becomes the attribute.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

#[derive(Args)]
struct ManifestArgs {
    /// Manifest CSV.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory the manifest's image paths are relative to (default: its directory).
    #[arg(long)]
    image_root: Option<PathBuf>,
}

impl ManifestArgs {
    fn load(&self) -> Result<Manifest> {
        let root = match &self.image_root {
            Some(r) => r.clone(),
            None => self
                .manifest
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_default(),
        };
        load_manifest(&self.manifest, &root)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic manifest with images and ground truth.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        patients: Option<usize>,
        /// Share of patients given the positive filter when --preset is set.
        #[arg(long, default_value_t = FilterBiasSpec::DEFAULT_POSITIVE_RATE)]
        filter_rate: f64,
        /// Write 16-bit PNGs instead of 8-bit.
        #[arg(long)]
        sixteen_bit: bool,
    },
    /// Resample a manifest to a task-attribute correlation, or assign a
    /// filter with that correlation when --preset is given.
    Resample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: ManifestArgs,
        #[arg(long, default_value = "chf")]
        task: String,
        #[arg(long)]
        attribute: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        phi: Option<f64>,
        /// Size budget in images (default: every eligible record).
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        prevalence: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_PREVALENCE_WINDOW)]
        window: f64,
    },
    /// Train one scheme of an experiment config for a single seed.
    Train {
        #[command(flatten)]
        common: Common,
        /// Scheme to train (default: the config's first scheme).
        #[arg(long)]
        scheme: Option<SchemeName>,
    },
    /// Score a checkpoint on a manifest: target and attribute AUROCs.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        input: ManifestArgs,
        #[arg(long, default_value = "chf")]
        task: String,
        #[arg(long)]
        attribute: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = shortcut_lab::eval::DEFAULT_BOOTSTRAP)]
        bootstrap: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full experiment.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Merge results directories into comparison tables and figures.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write GradCAM overlays for the images of a manifest.
    Gradcam {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        input: ManifestArgs,
        #[arg(long, default_value = "chf")]
        task: String,
        /// Ground-truth JSON written by `generate`, to outline marker boxes.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        limit: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn out(&self) -> &Path {
        match self {
            Command::Generate { common, .. }
            | Command::Resample { common, .. }
            | Command::Train { common, .. }
            | Command::Run { common } => &common.out,
            Command::Evaluate { out, .. }
            | Command::Report { out, .. }
            | Command::Gradcam { out, .. } => out,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn read_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => toml::from_str(&fs::read_to_string(p)?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
        None => Ok(T::default()),
    }
}

fn experiment_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
    if let Some(p) = common.preset {
        config.preset = Some(p.into());
        config.presets = vec![p.into()];
    }
    config.validate()?;
    Ok(config)
}

fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Generate {
            common,
            patients,
            filter_rate,
            sixteen_bit,
        } => {
            let mut config: GeneratorConfig = read_toml(common.config.as_deref())?;
            if let Some(seed) = common.seed {
                config.seed = seed;
            }
            if let Some(n) = patients {
                config.n_patients = *n;
            }
            let (mut manifest, truth) = generate(&config)?;
            if let Some(p) = common.preset {
                let spec = FilterBiasSpec::preset(p.into()).with_positive_rate(*filter_rate);
                manifest = inject_filter_bias(&manifest, &spec, None, config.seed)?;
            }
            let depth = if *sixteen_bit {
                BitDepth::Sixteen
            } else {
                BitDepth::Eight
            };
            fs::create_dir_all(&common.out)?;
            write_manifest(
                &manifest,
                &common.out.join("manifest.csv"),
                &common.out.join("images"),
                depth,
            )?;
            write_json(&common.out.join("ground_truth.json"), &truth)?;
            log::info!(
                "wrote {} images to {}",
                manifest.len(),
                common.out.display()
            );
        }
        Command::Resample {
            common,
            input,
            task,
            attribute,
            phi,
            budget,
            prevalence,
            window,
        } => {
            let manifest = input.load()?;
            let mut spec: CorrelationSpec = match &common.config {
                Some(p) => toml::from_str(&fs::read_to_string(p)?)
                    .map_err(|e| Error::Config(e.to_string()))?,
                None => CorrelationSpec::new(
                    task,
                    attribute.as_deref().unwrap_or("filter"),
                    0.0,
                    manifest.len(),
                    0.3,
                ),
            };
            if let Some(a) = attribute {
                spec.attribute = a.clone();
            }
            if let Some(phi) = phi {
                spec.target_phi = *phi;
            }
            if let Some(b) = budget {
                spec.size_budget = *b;
            }
            if let Some(p) = prevalence {
                spec.prevalence_target = *p;
            }
            let seed = common.seed.unwrap_or(0);
            fs::create_dir_all(&common.out)?;
            let out = match common.preset {
                Some(p) => {
                    let rate = if spec.target_phi < 0.0 {
                        1.0 - spec.prevalence_target
                    } else {
                        spec.prevalence_target
                    };
                    let filter = FilterBiasSpec::preset(p.into()).with_positive_rate(rate);
                    spec.attribute = filter.attribute.clone();
                    let m = inject_filter_bias(&manifest, &filter, Some(&spec), seed)?;
                    write_json(
                        &common.out.join("outcome.json"),
                        &shortcut_lab::data::SplitStats::compute(&m),
                    )?;
                    m
                }
                None => {
                    let (m, outcome) = resample(&manifest, &spec, *window, seed)?;
                    write_json(&common.out.join("outcome.json"), &outcome)?;
                    m
                }
            };
            write_manifest(
                &out,
                &common.out.join("manifest.csv"),
                &common.out.join("images"),
                BitDepth::Sixteen,
            )?;
            log::info!("kept {} of {} images", out.len(), manifest.len());
        }
        Command::Train { common, scheme } => {
            let mut config = experiment_config(common)?;
            config.seeds.truncate(1);
            let scheme = scheme.unwrap_or(config.schemes()[0]);
            config.schemes = vec![scheme];
            let results = experiment::run(&config, &common.out)?;
            for r in &results.runs {
                println!(
                    "{}\t{}\t{}\tAUROC target {:.4}",
                    r.condition, r.scheme, r.checkpoint_path, r.auroc_target
                );
            }
        }
        Command::Evaluate {
            checkpoint,
            input,
            task,
            attribute,
            seed,
            bootstrap,
            out,
        } => {
            let state = load_checkpoint(checkpoint)?;
            let manifest = input.load()?;
            let (report, predictions) =
                shortcut_report(&state, &manifest, task, attribute, *bootstrap, *seed)?;
            fs::create_dir_all(out)?;
            write_json(&out.join("report.json"), &report)?;
            experiment::write_rows(&out.join("predictions.csv"), &predictions.patients)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Run { common } => {
            let config = experiment_config(common)?;
            let results = experiment::run(&config, &common.out)?;
            for row in experiment::summarize(&results, config.kind.name()) {
                println!(
                    "{}\t{}\ttarget {:.4} [{:.4}, {:.4}]\tattribute {}{}",
                    row.condition,
                    row.scheme,
                    row.auroc_target,
                    row.target_lower,
                    row.target_upper,
                    row.auroc_attribute
                        .map_or("-".into(), |v| format!("{v:.4}")),
                    row.p_value.map_or(String::new(), |p| format!("\tp {p:.3}")),
                );
            }
        }
        Command::Report { dirs, out } => {
            let rows = experiment::report(dirs, out)?;
            println!(
                "{} rows written to {}",
                rows.len(),
                out.join("report.csv").display()
            );
        }
        Command::Gradcam {
            checkpoint,
            input,
            task,
            ground_truth,
            limit,
            out,
        } => {
            let state = load_checkpoint(checkpoint)?;
            let manifest = input.load()?;
            let truth: Option<GroundTruth> = match ground_truth {
                Some(p) => Some(serde_json::from_slice(&fs::read(p)?)?),
                None => None,
            };
            fs::create_dir_all(out)?;
            for record in manifest.records.iter().take(*limit) {
                let cam = gradcam(&state, &record.pixels, task)?;
                let outline = truth.as_ref().and_then(|t| t.marker_box(&record.image_id));
                let path = out.join(format!("{}.png", record.image_id));
                experiment::write_overlay(&path, &record.pixels, &cam, outline, 0.45)?;
            }
            log::info!("wrote {} overlays", manifest.len().min(*limit));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let out = cli.command.out();
            if fs::create_dir_all(out).is_ok() {
                let _ = write_json(&out.join(ERROR_FILE), &ErrorRecord::from_error(&e));
            }
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
