use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use soundloc::config::ExperimentConfig;
use soundloc::dsp::wav;
use soundloc::eval::{ManifestDataset, Method};
use soundloc::localize::{GaussianPrior, Point};
use soundloc::model::TrainedModel;
use soundloc::{pipeline, Result};

/// Locate a microphone indoors from the environmental sound it records.
#[derive(Parser, Debug)]
#[command(name = "soundloc", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// Experiment config (JSON). Omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(path) => ExperimentConfig::load(path),
            None => Ok(ExperimentConfig::default()),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the configured synthetic scene to WAV files plus manifest.json.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn landmark dictionaries and location GPs from a dataset.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Dataset directory containing manifest.json.
        #[arg(long)]
        data: PathBuf,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Localize one recording with a trained model.
    Localize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        /// Prior mean as `x,y` in metres.
        #[arg(long, value_parser = parse_point, requires = "prior_std")]
        prior_mean: Option<Point>,
        /// Isotropic prior standard deviation in metres.
        #[arg(long, requires = "prior_mean")]
        prior_std: Option<f64>,
        /// Write the log-likelihood map as CSV (plus a JSON sidecar).
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Leave-one-location-out evaluation on clean windows.
    Evaluate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
        /// `all` or a comma-separated list such as `snmf_wf+likelihood,mfcc+regression`.
        #[arg(long)]
        methods: Option<String>,
    },
    /// Evaluation with background noise mixed in at every configured SNR.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        /// Background noise recording.
        #[arg(long)]
        noise: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        methods: Option<String>,
    },
}

fn parse_point(s: &str) -> std::result::Result<Point, String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let x: f64 = x.trim().parse().map_err(|e| format!("{e}"))?;
    let y: f64 = y.trim().parse().map_err(|e| format!("{e}"))?;
    Ok(Point::new(x, y))
}

fn parse_methods(spec: &str) -> Result<Vec<Method>> {
    if spec == "all" {
        return Ok(Method::all());
    }
    spec.split(',').map(|m| m.trim().parse()).collect()
}

fn with_methods(mut config: ExperimentConfig, methods: &Option<String>) -> Result<ExperimentConfig> {
    if let Some(spec) = methods {
        config.evaluation.methods = parse_methods(spec)?;
        config.validate()?;
    }
    Ok(config)
}

fn open_dataset(dir: &Path) -> Result<ManifestDataset> {
    ManifestDataset::open(dir)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => {
            let config = config.load()?;
            let manifest = pipeline::simulate(&config, &out)?;
            println!(
                "wrote {} locations and {} isolated recordings to {}",
                manifest.locations().len(),
                manifest.isolated()?.len(),
                out.display()
            );
        }
        Command::Train { config, data, out } => {
            let config = config.load()?;
            let model = pipeline::train(&config, &open_dataset(&data)?)?;
            model.save(&out)?;
            println!("wrote {} ({} sources)", out.display(), model.nmf.n_sources());
        }
        Command::Localize {
            model,
            wav: wav_path,
            prior_mean,
            prior_std,
            map,
        } => {
            let model = TrainedModel::load(&model)?;
            let clip = wav::read_wav(&wav_path).map_err(|e| e.in_file(&wav_path))?;
            let prior = match (prior_mean, prior_std) {
                (Some(m), Some(s)) => Some(GaussianPrior::isotropic(m, s)?),
                _ => None,
            };
            let (estimate, lmap) = model.localize(&clip, prior.as_ref())?;
            if let Some(path) = map {
                lmap.save(&path)?;
            }
            let out = serde_json::json!({
                "x": estimate.x,
                "y": estimate.y,
                "log_value": lmap.max_value(),
                "kind": lmap.kind(),
            });
            print!("{}", soundloc::io::to_sorted_json(&out)?);
        }
        Command::Evaluate {
            config,
            data,
            out,
            methods,
        } => {
            let config = with_methods(config.load()?, &methods)?;
            let reports = pipeline::evaluate(&config, &open_dataset(&data)?)?;
            pipeline::write_reports(&out, &reports)?;
            soundloc::eval::write_summary_csv(&reports, std::io::stdout().lock())?;
        }
        Command::Sweep {
            config,
            data,
            noise,
            out,
            methods,
        } => {
            let config = with_methods(config.load()?, &methods)?;
            let dataset = open_dataset(&data)?;
            let noise_clip = wav::read_wav_at_rate(&noise, dataset.manifest.sample_rate).map_err(|e| e.in_file(&noise))?;
            let result = pipeline::sweep(&config, &dataset, &noise_clip)?;
            pipeline::write_sweep(&out, &result)?;
            for (method, snr) in &result.saturation_snr_db {
                match snr {
                    Some(s) => println!("{method}: saturation at {s} dB"),
                    None => println!("{method}: no saturation point"),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
