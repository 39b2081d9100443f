//! End-to-end commands: simulate, train, evaluate and sweep.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dsp::{AudioClip, Stft};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_methods, extract_feature_sets, saturation_snr, write_summary_csv, Condition, DatasetManifest, EvalReport,
    FeatureExtractor, FeatureSet, TrainingTargets, WindowSource,
};
use crate::localize::fit_location_gps;
use crate::model::TrainedModel;
use crate::nmf::NmfModel;
use crate::seed;
use crate::sim::build_dataset;

const TRAIN_NMF: u64 = 20;
const FEATURES: u64 = 21;

/// Renders the configured scene into `out_dir`.
pub fn simulate(config: &ExperimentConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.scene.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::from(e).in_file(out_dir))?;
    build_dataset(&config.scene)?.write(out_dir)
}

fn check_sources(config: &ExperimentConfig, source: &dyn WindowSource) -> Result<Vec<AudioClip>> {
    let isolated = source.isolated()?;
    if isolated.len() != config.scene.n_sources() {
        return Err(Error::Config(format!(
            "dataset has {} isolated landmark recordings but the config declares {} sources",
            isolated.len(),
            config.scene.n_sources()
        )));
    }
    Ok(isolated)
}

/// Learns landmark dictionaries from the dataset's isolated recordings.
pub fn train_nmf(config: &ExperimentConfig, source: &dyn WindowSource) -> Result<NmfModel> {
    let isolated = check_sources(config, source)?;
    let stft = Stft::new(config.stft)?;
    let specs = isolated.iter().map(|c| stft.process(c)).collect::<Result<Vec<_>>>()?;
    NmfModel::train(&specs, config.nmf, seed::derive(config.seed, &[TRAIN_NMF]))
}

pub fn feature_extractor(config: &ExperimentConfig, nmf: NmfModel) -> Result<FeatureExtractor> {
    FeatureExtractor::new(config.stft, Some(nmf), config.mfcc, seed::derive(config.seed, &[FEATURES]))
}

fn training_pairs(set: &FeatureSet, targets: TrainingTargets) -> (Vec<crate::localize::Point>, Vec<Vec<f64>>) {
    match targets {
        TrainingTargets::LocationMean => (set.locations.clone(), set.location_means()),
        TrainingTargets::Windows => set
            .locations
            .iter()
            .zip(&set.windows)
            .flat_map(|(p, ws)| ws.iter().map(move |w| (*p, w.clone())))
            .unzip(),
    }
}

/// Trains the NMF dictionaries and one location GP per feature dimension on
/// every location of the dataset.
pub fn train(config: &ExperimentConfig, source: &dyn WindowSource) -> Result<TrainedModel> {
    let nmf = train_nmf(config, source)?;
    let extractor = feature_extractor(config, nmf.clone())?;
    let sets = extract_feature_sets(
        source,
        &extractor,
        &[config.feature],
        &[Condition::Clean],
        None,
        config.evaluation.max_windows,
    )?;
    let (locations, features) = training_pairs(&sets[0][0], config.evaluation.training_targets);
    let gps = fit_location_gps(&locations, &features, &config.gp)?;
    Ok(TrainedModel {
        sample_rate: source.sample_rate(),
        stft: config.stft,
        feature: config.feature,
        nmf,
        mfcc: config.mfcc,
        gps,
        grid: config.search_grid()?,
        seed: extractor_seed(config),
    })
}

fn extractor_seed(config: &ExperimentConfig) -> u64 {
    seed::derive(config.seed, &[FEATURES])
}

fn echo(config: &ExperimentConfig) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(config)?)
}

/// Noise-free leave-one-location-out evaluation of every configured method.
pub fn evaluate(config: &ExperimentConfig, source: &dyn WindowSource) -> Result<Vec<EvalReport>> {
    let nmf = train_nmf(config, source)?;
    let extractor = feature_extractor(config, nmf)?;
    let kinds = config.method_kinds();
    let mut sets = extract_feature_sets(
        source,
        &extractor,
        &kinds,
        &[Condition::Clean],
        None,
        config.evaluation.max_windows,
    )?;
    let train = sets.remove(0);
    let tests = vec![(Condition::Clean, train.clone())];
    evaluate_methods(&train, &tests, &config.evaluation.methods, &config.loocv()?, &echo(config)?)
}

/// CEP per method and SNR, plus each method's saturation SNR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub reports: Vec<EvalReport>,
    pub saturation_snr_db: BTreeMap<String, Option<f64>>,
}

impl SweepResult {
    /// `(snr, cep)` points of one method, highest SNR first.
    pub fn curve(&self, method: &str) -> Vec<(f64, f64)> {
        self.reports
            .iter()
            .filter(|r| r.method == method)
            .filter_map(|r| r.condition.snr_db().map(|s| (s, r.summary.cep)))
            .collect()
    }
}

/// Models trained on clean windows, tested on the same windows mixed with
/// `noise` at every configured SNR.
pub fn sweep(config: &ExperimentConfig, source: &dyn WindowSource, noise: &AudioClip) -> Result<SweepResult> {
    let nmf = train_nmf(config, source)?;
    let extractor = feature_extractor(config, nmf)?;
    let kinds = config.method_kinds();
    let mut conditions = vec![Condition::Clean];
    conditions.extend(config.snrs()?.into_iter().map(Condition::Snr));
    let mut sets = extract_feature_sets(
        source,
        &extractor,
        &kinds,
        &conditions,
        Some(noise),
        config.evaluation.max_windows,
    )?;
    let train = sets.remove(0);
    let tests: Vec<(Condition, Vec<FeatureSet>)> = conditions[1..].iter().copied().zip(sets).collect();
    sweep_from_features(config, &train, &tests)
}

/// Sweep over precomputed features.
pub fn sweep_from_features(
    config: &ExperimentConfig,
    train: &[FeatureSet],
    tests: &[(Condition, Vec<FeatureSet>)],
) -> Result<SweepResult> {
    let reports = evaluate_methods(train, tests, &config.evaluation.methods, &config.loocv()?, &echo(config)?)?;
    let mut result = SweepResult {
        reports,
        saturation_snr_db: BTreeMap::new(),
    };
    for m in &config.evaluation.methods {
        let name = m.name();
        let sat = saturation_snr(&result.curve(&name));
        result.saturation_snr_db.insert(name, sat);
    }
    Ok(result)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::from(e).in_file(path))?;
    Ok(std::io::BufWriter::new(f))
}

fn condition_tag(c: Condition) -> String {
    match c.snr_db() {
        None => "clean".to_string(),
        Some(s) => format!("snr{s}"),
    }
}

/// Writes `reports.json`, `summary.csv` and one `ecdf_<method>_<condition>.csv`
/// per report.
pub fn write_reports(dir: &Path, reports: &[EvalReport]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))?;
    crate::io::write_json(&dir.join("reports.json"), &reports)?;
    write_summary_csv(reports, create(&dir.join("summary.csv"))?)?;
    for r in reports {
        let name = format!("ecdf_{}_{}.csv", r.method.replace('+', "_"), condition_tag(r.condition));
        r.write_ecdf_csv(create(&dir.join(name))?)?;
    }
    Ok(())
}

/// Writes the reports plus `saturation.json` and `cep_vs_snr.csv`
/// (`method,snr_db,cep`).
pub fn write_sweep(dir: &Path, result: &SweepResult) -> Result<()> {
    use std::io::Write;
    write_reports(dir, &result.reports)?;
    crate::io::write_json(&dir.join("saturation.json"), &result.saturation_snr_db)?;
    let mut out = create(&dir.join("cep_vs_snr.csv"))?;
    writeln!(out, "method,snr_db,cep")?;
    for r in &result.reports {
        if let Some(s) = r.condition.snr_db() {
            writeln!(out, "{},{},{}", r.method, s, r.summary.cep)?;
        }
    }
    out.flush()?;
    Ok(())
}
