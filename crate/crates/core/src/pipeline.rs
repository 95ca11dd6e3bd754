//! End-to-end orchestration: prepare → select → fit → calibrate → rate →
//! validate → explain, driven by one TOML file.
//!
//! Row roles: rows before `split.oot_year` form the development sample,
//! which is split per class into the boosting part and the calibration part
//! (`split.test_fraction`); rows of `oot_year` are only scored and reported.
//! Every artifact carries the hash of the configuration and the seeds used.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::{info, warn};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoenc::{embedding_matrix, encode_labels, AutoencoderParams, TrainConfig};
use crate::calib::{fit_calibrator, reliability_curve, Calibrator, DEFAULT_C_GRID};
use crate::data::{read_csv, write_csv, ColumnKind, ColumnSpec, Schema};
use crate::data::{split_out_of_time, stratified_split};
use crate::data::{Column, Dataset, FeatureKind};
use crate::encode::{column_labels, load_embeddings, JamesSteinEncoder};
use crate::error::{Error, Result};
use crate::explain::{lime_explain, summary_stats, tree_shapley_batch, LimeConfig, LimeExplanation, ShapExplanation, DEFAULT_MAX_FEATURES};
use crate::gbdt::{self, oot_cv_tune, CvOutcome, GbdtConfig, GbdtModel};
use crate::metrics::{brier, log_loss, roc_auc};
use crate::rating::{de_optimize, DeConfig, RatingScale};
use crate::scalar::sigmoid;
use crate::select::{select_features, SelectConfig, SelectionReport};
use crate::synth::{bayes_metrics, generate, BayesMetrics, GeneratorSpec};
use crate::validate::{validate_scale, TrafficLightParams, ValidationReport, DEFAULT_ALPHA};

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// input CSV with `year` and `target` columns; other columns are numeric
    /// unless listed below
    pub csv: Option<PathBuf>,
    pub categorical: Vec<String>,
    pub embedding: Vec<String>,
    pub dates: Vec<String>,
    /// generate the data instead of reading a CSV
    pub synth: Option<GeneratorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub oot_year: Option<i32>,
    /// share of each development class given to the calibrator
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            oot_year: None,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// precomputed label embeddings (`key v_1 … v_d` per line)
    pub embeddings: Option<PathBuf>,
    /// categorical column whose labels index the embeddings
    pub embedding_column: Option<String>,
    /// autoencoder widths; empty derives `d → 5` from the table
    pub autoencoder_dims: Vec<usize>,
    pub autoencoder: Option<TrainConfig<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtStageConfig {
    pub grid: Vec<GbdtConfig>,
    pub beta: f64,
}

pub fn default_gbdt_grid() -> Vec<GbdtConfig> {
    [(150, 7), (300, 7), (200, 15)]
        .into_iter()
        .map(|(n_trees, max_leaves)| GbdtConfig {
            n_trees,
            max_leaves,
            learning_rate: 0.05,
            min_samples_leaf: 20,
            subsample_fraction: 0.8,
            ..Default::default()
        })
        .collect()
}

impl Default for GbdtStageConfig {
    fn default() -> Self {
        Self {
            grid: default_gbdt_grid(),
            beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub c_grid: Vec<f64>,
    pub reliability_bins: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            c_grid: DEFAULT_C_GRID.to_vec(),
            reliability_bins: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub alpha: f64,
    pub k_yellow: f64,
    pub k_orange: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        let t = TrafficLightParams::<f64>::default();
        Self {
            alpha: DEFAULT_ALPHA,
            k_yellow: t.k_yellow,
            k_orange: t.k_orange,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub enabled: bool,
    /// out-of-time rows explained
    pub n_instances: usize,
    /// development rows forming the Shapley background
    pub background: usize,
    pub max_features: usize,
    pub seed: u64,
    /// rows, among the explained ones, that also get a LIME surrogate
    pub lime_instances: usize,
    pub lime: LimeConfig,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            n_instances: 200,
            background: 100,
            max_features: DEFAULT_MAX_FEATURES,
            seed: 0,
            lime_instances: 5,
            lime: LimeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub split: SplitConfig,
    pub encoder: EncoderConfig,
    pub selection: SelectConfig,
    pub gbdt: GbdtStageConfig,
    pub calibration: CalibrationConfig,
    pub rating: DeConfig,
    pub validation: ValidationConfig,
    pub explain: ExplainConfig,
    pub output: OutputConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse a file; relative paths inside it are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.data.csv.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.encoder.embeddings.as_mut() {
            rebase(p);
        }
        rebase(&mut cfg.output.dir);
        Ok(cfg)
    }

    pub fn oot_year(&self) -> Result<i32> {
        self.split
            .oot_year
            .ok_or_else(|| Error::Config("split.oot_year is required".into()))
    }

    /// Checks everything that can be checked before touching data.
    pub fn validate(&self) -> Result<()> {
        self.oot_year()?;
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(Error::Config("split.test_fraction must lie in (0, 1)".into()));
        }
        match (&self.data.csv, &self.data.synth) {
            (Some(_), Some(_)) => return Err(Error::Config("data: give either csv or synth, not both".into())),
            (None, None) => return Err(Error::Config("data: one of csv or synth is required".into())),
            (Some(p), None) if !p.is_file() => {
                return Err(Error::Config(format!("data.csv {} does not exist", p.display())));
            }
            (None, Some(s)) => s.validate()?,
            _ => {}
        }
        match (&self.encoder.embeddings, &self.encoder.embedding_column) {
            (Some(p), Some(_)) if !p.is_file() => {
                return Err(Error::Config(format!("encoder.embeddings {} does not exist", p.display())));
            }
            (Some(_), None) | (None, Some(_)) => {
                return Err(Error::Config("encoder.embeddings and encoder.embedding_column go together".into()));
            }
            _ => {}
        }
        if self.gbdt.grid.is_empty() {
            return Err(Error::Config("gbdt.grid is empty".into()));
        }
        for g in &self.gbdt.grid {
            g.validate()?;
        }
        if !(self.gbdt.beta > 0.0) {
            return Err(Error::Config("gbdt.beta must be positive".into()));
        }
        if self.calibration.c_grid.is_empty() || self.calibration.c_grid.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::Config("calibration.c_grid needs positive values".into()));
        }
        if self.calibration.reliability_bins == 0 {
            return Err(Error::Config("calibration.reliability_bins must be positive".into()));
        }
        self.rating.validate()?;
        if !(self.validation.alpha > 0.0 && self.validation.alpha < 1.0) {
            return Err(Error::Config("validation.alpha must lie in (0, 1)".into()));
        }
        self.traffic_light()?;
        if self.explain.enabled && self.explain.background == 0 {
            return Err(Error::Config("explain.background must be positive".into()));
        }
        Ok(())
    }

    pub fn traffic_light(&self) -> Result<TrafficLightParams<f64>> {
        TrafficLightParams::new(self.validation.k_yellow, self.validation.k_orange)
    }

    /// SHA-256 of the configuration with the output directory left out, so
    /// runs into different directories share a hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        let text = serde_json::to_string(&c).expect("config serialises");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            split: self.split.seed,
            synth: self.data.synth.as_ref().map(|s| s.seed),
            autoencoder: self.encoder.autoencoder.as_ref().map(|a| a.seed),
            selection_forest: self.selection.forest.seed,
            selection_gbdt: self.selection.gbdt.seed,
            gbdt: self.gbdt.grid.iter().map(|g| g.seed).collect(),
            rating: self.rating.seed,
            explain: self.explain.seed,
            lime: self.explain.lime.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub split: u64,
    pub synth: Option<u64>,
    pub autoencoder: Option<u64>,
    pub selection_forest: u64,
    pub selection_gbdt: u64,
    /// one per grid candidate
    pub gbdt: Vec<u64>,
    pub rating: u64,
    pub explain: u64,
    pub lime: u64,
}

// ---------------------------------------------------------------------------
// Artifacts

pub mod names {
    pub const MANIFEST: &str = "manifest.json";
    pub const DATA_SUMMARY: &str = "data_summary.json";
    pub const TRAIN_CSV: &str = "prepared_train.csv";
    pub const CALIB_CSV: &str = "prepared_calib.csv";
    pub const OOT_CSV: &str = "prepared_oot.csv";
    pub const ENCODERS: &str = "encoders.json";
    pub const SELECTION: &str = "selection_report.json";
    pub const CV_FOLDS: &str = "cv_folds.csv";
    pub const CV_SUMMARY: &str = "cv_summary.json";
    pub const MODEL: &str = "gbdt_model.json";
    pub const CALIBRATOR: &str = "calibrator.json";
    pub const CALIBRATION_CHECK: &str = "calibration_check.json";
    pub const RELIABILITY: &str = "reliability.csv";
    pub const SCALE_CSV: &str = "rating_scale.csv";
    pub const SCALE_JSON: &str = "rating_scale.json";
    pub const VALIDATION_CSV: &str = "validation_report.csv";
    pub const VALIDATION_JSON: &str = "validation_report.json";
    pub const ROC: &str = "roc.csv";
    pub const METRICS: &str = "metrics.json";
    pub const SHAP_VALUES: &str = "shap_values.csv";
    pub const SHAP_RANKING: &str = "shap_ranking.csv";
    pub const SHAP_WATERFALL: &str = "shap_waterfall.csv";
    pub const EXPLANATIONS: &str = "explanations.json";
    pub const LIME: &str = "lime.json";
}

/// JSON artifact layout: provenance next to the payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub config_hash: String,
    pub seeds: Seeds,
    pub payload: T,
}

/// Writes artifacts into one directory and remembers what it wrote.
#[derive(Debug)]
pub struct ArtifactDir {
    pub dir: PathBuf,
    pub config_hash: String,
    pub seeds: Seeds,
    pub written: Vec<String>,
}

impl ArtifactDir {
    pub fn create(cfg: &PipelineConfig, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config_hash: cfg.hash(),
            seeds: cfg.seeds(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record(&mut self, name: &str) {
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
    }

    pub fn json<T: Serialize>(&mut self, name: &str, payload: &T) -> Result<()> {
        let env = Envelope {
            config_hash: self.config_hash.clone(),
            seeds: self.seeds.clone(),
            payload,
        };
        fs::write(self.path(name), serde_json::to_string_pretty(&env)? + "\n")?;
        self.record(name);
        Ok(())
    }

    fn preamble(&self) -> Vec<String> {
        vec![
            format!("config_hash: {}", self.config_hash),
            format!("seeds: {}", serde_json::to_string(&self.seeds).expect("seeds serialise")),
        ]
    }

    /// CSV with `#` comment lines carrying the provenance.
    pub fn csv(&mut self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        for line in self.preamble() {
            buf.extend_from_slice(format!("# {line}\n").as_bytes());
        }
        body(&mut buf)?;
        fs::write(self.path(name), buf)?;
        self.record(name);
        Ok(())
    }

    pub fn dataset(&mut self, name: &str, ds: &Dataset) -> Result<()> {
        write_csv(ds, self.path(name), &self.preamble())?;
        self.record(name);
        Ok(())
    }
}

/// Payload of a JSON artifact written by [`ArtifactDir::json`].
pub fn load_artifact<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    let env: Envelope<T> = serde_json::from_str(&fs::read_to_string(path)?)?;
    Ok(env.payload)
}

/// Read a prepared dataset: `row_id`, `year`, `target`, then numeric
/// columns (`emb_*` columns are embeddings).
pub fn load_prepared(path: &Path) -> Result<Dataset> {
    if !path.is_file() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    let text = fs::read_to_string(path)?;
    let header = text
        .lines()
        .find(|l| !l.starts_with('#'))
        .ok_or_else(|| Error::Schema(format!("{} has no header", path.display())))?;
    let columns = header
        .split(',')
        .map(|name| {
            let kind = match name {
                "row_id" => ColumnKind::Id,
                "year" => ColumnKind::Year,
                "target" => ColumnKind::Target,
                n if n.starts_with("emb_") => ColumnKind::Embedding,
                _ => ColumnKind::Numeric,
            };
            ColumnSpec::new(name, kind)
        })
        .collect();
    read_csv(text.as_bytes(), &Schema::new(columns))
}

/// True PDs by row id when the input is synthetic; the generator is
/// deterministic, so single-stage commands can rebuild them.
pub fn synthetic_truth(cfg: &PipelineConfig) -> Result<Option<Vec<f64>>> {
    cfg.data.synth.as_ref().map(|s| generate(s).map(|g| g.true_pd)).transpose()
}

fn load_input(cfg: &PipelineConfig) -> Result<(Dataset, Option<Vec<f64>>)> {
    if let Some(spec) = &cfg.data.synth {
        let s = generate(spec)?;
        return Ok((s.dataset, Some(s.true_pd)));
    }
    let path = cfg.data.csv.as_ref().expect("validated");
    let file = fs::read_to_string(path)?;
    let header = file
        .lines()
        .find(|l| !l.starts_with('#'))
        .ok_or_else(|| Error::Schema(format!("{} has no header", path.display())))?;
    let kind_of = |name: &str| {
        if name == "year" {
            ColumnKind::Year
        } else if name == "target" {
            ColumnKind::Target
        } else if name == "row_id" {
            ColumnKind::Id
        } else if cfg.data.categorical.iter().any(|c| c == name) {
            ColumnKind::Categorical
        } else if cfg.data.embedding.iter().any(|c| c == name) {
            ColumnKind::Embedding
        } else if cfg.data.dates.iter().any(|c| c == name) {
            ColumnKind::Date
        } else {
            ColumnKind::Numeric
        }
    };
    let schema = Schema::new(header.split(',').map(|n| ColumnSpec::new(n.trim(), kind_of(n.trim()))).collect());
    Ok((read_csv(file.as_bytes(), &schema)?, None))
}

// ---------------------------------------------------------------------------
// Stages

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: name,
            source: Box::new(e),
        },
    })
}

/// Fails unless the two samples share no row.
pub fn assert_disjoint(fit_rows: &[u64], other: &Dataset, what: &str) -> Result<()> {
    let fit: BTreeSet<u64> = fit_rows.iter().copied().collect();
    let shared = other.row_ids().iter().filter(|r| fit.contains(r)).count();
    if shared > 0 {
        return Err(Error::Fit(format!("{shared} {what} rows were also used to fit the boosted model")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub n_input: usize,
    pub oot_year: i32,
    pub parts: BTreeMap<String, PartSummary>,
    pub features: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartSummary {
    pub rows: usize,
    pub defaults: usize,
    pub years: Vec<i32>,
}

fn part_summary(ds: &Dataset) -> PartSummary {
    let years: BTreeSet<i32> = ds.year().iter().copied().collect();
    PartSummary {
        rows: ds.n_rows(),
        defaults: ds.positives(),
        years: years.into_iter().collect(),
    }
}

/// Encoders fitted on the boosting rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoders {
    pub james_stein: BTreeMap<String, JamesSteinEncoder>,
    pub autoencoder: Option<AutoencoderParams<f64>>,
    pub autoencoder_mse: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub calib: Dataset,
    pub oot: Dataset,
    /// true PD per input row, when the data is synthetic
    pub true_pd: Option<Vec<f64>>,
    pub encoders: Encoders,
    pub selection: SelectionReport,
    pub summary: DataSummary,
}

fn encode_parts(cfg: &PipelineConfig, parts: &mut [&mut Dataset; 3]) -> Result<Encoders> {
    let mut enc = Encoders {
        james_stein: BTreeMap::new(),
        autoencoder: None,
        autoencoder_mse: None,
    };
    if let (Some(path), Some(col)) = (&cfg.encoder.embeddings, &cfg.encoder.embedding_column) {
        let table = load_embeddings(path)?;
        let d = table.dim;
        let dims = if cfg.encoder.autoencoder_dims.is_empty() {
            let code = 5.min(d.saturating_sub(1)).max(1);
            let h1 = (2 * d + code) / 3;
            let h2 = (d + 2 * code) / 3;
            vec![d, h1, h2, code, h2, h1, d]
        } else {
            cfg.encoder.autoencoder_dims.clone()
        };
        let tc = cfg.encoder.autoencoder.clone().unwrap_or_default();
        let ae = AutoencoderParams::init(&dims, tc.seed)?;
        let (ae, log) = ae.train(&embedding_matrix(&table), &tc)?;
        for ds in parts.iter_mut() {
            let j = ds
                .column_index(col)
                .ok_or_else(|| Error::Schema(format!("embedding column {col} not found")))?;
            let labels: Vec<Option<String>> = column_labels(ds, j)?.into_iter().map(|l| l.map(str::to_string)).collect();
            for c in encode_labels(&ae, &table, &labels)? {
                ds.set_column(c)?;
            }
        }
        enc.autoencoder = Some(ae);
        enc.autoencoder_mse = Some(log.mse);
    }
    let cats: Vec<String> = parts[0]
        .feature_names()
        .iter()
        .zip(parts[0].feature_kinds())
        .filter(|(_, k)| **k == FeatureKind::Categorical)
        .map(|(n, _)| n.clone())
        .collect();
    for name in cats {
        let j = parts[0].column_index(&name).expect("column");
        let e = JamesSteinEncoder::fit_column(parts[0], j)?;
        for ds in parts.iter_mut() {
            let j = ds.column_index(&name).expect("column");
            let values = e.transform_column(ds, j)?;
            ds.set_column(Column::numeric(name.clone(), values))?;
        }
        enc.james_stein.insert(name, e);
    }
    Ok(enc)
}

/// Load, split, encode and select.
pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    cfg.oot_year()?;
    let (input, true_pd) = stage("prepare", load_input(cfg))?;
    prepare_input(cfg, input, true_pd)
}

/// [`prepare`] on an already loaded dataset.
pub fn prepare_input(cfg: &PipelineConfig, input: Dataset, true_pd: Option<Vec<f64>>) -> Result<Prepared> {
    let oot_year = cfg.oot_year()?;
    let oot_split = stage("prepare", split_out_of_time(&input, oot_year))?;
    let mut warnings = oot_split.warnings;
    if oot_split.second.n_rows() == 0 {
        return Err(Error::Stage {
            stage: "prepare",
            source: Box::new(Error::Split(format!("no rows in out-of-time year {oot_year}"))),
        });
    }
    let dev = stage("prepare", stratified_split(&oot_split.first, cfg.split.test_fraction, cfg.split.seed))?;
    warnings.extend(dev.warnings);
    let (mut train, mut calib, mut oot) = (dev.first, dev.second, oot_split.second);
    let encoders = stage("prepare", encode_parts(cfg, &mut [&mut train, &mut calib, &mut oot]))?;

    let selection = stage("select", select_features(&train, &cfg.selection))?;
    let keep = &selection.selected;
    let train = stage("select", train.select_columns(keep))?;
    let calib = stage("select", calib.select_columns(keep))?;
    let oot = stage("select", oot.select_columns(keep))?;
    let parts = [("train", &train), ("calib", &calib), ("oot", &oot)]
        .into_iter()
        .map(|(k, d)| (k.to_string(), part_summary(d)))
        .collect();
    let summary = DataSummary {
        n_input: input.n_rows(),
        oot_year,
        parts,
        features: keep.clone(),
        warnings,
    };
    Ok(Prepared {
        train,
        calib,
        oot,
        true_pd,
        encoders,
        selection,
        summary,
    })
}

/// The boosted model together with the rows it was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub model: GbdtModel,
    pub fit_rows: Vec<u64>,
}

/// Out-of-time CV over the grid, then a refit of the winner on all
/// boosting rows.
pub fn fit_stage(cfg: &PipelineConfig, train: &Dataset) -> Result<(ModelArtifact, CvOutcome)> {
    let cv = stage("fit", oot_cv_tune(train, &cfg.gbdt.grid, cfg.gbdt.beta))?;
    info!("fit: candidate {} wins with F_beta {:?}", cv.best_index, cv.scores[cv.best_index]);
    let model = stage("fit", gbdt::fit(train, &cv.best))?;
    Ok((
        ModelArtifact {
            model,
            fit_rows: train.row_ids().to_vec(),
        },
        cv,
    ))
}

/// Pick `c` on the calibration rows of the latest development year (fitting
/// on the earlier ones), then refit on all calibration rows.
pub fn calibrate_stage(cfg: &PipelineConfig, model: &ModelArtifact, calib: &Dataset) -> Result<Calibrator> {
    stage("calibrate", assert_disjoint(&model.fit_rows, calib, "calibration"))?;
    let last = *calib.year().iter().max().ok_or_else(|| Error::Stage {
        stage: "calibrate",
        source: Box::new(Error::InvalidArgument("calibration sample is empty".into())),
    })?;
    let early: Vec<usize> = (0..calib.n_rows()).filter(|&i| calib.year()[i] < last).collect();
    let late: Vec<usize> = (0..calib.n_rows()).filter(|&i| calib.year()[i] == last).collect();
    let grid = &cfg.calibration.c_grid;
    let (c, scores) = if grid.len() == 1 {
        (grid[0], Vec::new())
    } else if early.is_empty() || calib.subset(&early).positives() == 0 || calib.subset(&late).positives() == 0 {
        warn!("calibrate: cannot hold out the latest year; using c = {}", grid[0]);
        (grid[0], Vec::new())
    } else {
        let sel = stage("calibrate", fit_calibrator(&model.model, &calib.subset(&early), grid, &calib.subset(&late)))?;
        (sel.c, sel.c_scores)
    };
    let mut cal = stage("calibrate", fit_calibrator(&model.model, calib, &[c], calib))?;
    cal.c_scores = scores;
    Ok(cal)
}

/// The calibrator scored on the boosting rows, which it never saw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCheck {
    pub rows: usize,
    pub default_rate: f64,
    pub mean_pd: f64,
    pub brier_raw: f64,
    pub brier_calibrated: f64,
    pub log_loss_calibrated: f64,
    pub auroc_calibrated: Option<f64>,
}

pub fn calibration_check(model: &ModelArtifact, cal: &Calibrator, train: &Dataset) -> Result<CalibrationCheck> {
    let run = || -> Result<CalibrationCheck> {
        let y = train.target();
        let pd = cal.calibrated_pd(&model.model, train)?;
        let raw = model.model.predict_dataset(train)?;
        Ok(CalibrationCheck {
            rows: train.n_rows(),
            default_rate: train.default_rate(),
            mean_pd: pd.iter().sum::<f64>() / pd.len().max(1) as f64,
            brier_raw: brier(&raw, y)?,
            brier_calibrated: brier(&pd, y)?,
            log_loss_calibrated: log_loss(&pd, y)?,
            auroc_calibrated: roc_auc(&pd, y).ok().map(|r| r.auc),
        })
    };
    stage("calibrate", run())
}

/// Optimise the rating scale on the calibrated PDs of the calibration rows.
pub fn rate_stage(cfg: &PipelineConfig, model: &ModelArtifact, cal: &Calibrator, calib: &Dataset) -> Result<RatingScale> {
    let pd = stage("rate", cal.calibrated_pd(&model.model, calib))?;
    stage("rate", de_optimize(&pd, calib.target(), &cfg.rating))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OotMetrics {
    pub n: usize,
    pub defaults: usize,
    pub auroc_raw: Option<f64>,
    pub auroc_calibrated: Option<f64>,
    pub brier_raw: f64,
    pub brier_calibrated: f64,
    pub bayes: Option<BayesMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub report: ValidationReport,
    pub metrics: OotMetrics,
    pub calibrated_pd: Vec<f64>,
}

/// Back-test the scale on the out-of-time rows. `true_pd` is indexed by
/// row id.
pub fn validate_stage(
    cfg: &PipelineConfig,
    model: &ModelArtifact,
    cal: &Calibrator,
    scale: &RatingScale,
    oot: &Dataset,
    true_pd: Option<&[f64]>,
) -> Result<Validation> {
    let run = || -> Result<Validation> {
        let y = oot.target();
        let pd = cal.calibrated_pd(&model.model, oot)?;
        let raw: Vec<f64> = model.model.predict_dataset(oot)?;
        let report = validate_scale(
            scale,
            &pd,
            y,
            cfg.validation.alpha,
            &cfg.traffic_light()?,
            cfg.calibration.reliability_bins,
        )?;
        let bayes = match true_pd {
            Some(t) => {
                let tp: Vec<f64> = oot.row_ids().iter().map(|&r| t[r as usize]).collect();
                bayes_metrics(&tp, y).ok()
            }
            None => None,
        };
        let metrics = OotMetrics {
            n: oot.n_rows(),
            defaults: oot.positives(),
            auroc_raw: roc_auc(&raw, y).ok().map(|r| r.auc),
            auroc_calibrated: report.auroc,
            brier_raw: brier(&raw, y)?,
            brier_calibrated: report.brier,
            bayes,
        };
        Ok(Validation {
            report,
            metrics,
            calibrated_pd: pd,
        })
    };
    stage("validate", run())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanations {
    pub feature_names: Vec<String>,
    /// row ids of the explained out-of-time rows
    pub rows: Vec<u64>,
    pub background_rows: Vec<u64>,
    pub shapley: Vec<ShapExplanation<f64>>,
    pub lime: Vec<LimeExplanation>,
}

fn sampled_rows(ds: &Dataset, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx = sample(rng, ds.n_rows(), k.min(ds.n_rows())).into_vec();
    idx.sort_unstable();
    idx
}

/// Shapley values of the raw score for sampled out-of-time rows, against a
/// background drawn from the boosting rows, plus LIME surrogates.
pub fn explain_stage(cfg: &PipelineConfig, model: &ModelArtifact, train: &Dataset, oot: &Dataset) -> Result<Explanations> {
    let run = || -> Result<Explanations> {
        let e = &cfg.explain;
        let m = &model.model;
        if m.n_features > e.max_features {
            return Err(Error::Explain(format!(
                "{} features exceed the exact Shapley limit of {}; reduce the feature set (selection.n_final) first",
                m.n_features, e.max_features
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(e.seed);
        let bg_idx = sampled_rows(train, e.background, &mut rng);
        let x_idx = sampled_rows(oot, e.n_instances, &mut rng);
        let background: Vec<Vec<f64>> = bg_idx.iter().map(|&i| train.row(i).to_vec()).collect();
        let rows: Vec<Vec<f64>> = x_idx.iter().map(|&i| oot.row(i).to_vec()).collect();
        let shapley = tree_shapley_batch(m, &rows, &background, e.max_features)?;
        let lime = rows
            .iter()
            .take(e.lime_instances)
            .map(|x| lime_explain(|r| m.raw_score_row(r), x, &background, &e.lime))
            .collect::<Result<Vec<_>>>()?;
        Ok(Explanations {
            feature_names: m.feature_names.clone(),
            rows: x_idx.iter().map(|&i| oot.row_ids()[i]).collect(),
            background_rows: bg_idx.iter().map(|&i| train.row_ids()[i]).collect(),
            shapley,
            lime,
        })
    };
    stage("explain", run())
}

// ---------------------------------------------------------------------------
// Artifact writers shared by the full run and the single-stage commands

pub fn write_prepared(art: &mut ArtifactDir, p: &Prepared) -> Result<()> {
    art.dataset(names::TRAIN_CSV, &p.train)?;
    art.dataset(names::CALIB_CSV, &p.calib)?;
    art.dataset(names::OOT_CSV, &p.oot)?;
    art.json(names::ENCODERS, &p.encoders)?;
    art.json(names::SELECTION, &p.selection)?;
    art.json(names::DATA_SUMMARY, &p.summary)
}

pub fn write_fit(art: &mut ArtifactDir, model: &ModelArtifact, cv: &CvOutcome) -> Result<()> {
    art.json(names::MODEL, model)?;
    art.json(names::CV_SUMMARY, cv)?;
    art.csv(names::CV_FOLDS, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        for f in &cv.folds {
            w.serialize(f)?;
        }
        w.flush()?;
        Ok(())
    })
}

pub fn write_calibrator(art: &mut ArtifactDir, cal: &Calibrator, check: &CalibrationCheck) -> Result<()> {
    art.json(names::CALIBRATOR, cal)?;
    art.json(names::CALIBRATION_CHECK, check)
}

pub fn write_scale(art: &mut ArtifactDir, scale: &RatingScale) -> Result<()> {
    art.json(names::SCALE_JSON, scale)?;
    art.csv(names::SCALE_CSV, |buf| scale.write_csv(buf))
}

pub fn write_validation(art: &mut ArtifactDir, v: &Validation, oot: &Dataset) -> Result<()> {
    art.json(names::VALIDATION_JSON, &v.report)?;
    art.csv(names::VALIDATION_CSV, |buf| v.report.write_csv(buf))?;
    art.csv(names::RELIABILITY, |buf| v.report.reliability.write_csv(buf))?;
    art.json(names::METRICS, &v.metrics)?;
    let roc = roc_auc(&v.calibrated_pd, oot.target()).ok();
    art.csv(names::ROC, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["threshold", "fpr", "tpr"])?;
        for p in roc.iter().flat_map(|r| &r.points) {
            w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })
}

pub fn write_explanations(art: &mut ArtifactDir, ex: &Explanations) -> Result<()> {
    let s = summary_stats(&ex.shapley, &ex.feature_names)?;
    art.csv(names::SHAP_VALUES, |buf| s.write_records_csv(buf))?;
    art.csv(names::SHAP_RANKING, |buf| s.write_ranking_csv(buf))?;
    art.csv(names::SHAP_WATERFALL, |buf| s.write_waterfall_csv(buf))?;
    art.json(names::EXPLANATIONS, ex)?;
    art.json(names::LIME, &ex.lime)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: String,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub leakage_check: Option<String>,
    pub artifacts: Vec<String>,
}

/// Everything a full run produced, plus per-stage wall-clock times (not
/// written to disk).
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub prepared: Prepared,
    pub model: ModelArtifact,
    pub cv: CvOutcome,
    pub calibrator: Calibrator,
    pub scale: RatingScale,
    pub validation: Validation,
    pub explanations: Option<Explanations>,
    pub timings: Vec<(&'static str, Duration)>,
}

/// Run every stage and write all artifacts into `out`. On failure the
/// manifest names the failing stage and lists what was written.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<RunOutput> {
    cfg.validate()?;
    let mut art = ArtifactDir::create(cfg, out)?;
    let result = run_stages(cfg, &mut art);
    let manifest = match &result {
        Ok(_) => Manifest {
            status: "complete".into(),
            failed_stage: None,
            error: None,
            leakage_check: Some("passed".into()),
            artifacts: art.written.clone(),
        },
        Err(e) => Manifest {
            status: "failed".into(),
            failed_stage: match e {
                Error::Stage { stage, .. } => Some(stage.to_string()),
                _ => None,
            },
            error: Some(e.to_string()),
            leakage_check: None,
            artifacts: art.written.clone(),
        },
    };
    art.json(names::MANIFEST, &manifest)?;
    result
}

fn run_stages(cfg: &PipelineConfig, art: &mut ArtifactDir) -> Result<RunOutput> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, timings: &mut Vec<(&'static str, Duration)>| {
        let now = Instant::now();
        timings.push((name, now - clock));
        info!("stage {name} finished in {:.1?}", now - clock);
        clock = now;
    };

    let prepared = prepare(cfg)?;
    stage("prepare", write_prepared(art, &prepared))?;
    lap("prepare", &mut timings);

    let (model, cv) = fit_stage(cfg, &prepared.train)?;
    stage("fit", write_fit(art, &model, &cv))?;
    lap("fit", &mut timings);

    let calibrator = calibrate_stage(cfg, &model, &prepared.calib)?;
    let check = calibration_check(&model, &calibrator, &prepared.train)?;
    info!(
        "calibrate: c = {}, Brier on boosting rows {:.5} (raw {:.5})",
        calibrator.c, check.brier_calibrated, check.brier_raw
    );
    stage("calibrate", write_calibrator(art, &calibrator, &check))?;
    lap("calibrate", &mut timings);

    let scale = rate_stage(cfg, &model, &calibrator, &prepared.calib)?;
    stage("rate", write_scale(art, &scale))?;
    lap("rate", &mut timings);

    let validation = validate_stage(cfg, &model, &calibrator, &scale, &prepared.oot, prepared.true_pd.as_deref())?;
    stage("validate", write_validation(art, &validation, &prepared.oot))?;
    lap("validate", &mut timings);

    let explanations = if cfg.explain.enabled {
        let ex = explain_stage(cfg, &model, &prepared.train, &prepared.oot)?;
        stage("explain", write_explanations(art, &ex))?;
        lap("explain", &mut timings);
        Some(ex)
    } else {
        None
    };
    Ok(RunOutput {
        prepared,
        model,
        cv,
        calibrator,
        scale,
        validation,
        explanations,
        timings,
    })
}

/// Reliability curve of calibrated out-of-time PDs; convenience for callers
/// that only hold a [`Validation`].
pub fn oot_reliability(v: &Validation, oot: &Dataset, n_bins: usize) -> Result<crate::calib::ReliabilityCurve> {
    reliability_curve(&v.calibrated_pd, oot.target(), n_bins)
}

/// Raw default probability `sigmoid(score)` without calibration.
pub fn raw_pd(model: &GbdtModel, row: &[f64]) -> f64 {
    sigmoid(model.raw_score_row(row))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> PipelineConfig {
        PipelineConfig::from_toml(
            r#"
            [data.synth]
            n_rows = 6000
            n_noise = 4
            intercept = -3.5
            seed = 3

            [split]
            oot_year = 2017
            seed = 1

            [selection]
            n_final = 8

            [gbdt]
            grid = [{ n_trees = 30, max_leaves = 6 }, { n_trees = 20, max_leaves = 4 }]

            [rating]
            n_classes = 5
            generations = 60
            population = 20

            [explain]
            n_instances = 20
            background = 20
            lime_instances = 1
            lime = { n_samples = 300, kernel_width = 3.0, k = 3, seed = 0 }
            "#,
        )
        .unwrap()
    }

    #[test]
    fn shipped_config_spells_out_the_defaults() {
        let cfg = PipelineConfig::from_toml(include_str!("../../../configs/synthetic.toml")).unwrap();
        cfg.validate().unwrap();
        let mut expected = PipelineConfig::default();
        expected.data.synth = Some(GeneratorSpec::default());
        expected.split.oot_year = Some(2017);
        assert_eq!(cfg, expected);
    }

    #[test]
    fn missing_oot_year_is_a_config_error() {
        let mut cfg = small_config();
        cfg.split.oot_year = None;
        let dir = tempfile::tempdir().unwrap();
        match run_pipeline(&cfg, dir.path()) {
            Err(Error::Config(m)) => assert!(m.contains("oot_year")),
            other => panic!("{other:?}"),
        }
        // nothing computed, nothing written
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
        assert!(PipelineConfig::from_toml("[split]\noot_yaer = 2017").is_err());
    }

    #[test]
    fn small_run_writes_everything_and_is_repeatable() {
        let cfg = small_config();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let out = run_pipeline(&cfg, a.path()).unwrap();
        run_pipeline(&cfg, b.path()).unwrap();
        assert_eq!(out.validation.report.classes.len(), 5);
        let manifest: Manifest = load_artifact(&a.path().join(names::MANIFEST)).unwrap();
        assert_eq!(manifest.status, "complete");
        for name in &manifest.artifacts {
            let x = fs::read(a.path().join(name)).unwrap();
            let y = fs::read(b.path().join(name)).unwrap();
            assert!(x == y, "{name} differs between runs");
        }
        for name in [names::MODEL, names::SCALE_CSV, names::VALIDATION_CSV, names::ROC, names::SHAP_WATERFALL] {
            assert!(manifest.artifacts.iter().any(|a| a == name), "{name} missing");
        }
        let text = fs::read_to_string(a.path().join(names::VALIDATION_CSV)).unwrap();
        assert!(text.starts_with(&format!("# config_hash: {}", cfg.hash())));

        // downstream stages from persisted artifacts reproduce the run
        let model: ModelArtifact = load_artifact(&a.path().join(names::MODEL)).unwrap();
        let calib = load_prepared(&a.path().join(names::CALIB_CSV)).unwrap();
        let cal = calibrate_stage(&cfg, &model, &calib).unwrap();
        assert_eq!(cal, out.calibrator);
        let scale = rate_stage(&cfg, &model, &cal, &calib).unwrap();
        assert_eq!(scale, out.scale);
    }

    #[test]
    fn calibrating_on_fitted_rows_is_refused() {
        let cfg = small_config();
        let p = prepare(&cfg).unwrap();
        let model = ModelArtifact {
            model: gbdt::fit(&p.train, &GbdtConfig { n_trees: 3, ..Default::default() }).unwrap(),
            fit_rows: p.train.row_ids().to_vec(),
        };
        let err = calibrate_stage(&cfg, &model, &p.train).unwrap_err();
        assert!(err.to_string().contains("calibrate"));
        assert!(load_artifact::<Manifest>(Path::new("/nonexistent/manifest.json")).is_err());
    }

    #[test]
    fn label_embeddings_are_compressed_into_features() {
        let dir = tempfile::tempdir().unwrap();
        let keys: Vec<String> = (0..6).map(|k| format!("L{k}")).collect();
        let table = crate::synth::synthetic_embeddings(&keys, 8, 2, 4).unwrap();
        let text: String = table
            .vectors
            .iter()
            .map(|(k, v)| format!("{k} {}\n", v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")))
            .collect();
        let path = dir.path().join("emb.txt");
        fs::write(&path, text).unwrap();
        let mut cfg = small_config();
        cfg.encoder.embeddings = Some(path);
        cfg.encoder.embedding_column = Some("cat_0".into());
        cfg.encoder.autoencoder_dims = vec![8, 6, 4, 2, 4, 6, 8];
        cfg.validate().unwrap();
        let p = prepare(&cfg).unwrap();
        let ae = p.encoders.autoencoder.as_ref().unwrap();
        assert_eq!(ae.weights.len(), 6);
        assert!(p.encoders.autoencoder_mse.as_ref().unwrap().iter().all(|m| m.is_finite()));
        for name in ["emb_0", "emb_1"] {
            assert!(p.selection.mean_rank.contains_key(name), "{name} not a candidate");
        }
    }

    #[test]
    fn too_many_features_for_shapley() {
        let mut cfg = small_config();
        cfg.explain.max_features = 4;
        let p = prepare(&cfg).unwrap();
        let (model, _) = fit_stage(&cfg, &p.train).unwrap();
        let err = explain_stage(&cfg, &model, &p.train, &p.oot).unwrap_err();
        assert!(err.to_string().contains("reduce the feature set"));
    }
}
