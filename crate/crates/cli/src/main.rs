//! `creditrisk` command line.
//!
//! `run` executes the whole pipeline; the other subcommands execute one stage
//! from the artifacts a previous stage left in the output directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use creditrisk::data::write_csv;
use creditrisk::pipeline::{self, names, ArtifactDir, ModelArtifact, PipelineConfig};
use creditrisk::synth::{generate, GeneratorSpec};
use creditrisk::{Error, RatingScale};
use log::info;

#[derive(Parser)]
#[command(name = "creditrisk", version, about = "Default classification, PD calibration, rating scales and back-tests")]
struct Cli {
    /// worker threads for the parallel kernels (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// pipeline configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// output directory; overrides `output.dir`
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Every stage, from input data to explanations
    Run(Common),
    /// Prepare data, select features and fit the boosted model
    Train(Common),
    /// Fit the leaf-based PD calibrator
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        /// calibration sample (prepared CSV)
        #[arg(long)]
        data: Option<PathBuf>,
        /// boosting sample the calibrator is checked on (prepared CSV)
        #[arg(long)]
        train_data: Option<PathBuf>,
    },
    /// Optimise the rating scale
    Rate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        calibrator: Option<PathBuf>,
        /// calibration sample (prepared CSV)
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Back-test the rating scale on the out-of-time sample
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        calibrator: Option<PathBuf>,
        #[arg(long)]
        scale: Option<PathBuf>,
        /// out-of-time sample (prepared CSV)
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Shapley and LIME explanations of out-of-time rows
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        /// rows the background is drawn from (prepared CSV)
        #[arg(long)]
        train_data: Option<PathBuf>,
        /// rows to explain (prepared CSV)
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write a synthetic dataset as CSV
    Synth {
        /// configuration whose `[data.synth]` section is used; defaults otherwise
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV file to write
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(common: &Common) -> anyhow::Result<(PipelineConfig, PathBuf)> {
    let cfg = PipelineConfig::load(&common.config)?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    Ok((cfg, out))
}

fn or_default(flag: &Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    flag.clone().unwrap_or_else(|| out.join(name))
}

fn artifacts(cfg: &PipelineConfig, out: &Path) -> anyhow::Result<ArtifactDir> {
    cfg.validate()?;
    Ok(ArtifactDir::create(cfg, out)?)
}

fn execute(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Run(common) => {
            let (cfg, out) = load_config(&common)?;
            let r = pipeline::run_pipeline(&cfg, &out)?;
            for (stage, t) in &r.timings {
                info!("{stage}: {t:.1?}");
            }
            let m = &r.validation.metrics;
            println!(
                "out-of-time: n={} defaults={} AUROC={:.4} Brier={:.5}; artifacts in {}",
                m.n,
                m.defaults,
                m.auroc_calibrated.unwrap_or(f64::NAN),
                m.brier_calibrated,
                out.display()
            );
        }
        Command::Train(common) => {
            let (cfg, out) = load_config(&common)?;
            let mut art = artifacts(&cfg, &out)?;
            let p = pipeline::prepare(&cfg)?;
            pipeline::write_prepared(&mut art, &p)?;
            let (model, cv) = pipeline::fit_stage(&cfg, &p.train)?;
            pipeline::write_fit(&mut art, &model, &cv)?;
            println!("model with {} trees on {} features", model.model.trees.len(), model.model.n_features);
        }
        Command::Calibrate {
            common,
            model,
            data,
            train_data,
        } => {
            let (cfg, out) = load_config(&common)?;
            let mut art = artifacts(&cfg, &out)?;
            let model: ModelArtifact = pipeline::load_artifact(&or_default(&model, &out, names::MODEL))?;
            let calib = pipeline::load_prepared(&or_default(&data, &out, names::CALIB_CSV))?;
            let train = pipeline::load_prepared(&or_default(&train_data, &out, names::TRAIN_CSV))?;
            let cal = pipeline::calibrate_stage(&cfg, &model, &calib)?;
            let check = pipeline::calibration_check(&model, &cal, &train)?;
            pipeline::write_calibrator(&mut art, &cal, &check)?;
            println!(
                "calibrator fitted with c = {}; Brier on boosting rows {:.5} (raw {:.5})",
                cal.c, check.brier_calibrated, check.brier_raw
            );
        }
        Command::Rate {
            common,
            model,
            calibrator,
            data,
        } => {
            let (cfg, out) = load_config(&common)?;
            let mut art = artifacts(&cfg, &out)?;
            let model: ModelArtifact = pipeline::load_artifact(&or_default(&model, &out, names::MODEL))?;
            let cal = pipeline::load_artifact(&or_default(&calibrator, &out, names::CALIBRATOR))?;
            let calib = pipeline::load_prepared(&or_default(&data, &out, names::CALIB_CSV))?;
            let scale = pipeline::rate_stage(&cfg, &model, &cal, &calib)?;
            pipeline::write_scale(&mut art, &scale)?;
            println!("rating scale with {} classes", scale.n_classes);
        }
        Command::Validate {
            common,
            model,
            calibrator,
            scale,
            data,
        } => {
            let (cfg, out) = load_config(&common)?;
            let mut art = artifacts(&cfg, &out)?;
            let model: ModelArtifact = pipeline::load_artifact(&or_default(&model, &out, names::MODEL))?;
            let cal = pipeline::load_artifact(&or_default(&calibrator, &out, names::CALIBRATOR))?;
            let scale: RatingScale = pipeline::load_artifact(&or_default(&scale, &out, names::SCALE_JSON))?;
            let oot = pipeline::load_prepared(&or_default(&data, &out, names::OOT_CSV))?;
            let truth = pipeline::synthetic_truth(&cfg)?;
            let v = pipeline::validate_stage(&cfg, &model, &cal, &scale, &oot, truth.as_deref())?;
            pipeline::write_validation(&mut art, &v, &oot)?;
            let failed = v.report.classes.iter().filter(|c| c.binomial_pass == Some(false)).count();
            println!("{} classes back-tested, {failed} binomial rejections", v.report.classes.len());
        }
        Command::Explain {
            common,
            model,
            train_data,
            data,
        } => {
            let (cfg, out) = load_config(&common)?;
            let mut art = artifacts(&cfg, &out)?;
            let model: ModelArtifact = pipeline::load_artifact(&or_default(&model, &out, names::MODEL))?;
            let train = pipeline::load_prepared(&or_default(&train_data, &out, names::TRAIN_CSV))?;
            let oot = pipeline::load_prepared(&or_default(&data, &out, names::OOT_CSV))?;
            let ex = pipeline::explain_stage(&cfg, &model, &train, &oot)?;
            pipeline::write_explanations(&mut art, &ex)?;
            println!("{} rows explained", ex.rows.len());
        }
        Command::Synth { config, out, rows, seed } => {
            let mut spec = match config {
                Some(path) => PipelineConfig::load(&path)?.data.synth.unwrap_or_default(),
                None => GeneratorSpec::default(),
            };
            if let Some(n) = rows {
                spec.n_rows = n;
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            spec.validate()?;
            let s = generate(&spec)?;
            write_csv(&s.dataset, &out, &[format!("synthetic, seed {}", spec.seed)])
                .with_context(|| format!("writing {}", out.display()))?;
            println!(
                "{} rows written to {}; categorical columns: {}",
                s.dataset.n_rows(),
                out.display(),
                spec.categorical_names().join(",")
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.downcast_ref::<Error>() {
                Some(Error::Stage { stage, source }) => eprintln!("error in stage {stage}: {source}"),
                _ => eprintln!("error: {e:#}"),
            }
            ExitCode::FAILURE
        }
    }
}

