//! Stage runner for the per-run subcommands and the manifest it keeps.

use std::fs;
use std::path::{Path, PathBuf};

use nostill::data::{ingest_csv, split_train_test, write_csv, ColumnMap};
use nostill::model::{fit_stationary, load_model, model_to_toml, train_from, warm_start, NostillModel};
use nostill::pipeline::{NOSTILL_LABEL, STATIONARY_LABEL};
use nostill::planner::{
    compare_models, plan_and_evaluate, write_series_csv, write_summary_csv, write_trace_csv,
    PlanningTrace,
};
use nostill::selection::{import_latents, select_latents, write_latents_csv, StationaryKernel};
use nostill::{Dataset, SpaceTimePoint};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, StageError};

pub const MANIFEST: &str = "manifest.toml";
pub const TRAIN_CSV: &str = "train.csv";
pub const TEST_CSV: &str = "test.csv";
pub const LATENTS_CSV: &str = "latents.csv";
pub const STATIONARY_MODEL: &str = "stationary_model.toml";
pub const MODEL: &str = "model.toml";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SERIES_CSV: &str = "rms_series.csv";

fn trace_file(label: &str) -> String {
    format!("trace_{label}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    /// `ok` or `failed`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub stages: Vec<String>,
    /// File names relative to the run directory.
    pub artifacts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// One invocation of a per-run subcommand.
pub struct Run {
    pub config: ExperimentConfig,
    base: PathBuf,
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

impl Run {
    pub fn new(config: ExperimentConfig, base: PathBuf, out_dir: PathBuf, command: &str) -> Self {
        let manifest = Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: config.train.seed,
            status: "running".into(),
            failed_stage: None,
            error: None,
            stages: Vec::new(),
            artifacts: Vec::new(),
            train_fingerprint: None,
            test_fingerprint: None,
            m: None,
            config: config.clone(),
        };
        Run {
            config,
            base,
            out_dir,
            manifest,
        }
    }

    fn stage<T>(
        &mut self,
        name: &'static str,
        f: impl FnOnce(&mut Self) -> Result<T, CliError>,
    ) -> Result<T, StageError> {
        log::info!(target: name, "start");
        match f(self) {
            Ok(v) => {
                self.manifest.stages.push(name.to_string());
                Ok(v)
            }
            Err(error) => {
                self.manifest.status = "failed".into();
                self.manifest.failed_stage = Some(name.to_string());
                self.manifest.error = Some(error.to_string());
                if let Err(e) = self.write_manifest() {
                    log::error!(target: name, "could not write manifest: {e}");
                }
                Err(StageError { stage: name, error })
            }
        }
    }

    fn write_manifest(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out_dir).map_err(|e| CliError::io(&self.out_dir, e))?;
        let text = toml::to_string(&self.manifest).map_err(|e| CliError::Config(e.to_string()))?;
        let path = self.out_dir.join(MANIFEST);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    fn write_artifact(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        fs::create_dir_all(&self.out_dir).map_err(|e| CliError::io(&self.out_dir, e))?;
        let path = self.out_dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        if !self.manifest.artifacts.iter().any(|a| a == name) {
            self.manifest.artifacts.push(name.to_string());
        }
        log::info!(target: "output", "wrote {}", path.display());
        Ok(())
    }

    pub fn finish(mut self) -> Result<Manifest, StageError> {
        self.manifest.status = "ok".into();
        self.write_manifest()
            .map_err(|error| StageError { stage: "manifest", error })?;
        Ok(self.manifest)
    }

    pub fn ingest(&mut self) -> Result<(Dataset, Dataset), StageError> {
        self.stage("ingest", |run| {
            let path = run.config.dataset_path(&run.base);
            let data = ingest_csv(&path, &run.config.dataset.columns)?;
            let (train, test) = split_train_test(&data, &run.config.split)?;
            log::info!(
                target: "ingest",
                "{} observations, {} train, {} test",
                data.len(),
                train.len(),
                test.len()
            );
            run.manifest.train_fingerprint = Some(train.fingerprint());
            run.manifest.test_fingerprint = Some(test.fingerprint());
            Ok((train, test))
        })
    }

    pub fn export_split(&mut self, train: &Dataset, test: &Dataset) -> Result<(), StageError> {
        self.stage("export", |run| {
            let columns = ColumnMap {
                station: Some(
                    run.config
                        .dataset
                        .columns
                        .station
                        .clone()
                        .unwrap_or_else(|| "station".into()),
                ),
                ..run.config.dataset.columns.clone()
            };
            for (name, data) in [(TRAIN_CSV, train), (TEST_CSV, test)] {
                let mut bytes = Vec::new();
                write_csv(data, &columns, &mut bytes)?;
                run.write_artifact(name, &bytes)?;
            }
            Ok(())
        })
    }

    pub fn stationary(&mut self, train: &Dataset) -> Result<NostillModel, StageError> {
        self.stage("stationary", |run| {
            let model = fit_stationary(train, run.config.kernel.family, &run.config.train)?;
            log_training("stationary", &model);
            run.write_artifact(STATIONARY_MODEL, model_to_toml(&model)?.as_bytes())?;
            Ok(model)
        })
    }

    pub fn select(
        &mut self,
        train: &Dataset,
        stationary: &NostillModel,
    ) -> Result<Vec<SpaceTimePoint>, StageError> {
        self.stage("select", |run| {
            let kernel = StationaryKernel::from_model(stationary)?;
            let latents = select_latents(train, &run.config.selection, Some(&kernel), &run.config.train)?;
            log::info!(target: "select", "{} latent points", latents.len());
            run.save_latents(&latents)?;
            Ok(latents)
        })
    }

    pub fn import_latents(&mut self, path: &Path) -> Result<Vec<SpaceTimePoint>, StageError> {
        self.stage("select", |run| {
            let latents = import_latents(path)?;
            log::info!(target: "select", "{} latent points from {}", latents.len(), path.display());
            run.save_latents(&latents)?;
            Ok(latents)
        })
    }

    fn save_latents(&mut self, latents: &[SpaceTimePoint]) -> Result<(), CliError> {
        let mut bytes = Vec::new();
        write_latents_csv(latents, &mut bytes)?;
        self.write_artifact(LATENTS_CSV, &bytes)?;
        self.manifest.m = Some(latents.len());
        Ok(())
    }

    pub fn train(
        &mut self,
        train: &Dataset,
        stationary: &NostillModel,
        latents: &[SpaceTimePoint],
    ) -> Result<NostillModel, StageError> {
        self.stage("train", |run| {
            let init = warm_start(stationary, latents, run.config.kernel.sparse)?;
            let model = train_from(train, init, &run.config.train)?;
            log_training("train", &model);
            run.write_artifact(MODEL, model_to_toml(&model)?.as_bytes())?;
            Ok(model)
        })
    }

    /// Loads both models written by an earlier `train` into this run's
    /// output directory.
    pub fn load_models(&mut self, train: &Dataset) -> Result<(NostillModel, NostillModel), StageError> {
        self.stage("load", |run| {
            let stationary = load_model(run.out_dir.join(STATIONARY_MODEL), train)?;
            let model = load_model(run.out_dir.join(MODEL), train)?;
            run.manifest.m = Some(model.params.m());
            Ok((stationary, model))
        })
    }

    pub fn plan(
        &mut self,
        test: &Dataset,
        stationary: &NostillModel,
        model: &NostillModel,
    ) -> Result<(), StageError> {
        let traces = self.stage("plan", |run| {
            let budget = run.config.planning.budget;
            let ts = run.config.planning.timesteps.clone();
            let mut traces: Vec<(String, PlanningTrace)> = Vec::new();
            for (label, m) in [(STATIONARY_LABEL, stationary), (NOSTILL_LABEL, model)] {
                let trace = plan_and_evaluate(m, test, budget, ts.as_deref())?;
                for s in &trace.steps {
                    log::info!(target: "plan", "{label} t {} rms {}", s.timestep, s.rms);
                }
                log::info!(target: "plan", "{label} mean rms {}", trace.mean_rms);
                traces.push((label.to_string(), trace));
            }
            Ok(traces)
        })?;
        self.stage("report", |run| {
            for (label, trace) in &traces {
                let mut bytes = Vec::new();
                write_trace_csv(trace, &mut bytes)?;
                run.write_artifact(&trace_file(label), &bytes)?;
            }
            let report = compare_models(&traces)?;
            let mut bytes = Vec::new();
            write_summary_csv(&report, &mut bytes)?;
            run.write_artifact(SUMMARY_CSV, &bytes)?;
            let mut bytes = Vec::new();
            write_series_csv(&report, &mut bytes)?;
            run.write_artifact(SERIES_CSV, &bytes)
        })
    }
}

fn log_training(stage: &'static str, model: &NostillModel) {
    log::info!(
        target: stage,
        "{} accepted steps, final lml {}",
        model.log.len(),
        model.log_marginal_likelihood()
    );
}
