//! One train/test experiment: stationary baseline, latent selection,
//! latent-field training and planning with both models.

use crate::data::{Dataset, SpaceTimePoint};
use crate::error::{Error, Result};
use crate::kernels::KernelFamily;
use crate::model::{fit_stationary, train_from, warm_start, NostillModel};
use crate::optimize::TrainConfig;
use crate::planner::{compare_models, plan_and_evaluate, ComparisonReport, PlanningTrace};
use crate::selection::{select_latents, SelectionPlan, StationaryKernel};

pub const STATIONARY_LABEL: &str = "stationary";
pub const NOSTILL_LABEL: &str = "nostill";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub family: KernelFamily,
    pub sparse: bool,
    pub selection: SelectionPlan,
    pub train: TrainConfig,
    /// Stations observed per timestep.
    pub budget: usize,
    /// Restrict planning to these timesteps.
    pub timesteps: Option<Vec<f64>>,
}

impl PipelineConfig {
    pub fn new(family: KernelFamily, selection: SelectionPlan, train: TrainConfig, budget: usize) -> Self {
        PipelineConfig {
            family,
            sparse: false,
            selection,
            train,
            budget,
            timesteps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.selection.validate()?;
        self.train.validate()?;
        if self.budget == 0 {
            return Err(Error::InvalidArgument("budget must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything one experiment produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub stationary: NostillModel,
    pub latents: Vec<SpaceTimePoint>,
    pub model: NostillModel,
    pub stationary_trace: PlanningTrace,
    pub trace: PlanningTrace,
}

impl PipelineOutput {
    pub fn report(&self) -> Result<ComparisonReport> {
        compare_models(&[
            (STATIONARY_LABEL.to_string(), self.stationary_trace.clone()),
            (NOSTILL_LABEL.to_string(), self.trace.clone()),
        ])
    }
}

/// Picks latent points and trains the latent-field model, warm started from
/// `stationary`.
pub fn fit_latent_model(
    train: &Dataset,
    stationary: &NostillModel,
    config: &PipelineConfig,
) -> Result<(Vec<SpaceTimePoint>, NostillModel)> {
    let kernel = StationaryKernel::from_model(stationary)?;
    let latents = select_latents(train, &config.selection, Some(&kernel), &config.train)?;
    let init = warm_start(stationary, &latents, config.sparse)?;
    let model = train_from(train, init, &config.train)?;
    Ok((latents, model))
}

pub fn run_pipeline(train: &Dataset, test: &Dataset, config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let stationary = fit_stationary(train, config.family, &config.train)?;
    log::info!(
        "stationary: lml {:.6} after {} accepted steps",
        stationary.log_marginal_likelihood(),
        stationary.log.len()
    );
    let (latents, model) = fit_latent_model(train, &stationary, config)?;
    log::info!(
        "nostill: m {} lml {:.6} after {} accepted steps",
        latents.len(),
        model.log_marginal_likelihood(),
        model.log.len()
    );
    let ts = config.timesteps.as_deref();
    let stationary_trace = plan_and_evaluate(&stationary, test, config.budget, ts)?;
    let trace = plan_and_evaluate(&model, test, config.budget, ts)?;
    log::info!(
        "mean rms: stationary {:.6} nostill {:.6}",
        stationary_trace.mean_rms,
        trace.mean_rms
    );
    Ok(PipelineOutput {
        stationary,
        latents,
        model,
        stationary_trace,
        trace,
    })
}
