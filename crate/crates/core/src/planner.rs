//! Sequential sensing simulation: at each timestep a robot observes a fixed
//! budget of test stations chosen greedily by entropy, every observation so
//! far is used to predict the stations it skipped, and the error is scored.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, Normalization, SpaceTimePoint, StationGrid};
use crate::error::{Error, Result};
use crate::gp::{factorize, Covariance};
use crate::model::NostillModel;
use crate::selection::argmax_lowest;

/// What the planner needs from a model.
pub trait PlanningModel {
    /// Prior covariance among `points`, in normalized units.
    fn covariance(&self, points: &[SpaceTimePoint]) -> Result<DMatrix<f64>>;

    fn noise_var(&self) -> f64;

    fn normalization(&self) -> Option<Normalization>;

    /// Predicted values (source units) at `targets` from the observations
    /// `values` (source units) at `observed`. Indices refer to `points` and
    /// to the rows of `cov`. The default is the GP posterior mean.
    fn predict(
        &self,
        points: &[SpaceTimePoint],
        cov: &DMatrix<f64>,
        observed: &[usize],
        values: &[f64],
        targets: &[usize],
    ) -> Result<Vec<f64>> {
        let _ = points;
        let norm = self.normalization().unwrap_or(Normalization {
            mean: 0.0,
            stddev: 1.0,
        });
        if observed.is_empty() {
            return Ok(vec![norm.mean; targets.len()]);
        }
        let mut koo = cov.select_rows(observed).select_columns(observed);
        for i in 0..observed.len() {
            koo[(i, i)] += self.noise_var();
        }
        let y = DVector::from_iterator(values.len(), values.iter().map(|v| norm.to_normalized(*v)));
        let alpha = factorize(&koo)?.solve_vec(&y);
        let kto = cov.select_rows(targets).select_columns(observed);
        Ok((kto * alpha).iter().map(|v| norm.to_original(*v)).collect())
    }
}

impl PlanningModel for NostillModel {
    fn covariance(&self, points: &[SpaceTimePoint]) -> Result<DMatrix<f64>> {
        self.kernel().cov(points, points)
    }

    fn noise_var(&self) -> f64 {
        self.params.noise_var
    }

    fn normalization(&self) -> Option<Normalization> {
        NostillModel::normalization(self)
    }
}

/// Outcome at one test station for one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct StationOutcome {
    pub station: i64,
    pub observed: bool,
    pub truth: f64,
    /// `None` for observed stations.
    pub prediction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub timestep: f64,
    /// Stations observed at this step, in pick order.
    pub selected: Vec<i64>,
    pub selected_points: Vec<SpaceTimePoint>,
    /// Every test station at this step, in station order.
    pub outcomes: Vec<StationOutcome>,
    /// Root mean square error over the unobserved stations, 0 if none.
    pub rms: f64,
    /// Observations available after this step.
    pub observations_so_far: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanningTrace {
    pub budget: usize,
    pub stations: Vec<i64>,
    pub timesteps: Vec<f64>,
    pub test_fingerprint: String,
    pub steps: Vec<StepRecord>,
    pub mean_rms: f64,
}

/// Runs the simulation over `timesteps` (all test times when `None`).
pub fn plan_and_evaluate<M: PlanningModel + ?Sized>(
    model: &M,
    test: &Dataset,
    budget: usize,
    timesteps: Option<&[f64]>,
) -> Result<PlanningTrace> {
    let grid = StationGrid::from_dataset(test)?;
    let n_st = grid.n_stations();
    if budget == 0 || budget > n_st {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} must be between 1 and the {n_st} test stations"
        )));
    }
    let steps: Vec<usize> = match timesteps {
        None => (0..grid.n_times()).collect(),
        Some(ts) => ts
            .iter()
            .map(|t| {
                grid.times
                    .iter()
                    .position(|g| g == t)
                    .ok_or_else(|| Error::InvalidArgument(format!("no test data at t = {t}")))
            })
            .collect::<Result<_>>()?,
    };
    if steps.is_empty() {
        return Err(Error::InvalidArgument("no timesteps to plan over".into()));
    }
    let truth_all = test.original_values();
    let obs = test.observations();
    // one block of stations per planned step
    let mut points = Vec::with_capacity(steps.len() * n_st);
    let mut truth = Vec::with_capacity(points.capacity());
    for &k in &steps {
        for s in 0..n_st {
            let i = grid.index[s][k];
            points.push(obs[i].point);
            truth.push(truth_all[i]);
        }
    }
    let cov = model.covariance(&points)?;
    let noise = model.noise_var();

    let mut observed: Vec<usize> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut records = Vec::with_capacity(steps.len());
    for (step, &k) in steps.iter().enumerate() {
        let block: Vec<usize> = (0..n_st).map(|s| step * n_st + s).collect();
        let mut picked: Vec<usize> = Vec::with_capacity(budget);
        for _ in 0..budget {
            let var = conditional_variances(&cov, &observed, &block, noise)?;
            let scores: Vec<Option<f64>> = block
                .iter()
                .zip(&var)
                .map(|(i, v)| (!picked.contains(i)).then_some(*v))
                .collect();
            let p = block[argmax_lowest(&scores)];
            picked.push(p);
            observed.push(p);
            values.push(truth[p]);
        }
        let targets: Vec<usize> = block.iter().copied().filter(|i| !picked.contains(i)).collect();
        let preds = if targets.is_empty() {
            Vec::new()
        } else {
            model.predict(&points, &cov, &observed, &values, &targets)?
        };
        if preds.len() != targets.len() || preds.iter().any(|v| !v.is_finite()) {
            return Err(Error::Optimization(format!(
                "prediction failed at t = {}",
                grid.times[k]
            )));
        }
        let mut sq = 0.0;
        for (t, p) in targets.iter().zip(&preds) {
            sq += (p - truth[*t]).powi(2);
        }
        let rms = if targets.is_empty() {
            0.0
        } else {
            (sq / targets.len() as f64).sqrt()
        };
        let outcomes = block
            .iter()
            .enumerate()
            .map(|(s, i)| StationOutcome {
                station: grid.stations[s],
                observed: picked.contains(i),
                truth: truth[*i],
                prediction: targets.iter().position(|t| t == i).map(|j| preds[j]),
            })
            .collect();
        records.push(StepRecord {
            timestep: grid.times[k],
            selected: picked.iter().map(|i| grid.stations[i - step * n_st]).collect(),
            selected_points: picked.iter().map(|i| points[*i]).collect(),
            outcomes,
            rms,
            observations_so_far: observed.len(),
        });
        log::debug!("plan t={} rms={rms:.6}", grid.times[k]);
    }
    let mean_rms = records.iter().map(|r| r.rms).sum::<f64>() / records.len() as f64;
    Ok(PlanningTrace {
        budget,
        stations: grid.stations.clone(),
        timesteps: steps.iter().map(|k| grid.times[*k]).collect(),
        test_fingerprint: test.fingerprint(),
        steps: records,
        mean_rms,
    })
}

/// Predictive variances of noisy observations at `candidates` given noisy
/// observations at `observed`.
fn conditional_variances(
    cov: &DMatrix<f64>,
    observed: &[usize],
    candidates: &[usize],
    noise: f64,
) -> Result<Vec<f64>> {
    let prior: Vec<f64> = candidates.iter().map(|i| cov[(*i, *i)] + noise).collect();
    if observed.is_empty() {
        return Ok(prior);
    }
    let mut koo = cov.select_rows(observed).select_columns(observed);
    for i in 0..observed.len() {
        koo[(i, i)] += noise;
    }
    let f = factorize(&koo)?;
    let koc = cov.select_rows(observed).select_columns(candidates);
    let v = f.solve_lower(&koc);
    Ok(prior
        .iter()
        .enumerate()
        .map(|(j, p)| p - v.column(j).norm_squared())
        .collect())
}

/// Mean RMS per model plus the per-step series.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<(String, f64)>,
    /// `(label, timestep, rms)`
    pub series: Vec<(String, f64, f64)>,
}

pub fn compare_models(traces: &[(String, PlanningTrace)]) -> Result<ComparisonReport> {
    let Some((_, first)) = traces.first() else {
        return Err(Error::InvalidArgument("no traces to compare".into()));
    };
    for (label, t) in traces {
        if t.timesteps != first.timesteps {
            return Err(Error::InvalidArgument(format!("{label}: different timesteps")));
        }
        if t.budget != first.budget {
            return Err(Error::InvalidArgument(format!("{label}: different budget")));
        }
        if t.stations != first.stations || t.test_fingerprint != first.test_fingerprint {
            return Err(Error::InvalidArgument(format!("{label}: different test data")));
        }
    }
    let rows = traces
        .iter()
        .map(|(l, t)| (l.clone(), t.mean_rms))
        .collect();
    let series = traces
        .iter()
        .flat_map(|(l, t)| t.steps.iter().map(move |s| (l.clone(), s.timestep, s.rms)))
        .collect();
    Ok(ComparisonReport { rows, series })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// `timestep, station_id, observed_flag, truth, prediction`; prediction is
/// empty for observed stations.
pub fn write_trace_csv<W: Write>(trace: &PlanningTrace, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestep", "station_id", "observed_flag", "truth", "prediction"])
        .map_err(csv_err)?;
    for step in &trace.steps {
        for o in &step.outcomes {
            w.write_record([
                step.timestep.to_string(),
                o.station.to_string(),
                u8::from(o.observed).to_string(),
                o.truth.to_string(),
                o.prediction.map(|p| p.to_string()).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

/// `model_label, mean_rms`
pub fn write_summary_csv<W: Write>(report: &ComparisonReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model_label", "mean_rms"]).map_err(csv_err)?;
    for (label, rms) in &report.rows {
        w.write_record([label.clone(), rms.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

/// `model_label, timestep, rms`
pub fn write_series_csv<W: Write>(report: &ComparisonReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model_label", "timestep", "rms"]).map_err(csv_err)?;
    for (label, t, rms) in &report.series {
        w.write_record([label.clone(), t.to_string(), rms.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}
