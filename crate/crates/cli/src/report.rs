//! Plot data across runs: per-step RMS in long format and mean RMS against m.

use std::fs;
use std::path::{Path, PathBuf};

use nostill::pipeline::{NOSTILL_LABEL, STATIONARY_LABEL};
use serde::Deserialize;

use crate::error::CliError;
use crate::run::{Manifest, SERIES_CSV, SUMMARY_CSV};

pub const LONG_CSV: &str = "rms_long.csv";
pub const MEAN_VS_M_CSV: &str = "mean_rms_vs_m.csv";

#[derive(Debug, Deserialize)]
struct SeriesRow {
    model_label: String,
    timestep: f64,
    rms: f64,
}

#[derive(Debug, Deserialize)]
struct SummaryRow {
    model_label: String,
    mean_rms: f64,
}

struct RunData {
    dir: PathBuf,
    manifest: Manifest,
    series: Vec<SeriesRow>,
    summary: Vec<SummaryRow>,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn load_run(dir: &Path) -> Result<RunData, CliError> {
    let manifest = Manifest::read(dir)?;
    if manifest.status != "ok" {
        return Err(CliError::Config(format!(
            "{}: run did not complete ({})",
            dir.display(),
            manifest.status
        )));
    }
    let summary: Vec<SummaryRow> = read_rows(&dir.join(SUMMARY_CSV))?;
    if summary.is_empty() {
        return Err(CliError::Config(format!("{}: empty summary", dir.display())));
    }
    Ok(RunData {
        dir: dir.to_path_buf(),
        series: read_rows(&dir.join(SERIES_CSV))?,
        summary,
        manifest,
    })
}

/// What must agree between runs for their RMS values to be comparable.
fn test_key(m: &Manifest) -> (Option<String>, usize, Option<Vec<f64>>) {
    (
        m.test_fingerprint.clone(),
        m.config.planning.budget,
        m.config.planning.timesteps.clone(),
    )
}

fn mean_of(run: &RunData, label: &str) -> String {
    run.summary
        .iter()
        .find(|r| r.model_label == label)
        .map(|r| r.mean_rms.to_string())
        .unwrap_or_default()
}

/// Writes both plot-data files into `out` and returns how many runs were
/// flagged as not comparable with the first one.
pub fn report(dirs: &[PathBuf], out: &Path) -> Result<usize, CliError> {
    if dirs.is_empty() {
        return Err(CliError::Config("report needs at least one run directory".into()));
    }
    let runs = dirs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>, _>>()?;
    let key = test_key(&runs[0].manifest);
    let flags: Vec<bool> = runs.iter().map(|r| test_key(&r.manifest) != key).collect();
    for (r, _) in runs.iter().zip(&flags).filter(|(_, f)| **f) {
        log::warn!(
            target: "report",
            "{} was evaluated on a different test set or budget than {}",
            r.dir.display(),
            runs[0].dir.display()
        );
    }
    let m_text = |r: &RunData| r.manifest.m.map(|m| m.to_string()).unwrap_or_default();
    let csv_err = |e: csv::Error| CliError::Config(e.to_string());
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;

    let path = out.join(LONG_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["run", "model_label", "m", "timestep", "rms", "mismatch"])
        .map_err(csv_err)?;
    for (i, (r, flag)) in runs.iter().zip(&flags).enumerate() {
        for s in &r.series {
            w.write_record([
                i.to_string(),
                s.model_label.clone(),
                m_text(r),
                s.timestep.to_string(),
                s.rms.to_string(),
                u8::from(*flag).to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by_key(|&i| runs[i].manifest.m);
    let path = out.join(MEAN_VS_M_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["run", "m", "nostill_mean_rms", "stationary_mean_rms", "mismatch"])
        .map_err(csv_err)?;
    for i in order {
        let r = &runs[i];
        w.write_record([
            i.to_string(),
            m_text(r),
            mean_of(r, NOSTILL_LABEL),
            mean_of(r, STATIONARY_LABEL),
            u8::from(flags[i]).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(flags.iter().filter(|f| **f).count())
}
