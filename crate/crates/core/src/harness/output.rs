use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::RateFit;

pub const SCHEMA_LINE: &str = "# schema_version=1";
pub const RESULT_HEADER: &str = "experiment,model,n,rep,seed,metric,value,wall_ms";

/// A size or replicate index, or `all` for aggregate rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Index {
    At(u64),
    All,
}

impl fmt::Display for Index {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Index::At(v) => write!(f, "{v}"),
            Index::All => f.write_str("all"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub model: String,
    pub n: Index,
    pub rep: Index,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    pub wall_ms: u64,
}

pub fn write_results_csv<W: Write>(mut w: W, rows: &[ResultRow]) -> Result<()> {
    writeln!(w, "{SCHEMA_LINE}")?;
    writeln!(w, "{RESULT_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.experiment, r.model, r.n, r.rep, r.seed, r.metric, r.value, r.wall_ms
        )?;
    }
    Ok(())
}

/// Fitted log-log rate with the theoretical reference exponent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
    pub theoretical_reference: f64,
    pub pass: bool,
}

impl RateReport {
    pub fn from_fit(fit: Option<RateFit>) -> Self {
        RateReport {
            slope: fit.map(|f| f.slope),
            intercept: fit.map(|f| f.intercept),
            r_squared: fit.map(|f| f.r_squared),
            theoretical_reference: -0.5,
            pass: fit.is_some_and(|f| f.slope < 0.0),
        }
    }
}

/// Everything an experiment produced, before it is written out.
#[derive(Clone, Debug, Default)]
pub struct ExperimentOutput {
    pub csv_name: String,
    pub rows: Vec<ResultRow>,
    pub reports: Vec<(String, RateReport)>,
    /// Auxiliary files (relative path, contents).
    pub files: Vec<(String, Vec<u8>)>,
}

impl ExperimentOutput {
    /// First row matching `(n, rep, metric)`.
    pub fn value(&self, n: Index, rep: Index, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.n == n && r.rep == rep && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn report(&self, name: &str) -> Option<&RateReport> {
        self.reports.iter().find(|(k, _)| k == name).map(|(_, r)| r)
    }

    /// Writes every file under `dir` and returns the paths written.
    pub fn persist(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        if !self.csv_name.is_empty() {
            let path = dir.join(&self.csv_name);
            let mut buf = Vec::new();
            write_results_csv(&mut buf, &self.rows)?;
            std::fs::write(&path, buf)?;
            written.push(path);
        }
        for (name, report) in &self.reports {
            let path = dir.join(name);
            let mut text = serde_json::to_string_pretty(report).expect("report serializes");
            text.push('\n');
            std::fs::write(&path, text)?;
            written.push(path);
        }
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&path, bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}
