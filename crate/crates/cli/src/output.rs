//! File writers. Floats are written with 17 significant digits so that
//! every value round-trips exactly.

use std::path::{Path, PathBuf};

use serde::Serialize;
use varinfer::nn::{fmt_f64, Matrix};
use varinfer::trace::RunTrace;

use crate::error::CliError;

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(OutDir { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.path(name);
        std::fs::write(&path, contents).map_err(|e| CliError::io(path, e))
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
        text.push('\n');
        self.write(name, &text)
    }
}

pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let cols: Vec<&str> = header.iter().map(|h| h.as_ref()).collect();
        Csv {
            text: cols.join(",") + "\n",
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn float_row(&mut self, lead: Option<usize>, values: &[f64]) {
        let mut fields: Vec<String> = lead.map(|i| i.to_string()).into_iter().collect();
        fields.extend(values.iter().map(|v| fmt_f64(*v)));
        self.row(&fields);
    }

    pub fn finish(self) -> String {
        self.text
    }
}

/// One row per record: the iteration index, then each metric.
pub fn trace_csv(trace: &RunTrace, index: &str, metrics: &[&str]) -> String {
    let mut header = vec![index];
    header.extend_from_slice(metrics);
    let mut csv = Csv::new(&header);
    for r in &trace.records {
        let values: Vec<f64> = metrics.iter().map(|m| r.metric(m).unwrap_or(f64::NAN)).collect();
        csv.float_row(Some(r.iteration), &values);
    }
    csv.finish()
}

/// Rows of a matrix under columns `prefix0, prefix1, …`, led by a row index.
pub fn matrix_csv(m: &Matrix, prefix: &str) -> String {
    let mut header = vec!["row".to_string()];
    header.extend((0..m.cols()).map(|c| format!("{prefix}{c}")));
    let mut csv = Csv::new(&header);
    for r in 0..m.rows() {
        csv.float_row(Some(r), m.row(r));
    }
    csv.finish()
}
