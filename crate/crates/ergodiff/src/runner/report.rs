use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

/// Columns to draw: `y` against `x`, one series per `y` column and, when
/// `group` is set, per distinct group value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure {
    pub x: String,
    pub y: Vec<String>,
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub figure: Option<Figure>,
    /// How each row's random streams derive from the run seed.
    pub streams: String,
}

impl Table {
    pub fn new(name: &str, columns: Vec<String>, streams: impl Into<String>) -> Self {
        Table {
            name: name.into(),
            columns,
            rows: Vec::new(),
            figure: None,
            streams: streams.into(),
        }
    }

    pub fn with_figure(mut self, x: &str, y: &[&str], group: Option<&str>) -> Self {
        self.figure = Some(Figure {
            x: x.into(),
            y: y.iter().map(|s| s.to_string()).collect(),
            group: group.map(Into::into),
        });
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::invalid(format!("table {} has no column {name}", self.name)))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.col(name)?;
        Ok(self.rows.iter().map(|r| r[c]).collect())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long format `series, x, y`.
    pub fn write_plot_csv<W: Write>(&self, writer: W) -> Result<()> {
        let fig = self.figure.as_ref().ok_or_else(|| Error::invalid(format!("table {} has no figure", self.name)))?;
        let xc = self.col(&fig.x)?;
        let ycs = fig.y.iter().map(|y| self.col(y)).collect::<Result<Vec<_>>>()?;
        let gc = fig.group.as_deref().map(|g| self.col(g)).transpose()?;
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["series", "x", "y"])?;
        for (name, &yc) in fig.y.iter().zip(&ycs) {
            for row in &self.rows {
                let series = match (gc, &fig.group) {
                    (Some(g), Some(gname)) => format!("{name}[{gname}={}]", row[g]),
                    _ => name.clone(),
                };
                w.write_record([series, row[xc].to_string(), row[yc].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            value,
            bound,
            passed: value <= bound,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            value,
            bound,
            passed: value >= bound,
        }
    }

    pub fn above(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            value,
            bound,
            passed: value > bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub crate_version: String,
    pub wall_time_s: f64,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub tables: Vec<Table>,
    /// Experiment-specific scalars.
    pub summary: serde_json::Value,
    pub checks: Vec<Check>,
    pub metadata: Metadata,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "experiment": self.config.experiment.kind(),
            "config": self.config,
            "seed": self.metadata.seed,
            "metadata": self.metadata,
            "summary": self.summary,
            "checks": self.checks,
            "passed": self.passed(),
            "tables": self.tables.iter().map(|t| serde_json::json!({
                "name": t.name,
                "file": format!("{}.csv", t.name),
                "plot_file": t.figure.as_ref().map(|_| format!("{}.plot.csv", t.name)),
                "columns": t.columns,
                "rows": t.rows.len(),
                "streams": t.streams,
            })).collect::<Vec<_>>(),
        })
    }
}

fn create_new(path: &Path) -> Result<BufWriter<File>> {
    let f = OpenOptions::new().write(true).create_new(true).open(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    Ok(BufWriter::new(f))
}

/// One CSV per table, a long-format `<name>.plot.csv` per figure and
/// `report.json`. Files are write-once: the call fails before writing
/// anything if any target already exists.
pub fn emit_report(report: &Report, output_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut targets = Vec::new();
    for t in &report.tables {
        if t.name.is_empty() || t.name.contains(['/', '\\']) {
            return Err(Error::invalid(format!("bad table name {:?}", t.name)));
        }
        targets.push(output_dir.join(format!("{}.csv", t.name)));
        if t.figure.is_some() {
            targets.push(output_dir.join(format!("{}.plot.csv", t.name)));
        }
    }
    targets.push(output_dir.join("report.json"));
    if let Some(p) = targets.iter().find(|p| p.exists()) {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::AlreadyExists,
            format!("{} already exists; outputs are write-once", p.display()),
        )));
    }
    fs::create_dir_all(output_dir)?;
    for t in &report.tables {
        let mut w = create_new(&output_dir.join(format!("{}.csv", t.name)))?;
        t.write_csv(&mut w)?;
        w.flush()?;
        if t.figure.is_some() {
            let mut w = create_new(&output_dir.join(format!("{}.plot.csv", t.name)))?;
            t.write_plot_csv(&mut w)?;
            w.flush()?;
        }
    }
    let mut w = create_new(&output_dir.join("report.json"))?;
    serde_json::to_writer_pretty(&mut w, &report.to_json())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new("e", vec!["a".into(), "b".into()], "");
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(buf, b"a,b\n");
    }

    #[test]
    fn long_format_expands_series_and_groups() {
        let mut t = Table::new("c", vec!["eps".into(), "t".into(), "d".into()], "").with_figure("eps", &["d"], Some("t"));
        t.push(vec![0.4, 1.0, 0.1]);
        t.push(vec![0.2, 1.0, 0.05]);
        let mut buf = Vec::new();
        t.write_plot_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "series,x,y\nd[t=1],0.4,0.1\nd[t=1],0.2,0.05\n");
    }

    #[test]
    fn checks_compare_inclusively_or_strictly() {
        assert!(Check::at_most("a", 1.0, 1.0).passed);
        assert!(Check::at_least("a", 1.0, 1.0).passed);
        assert!(!Check::above("a", 1.0, 1.0).passed);
    }
}
