//! Run reports, CSV tables and plot-data files.

use std::fs;
use std::io;
use std::path::Path;

#[derive(Clone, Debug)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(v) => format!("{v:.16e}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

#[derive(Clone, Debug)]
pub struct Table {
    pub file: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(file: &str, header: &[&'static str]) -> Self {
        Self { file: file.to_string(), header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Whitespace-separated series with `#` header lines.
#[derive(Clone, Debug)]
pub struct PlotSeries {
    pub file: String,
    pub title: String,
    pub columns: Vec<(&'static str, &'static str)>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn pass(&self) -> bool {
        self.residual <= self.tolerance
    }
}

#[derive(Debug, Default)]
pub struct RunReport {
    pub checks: Vec<Check>,
    /// Reported quantities without a tolerance.
    pub values: Vec<(String, f64)>,
    pub tables: Vec<Table>,
    pub plots: Vec<PlotSeries>,
}

impl RunReport {
    pub fn check(&mut self, name: impl Into<String>, residual: f64, tolerance: f64) {
        // NaN residuals must fail.
        let residual = if residual.is_nan() { f64::INFINITY } else { residual };
        self.checks.push(Check { name: name.into(), residual, tolerance });
    }

    pub fn value(&mut self, name: impl Into<String>, v: f64) {
        self.values.push((name.into(), v));
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::pass)
    }
}

fn write_table(dir: &Path, t: &Table) -> io::Result<()> {
    let mut w = csv::Writer::from_path(dir.join(&t.file))?;
    w.write_record(&t.header)?;
    for row in &t.rows {
        w.write_record(row.iter().map(Cell::render))?;
    }
    w.flush()
}

fn write_plot(dir: &Path, p: &PlotSeries) -> io::Result<()> {
    let mut s = format!("# {}\n", p.title);
    let names: Vec<String> = p.columns.iter().map(|(n, u)| if u.is_empty() { n.to_string() } else { format!("{n} [{u}]") }).collect();
    s.push_str(&format!("# columns: {}\n", names.join(" | ")));
    for row in &p.rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    fs::write(dir.join(&p.file), s)
}

/// Writes `scenario.toml`, `report.csv`, every table and every plot series.
pub fn emit(dir: &Path, scenario_text: &str, report: &RunReport) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("scenario.toml"), scenario_text)?;
    let mut summary = Table::new("report.csv", &["check", "residual", "tolerance", "pass"]);
    for c in &report.checks {
        summary.push(vec![c.name.as_str().into(), c.residual.into(), c.tolerance.into(), if c.pass() { "true" } else { "false" }.into()]);
    }
    for (name, v) in &report.values {
        summary.push(vec![name.as_str().into(), (*v).into(), "".into(), "".into()]);
    }
    write_table(dir, &summary)?;
    for t in &report.tables {
        write_table(dir, t)?;
    }
    for p in &report.plots {
        write_plot(dir, p)?;
    }
    Ok(())
}
