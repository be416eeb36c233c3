//! Batch runner for the `spherical-tap` experiments.
//!
//! A run reads one JSON configuration, evaluates the experiment grid on a
//! rayon pool and writes `{experiment}.csv`, `manifest.json`, an optional
//! `{experiment}.svg` and, when any row assertion fails, `failures.txt`.

pub mod config;
pub mod experiments;
pub mod svg;

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use config::{ConfigError, ExperimentConfig};
use experiments::{fmt_float, plot_columns, run_experiment, Cell, Table};

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

/// Contents of `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub csv: String,
    pub svg: Option<String>,
    pub rows: usize,
    pub failures: usize,
    pub wall_time_seconds: f64,
    pub threads: usize,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub manifest: Manifest,
    pub output_dir: PathBuf,
    pub failures: Vec<String>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Io { path: PathBuf, source: io::Error },
    ThreadPool(String),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => e.fmt(f),
            RunError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            RunError::ThreadPool(e) => write!(f, "cannot start worker pool: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

fn cell_text(c: &Cell) -> String {
    match c {
        Cell::Float(x) => fmt_float(*x),
        Cell::Int(i) => format!("{i}"),
        Cell::Bool(b) => format!("{b}"),
        Cell::Empty => String::new(),
    }
}

/// CSV text of a table: header line then one line per row, `\n` endings.
pub fn to_csv(table: &Table) -> String {
    let mut out = table.header.join(",");
    out.push('\n');
    for row in &table.rows {
        out.push_str(&row.iter().map(cell_text).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

/// One series per distinct value of the grouping columns.
pub fn plot_series(experiment: config::Experiment, table: &Table) -> Vec<svg::Series> {
    let (x, y, groups) = plot_columns(experiment);
    let (Some(xi), Some(yi)) = (table.column(x), table.column(y)) else {
        return vec![];
    };
    let gi: Vec<usize> = groups.iter().filter_map(|g| table.column(g)).collect();
    let mut series: Vec<svg::Series> = vec![];
    for row in &table.rows {
        let label = gi
            .iter()
            .map(|&i| format!("{}={}", table.header[i], cell_text(&row[i])))
            .collect::<Vec<_>>()
            .join(" ");
        let (Some(px), Some(py)) = (row[xi].as_f64(), row[yi].as_f64()) else {
            continue;
        };
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push((px, py)),
            None => series.push(svg::Series {
                label,
                points: vec![(px, py)],
            }),
        }
    }
    for s in &mut series {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    series
}

fn write(path: &Path, contents: &str) -> Result<(), RunError> {
    fs::write(path, contents).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Validates `config`, runs it on `threads` workers and writes the outputs.
///
/// Row assertion failures do not make this an error; they are listed in the
/// report and in `failures.txt`.
pub fn run(config: &ExperimentConfig, threads: usize) -> Result<RunReport, RunError> {
    config.validate()?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| RunError::ThreadPool(e.to_string()))?;
    let table = pool.install(|| run_experiment(config));
    let threads = pool.current_num_threads();

    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|source| RunError::Io {
        path: dir.clone(),
        source,
    })?;
    let name = config.experiment.name();
    let csv = format!("{name}.csv");
    write(&dir.join(&csv), &to_csv(&table))?;
    let svg = if config.emit_svg {
        let (x, y, _) = plot_columns(config.experiment);
        let file = format!("{name}.svg");
        write(
            &dir.join(&file),
            &svg::line_plot(name, x, y, &plot_series(config.experiment, &table)),
        )?;
        Some(file)
    } else {
        None
    };
    let failures_path = dir.join("failures.txt");
    if table.failures.is_empty() {
        if failures_path.exists() {
            fs::remove_file(&failures_path).map_err(|source| RunError::Io {
                path: failures_path.clone(),
                source,
            })?;
        }
    } else {
        write(&failures_path, &(table.failures.join("\n") + "\n"))?;
    }
    let manifest = Manifest {
        experiment: name.to_string(),
        version: VERSION.to_string(),
        config: config.clone(),
        csv,
        svg,
        rows: table.rows.len(),
        failures: table.failures.len(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        threads,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write(&dir.join("manifest.json"), &json)?;
    Ok(RunReport {
        manifest,
        output_dir: dir.clone(),
        failures: table.failures,
    })
}
