use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::Config;
use crate::CliError;

/// A CSV cell. Floats print in the shortest form that parses back exactly.
pub enum Cell {
    F(f64),
    U(u64),
    S(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::U(x as u64)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::S(x.to_string())
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::F)
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => format!("{x}"),
            Cell::U(x) => x.to_string(),
            Cell::S(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

/// Writes rows as they are produced so an interrupted sweep keeps its
/// completed points. Every table ends with a `status` column.
pub struct RowSink {
    writer: csv::Writer<File>,
    columns: usize,
    pub rows: usize,
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::new("io", format!("{}: {e}", path.display()))
}

impl RowSink {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self, CliError> {
        let file = File::create(path).map_err(|e| io_error(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        let mut cols: Vec<&str> = header.to_vec();
        cols.push("status");
        writer.write_record(&cols).map_err(|e| io_error(path, e))?;
        writer.flush().map_err(|e| io_error(path, e))?;
        Ok(Self {
            writer,
            columns: cols.len(),
            rows: 0,
        })
    }

    pub fn row(&mut self, cells: Vec<Cell>) -> Result<(), CliError> {
        assert_eq!(cells.len() + 1, self.columns, "row width does not match header");
        let mut rec: Vec<String> = cells.iter().map(Cell::render).collect();
        rec.push("ok".into());
        self.write(rec)?;
        self.rows += 1;
        Ok(())
    }

    /// Marker row: empty data cells and `failed: <kind>: <message>` status.
    pub fn fail(&mut self, err: &CliError) -> Result<(), CliError> {
        let mut rec = vec![String::new(); self.columns - 1];
        rec.push(format!("failed: {}: {}", err.kind, err.message));
        self.write(rec)
    }

    fn write(&mut self, rec: Vec<String>) -> Result<(), CliError> {
        self.writer
            .write_record(&rec)
            .and_then(|_| self.writer.flush().map_err(Into::into))
            .map_err(|e| CliError::new("io", e.to_string()))
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    version: &'a str,
    seed: u64,
    threads: usize,
    output: String,
    started_unix: f64,
    finished_unix: Option<f64>,
    elapsed_seconds: Option<f64>,
    status: &'a str,
    rows: Option<usize>,
    config: &'a Config,
}

pub struct RunRecord {
    path: PathBuf,
    experiment: String,
    output: PathBuf,
    config: Config,
    threads: usize,
    started_unix: f64,
    clock: Instant,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

impl RunRecord {
    /// Writes the manifest with status `running`; call before computing.
    pub fn start(experiment: &str, output: &Path, config: &Config, threads: usize) -> Result<Self, CliError> {
        let rec = Self {
            path: manifest_path(output),
            experiment: experiment.to_string(),
            output: output.to_path_buf(),
            config: config.clone(),
            threads,
            started_unix: unix_now(),
            clock: Instant::now(),
        };
        rec.write("running", None, false)?;
        Ok(rec)
    }

    pub fn finish(&self, status: &str, rows: usize) -> Result<(), CliError> {
        self.write(status, Some(rows), true)
    }

    fn write(&self, status: &str, rows: Option<usize>, done: bool) -> Result<(), CliError> {
        let m = Manifest {
            experiment: &self.experiment,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.config.mc.seed,
            threads: self.threads,
            output: self.output.display().to_string(),
            started_unix: self.started_unix,
            finished_unix: done.then(unix_now),
            elapsed_seconds: done.then(|| self.clock.elapsed().as_secs_f64()),
            status,
            rows,
            config: &self.config,
        };
        let text = serde_json::to_string_pretty(&m).map_err(|e| CliError::new("io", e.to_string()))?;
        std::fs::write(&self.path, text + "\n").map_err(|e| io_error(&self.path, e))
    }
}
