//! Artifact files: CSV tables with a provenance comment line, one gnuplot
//! script per table, and a JSON summary.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::{io_at, LabResult};

pub const SCHEMA_VERSION: u32 = 1;
pub const GIT_HASH: &str = env!("RWRE_GIT_HASH");

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub schema: u32,
    pub git: String,
    pub config_hash: String,
    pub master_seed: u64,
}

impl Provenance {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        Self { schema: SCHEMA_VERSION, git: GIT_HASH.into(), config_hash: cfg.hash(), master_seed: cfg.master_seed }
    }

    fn comment(&self) -> String {
        format!("# rwre schema={} git={} config={} seed={}\n", self.schema, self.git, self.config_hash, self.master_seed)
    }
}

/// How a table's plot script draws it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Plot {
    Lines,
    LogLog,
    Points,
}

pub struct Artifacts {
    dir: PathBuf,
    provenance: Provenance,
    written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn create(dir: &Path, provenance: Provenance) -> LabResult<Self> {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
        Ok(Self { dir: dir.to_path_buf(), provenance, written: Vec::new() })
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Writes `<name>.csv` and `<name>.gp`.
    pub fn table<R: AsRef<[String]>>(&mut self, name: &str, header: &[&str], rows: &[R], plot: Plot) -> LabResult<()> {
        let path = self.dir.join(format!("{name}.csv"));
        let mut buf = self.provenance.comment().into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for r in rows {
                w.write_record(r.as_ref())?;
            }
            w.flush().map_err(io_at(&path))?;
        }
        fs::write(&path, buf).map_err(io_at(&path))?;
        self.written.push(path);
        self.plot_script(name, header, plot)
    }

    fn plot_script(&mut self, name: &str, header: &[&str], plot: Plot) -> LabResult<()> {
        let path = self.dir.join(format!("{name}.gp"));
        let style = match plot {
            Plot::Lines => "linespoints",
            Plot::LogLog => "linespoints",
            Plot::Points => "points",
        };
        let mut s = String::new();
        s.push_str("set datafile separator ','\nset key autotitle columnhead\n");
        s.push_str(&format!("set terminal pngcairo size 800,600\nset output '{name}.png'\n"));
        if plot == Plot::LogLog {
            s.push_str("set logscale xy\n");
        }
        s.push_str(&format!("set xlabel '{}'\n", header.first().copied().unwrap_or("x")));
        let series: Vec<String> = (2..=header.len().max(2))
            .take(3)
            .map(|c| format!("'{name}.csv' using 1:{c} with {style}"))
            .collect();
        s.push_str(&format!("plot {}\n", series.join(", ")));
        fs::write(&path, s).map_err(io_at(&path))?;
        self.written.push(path);
        Ok(())
    }

    /// Writes `summary.json` with the provenance block merged in.
    pub fn summary(&mut self, experiment: &str, body: Value) -> LabResult<()> {
        let path = self.dir.join("summary.json");
        let doc = json!({
            "experiment": experiment,
            "provenance": self.provenance,
            "result": body,
        });
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        fs::write(&path, text).map_err(io_at(&path))?;
        self.written.push(path);
        Ok(())
    }
}

pub fn f(x: f64) -> String {
    format!("{x}")
}
