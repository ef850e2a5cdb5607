//! On-disk result bundles: a JSON summary, field CSVs, trace CSVs and the
//! observation sets, plus a content hash that ignores wall-clock times.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::metrics::FieldErrors;
use crate::error::{MfgError, Result};
use crate::inverse::{OuterMethod, OuterTrace};
use crate::models::MfgProblem;
use crate::rkhs::{ObservationSet, Point};
use crate::stationary::StationarySolver;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub solver: StationarySolver,
    pub lambda: Option<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub solver: StationarySolver,
    pub method: OuterMethod,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub lambda: Option<f64>,
    pub errors: FieldErrors,
    /// Inner iterations summed over accepted outer iterates.
    pub inner_iterations: usize,
    pub seconds: f64,
}

impl RunSummary {
    pub fn label(&self) -> String {
        format!("{}_{}", self.solver, self.method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub preset: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// Quadrature spacings for m and u fields, and for V.
    pub field_spacings: Vec<f64>,
    pub cost_spacings: Vec<f64>,
    pub reference: ReferenceSummary,
    pub runs: Vec<RunSummary>,
    pub fields: Vec<String>,
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldRecord {
    pub name: String,
    /// Grid metadata written as the leading `#` line.
    pub meta: String,
    pub points: Vec<Point>,
    pub values: Vec<f64>,
}

impl FieldRecord {
    /// Grid-node samples; `values` has one block per time level when it is a
    /// space-time field.
    pub fn on_grid(name: &str, problem: &MfgProblem, values: Vec<f64>) -> Self {
        let g = &problem.grid;
        let n = g.len();
        let levels = values.len() / n.max(1);
        let dt = problem.time.as_ref().map_or(0.0, |t| t.dt());
        let points = (0..levels)
            .flat_map(|k| (0..n).map(move |i| (k, i)))
            .map(|(k, i)| Point::spacetime(g.coords(i), k as f64 * dt))
            .collect();
        Self {
            name: name.to_string(),
            meta: format!("dim={} n={} levels={levels} dt={dt:?}", g.dim(), g.n()),
            points,
            values,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# {}", self.meta)?;
        writeln!(w, "x,y,t,value")?;
        for (p, v) in self.points.iter().zip(&self.values) {
            writeln!(w, "{:?},{:?},{:?},{:?}", p.x[0], p.x[1], p.t, v)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(name: &str, r: R) -> Result<Self> {
        let mut meta = String::new();
        let mut points = Vec::new();
        let mut values = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if let Some(m) = line.strip_prefix("# ") {
                meta = m.to_string();
                continue;
            }
            if line.is_empty() || line.starts_with("x,") {
                continue;
            }
            let p: Vec<f64> = line
                .split(',')
                .map(|s| s.parse::<f64>().map_err(|e| MfgError::Serde(format!("bad number '{s}': {e}"))))
                .collect::<Result<_>>()?;
            if p.len() != 4 {
                return Err(MfgError::Serde(format!("expected 4 columns, got {}", p.len())));
            }
            points.push(Point::spacetime([p[0], p[1]], p[2]));
            values.push(p[3]);
        }
        Ok(Self {
            name: name.to_string(),
            meta,
            points,
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultBundle {
    pub summary: Summary,
    pub fields: Vec<FieldRecord>,
    pub traces: Vec<(String, OuterTrace)>,
    pub m_obs: ObservationSet,
    pub v_obs: ObservationSet,
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    buf
}

impl ResultBundle {
    pub fn field(&self, name: &str) -> Option<&FieldRecord> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// SHA-256 over the summary (timings and hash cleared), fields and observations.
    pub fn compute_hash(&self) -> String {
        let mut s = self.summary.clone();
        s.content_hash.clear();
        for r in &mut s.runs {
            r.seconds = 0.0;
        }
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&s).expect("summary serializes"));
        for f in &self.fields {
            h.update(f.name.as_bytes());
            h.update(to_bytes(|b| f.write_csv(b)));
        }
        h.update(to_bytes(|b| self.m_obs.write_csv(b)));
        h.update(to_bytes(|b| self.v_obs.write_csv(b)));
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn seal(&mut self) {
        self.summary.fields = self.fields.iter().map(|f| f.name.clone()).collect();
        self.summary.content_hash = self.compute_hash();
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("fields"))?;
        fs::create_dir_all(dir.join("traces"))?;
        let json = serde_json::to_string_pretty(&self.summary).map_err(|e| MfgError::Serde(e.to_string()))?;
        fs::write(dir.join("summary.json"), json)?;
        for f in &self.fields {
            f.write_csv(BufWriter::new(fs::File::create(dir.join("fields").join(format!("{}.csv", f.name)))?))?;
        }
        for (name, t) in &self.traces {
            t.write_csv(BufWriter::new(fs::File::create(dir.join("traces").join(format!("{name}.csv")))?))?;
        }
        self.m_obs.write_csv(BufWriter::new(fs::File::create(dir.join("m_obs.csv"))?))?;
        self.v_obs.write_csv(BufWriter::new(fs::File::create(dir.join("v_obs.csv"))?))?;
        Ok(())
    }

    /// Read a bundle back. Traces are not reloaded.
    pub fn read(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("summary.json"))?;
        let summary: Summary = serde_json::from_str(&text).map_err(|e| MfgError::Serde(e.to_string()))?;
        let fields = summary
            .fields
            .iter()
            .map(|name| FieldRecord::read_csv(name, BufReader::new(fs::File::open(dir.join("fields").join(format!("{name}.csv")))?)))
            .collect::<Result<_>>()?;
        let m_obs = ObservationSet::read_csv(BufReader::new(fs::File::open(dir.join("m_obs.csv"))?))?;
        let v_obs = ObservationSet::read_csv(BufReader::new(fs::File::open(dir.join("v_obs.csv"))?))?;
        Ok(Self {
            summary,
            fields,
            traces: Vec::new(),
            m_obs,
            v_obs,
        })
    }
}
