use std::io::Write;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterTraceRow {
    pub iter: usize,
    pub objective: f64,
    pub grad_or_step_norm: f64,
    pub inner_iters: usize,
    pub seconds: f64,
}

/// Append-only record of an outer optimization run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OuterTrace {
    pub rows: Vec<OuterTraceRow>,
}

impl OuterTrace {
    pub fn push(&mut self, row: OuterTraceRow) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iter,objective,grad_or_step_norm,inner_iters,seconds")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{}", r.iter, r.objective, r.grad_or_step_norm, r.inner_iters, r.seconds)?;
        }
        Ok(())
    }
}
