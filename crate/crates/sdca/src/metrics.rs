//! Per-epoch measurement and reporting: wall-clock timing, primal/dual/gap,
//! relative model change, test loss.

use std::io::{self, Write};

use crate::data::Dataset;
use crate::objective::{self, LossKind, Objective};
use crate::solver::{Model, SolverConfig};
use crate::topology::SystemTopology;
use crate::{Error, Result};

pub const CSV_HEADER: &str = "epoch,time_s,primal,dual,gap,rel_change,converged";

#[derive(Clone, Copy, Debug)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Cumulative training wall time, excluding objective evaluation.
    pub time_s: f64,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub rel_change: f64,
    pub converged: bool,
}

impl EpochRecord {
    /// Field-wise equality treating NaN == NaN (objective columns are NaN
    /// when per-epoch evaluation is disabled).
    pub fn bit_eq(&self, other: &EpochRecord) -> bool {
        let feq = |a: f64, b: f64| a.to_bits() == b.to_bits();
        self.epoch == other.epoch
            && feq(self.time_s, other.time_s)
            && feq(self.primal, other.primal)
            && feq(self.dual, other.dual)
            && feq(self.gap, other.gap)
            && feq(self.rel_change, other.rel_change)
            && self.converged == other.converged
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub config_echo: SolverConfig,
    pub topology_echo: SystemTopology,
    pub final_test_loss: Option<f64>,
}

impl TrainReport {
    pub fn new(config: SolverConfig, topology: SystemTopology) -> Self {
        TrainReport {
            epochs: Vec::new(),
            config_echo: config,
            topology_echo: topology,
            final_test_loss: None,
        }
    }

    pub fn converged(&self) -> bool {
        self.epochs.last().is_some_and(|r| r.converged)
    }

    pub fn total_time_s(&self) -> f64 {
        self.epochs.last().map_or(0.0, |r| r.time_s)
    }
}

/// Mean unregularized loss of `w` over a held-out set (logistic: log-loss;
/// ridge: half squared error).
pub fn evaluate_test_loss(w: &[f64], test: &Dataset, obj: &Objective) -> Result<f64> {
    if w.len() != test.d() {
        return Err(Error::DimensionMismatch {
            expected: test.d(),
            got: w.len(),
        });
    }
    if test.n() == 0 {
        return Err(Error::InvalidData("empty test set".into()));
    }
    let sum: f64 = (0..test.n())
        .map(|j| {
            let dot = test.col(j).dot(w);
            let y = test.label(j);
            match obj.kind {
                LossKind::Logistic => objective::log1p_exp(-y * dot),
                LossKind::Ridge => 0.5 * (dot - y) * (dot - y),
            }
        })
        .sum();
    Ok(sum / test.n() as f64)
}

/// Append one epoch record. Objective values are computed here (a full data
/// pass) only when requested; the caller's epoch clock must already exclude
/// this call.
#[allow(clippy::too_many_arguments)]
pub fn record_epoch(
    report: &mut TrainReport,
    cumulative_time_s: f64,
    model: &Model,
    ds: &Dataset,
    obj: &Objective,
    rel_change: f64,
    converged: bool,
    eval_objective: bool,
) -> Result<()> {
    if let Some(last) = report.epochs.last() {
        debug_assert!(cumulative_time_s >= last.time_s, "clock went backwards");
    }
    let (primal, dual, gap) = if eval_objective {
        let p = objective::primal_value(&model.w, ds, obj)?;
        let d = objective::dual_value(&model.alpha, &model.w, ds, obj)?;
        (p, d, p - d)
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };
    report.epochs.push(EpochRecord {
        epoch: report.epochs.len() + 1,
        time_s: cumulative_time_s,
        primal,
        dual,
        gap,
        rel_change,
        converged,
    });
    Ok(())
}

/// Write the per-epoch records as CSV. Reals use Rust's shortest
/// round-trip decimal formatting, so parsing the output reproduces the exact
/// values.
pub fn write_csv<W: Write>(records: &[EpochRecord], out: &mut W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch, r.time_s, r.primal, r.dual, r.gap, r.rel_change, r.converged
        )?;
    }
    Ok(())
}

pub fn to_csv_string(records: &[EpochRecord]) -> String {
    let mut buf = Vec::new();
    write_csv(records, &mut buf).expect("in-memory write cannot fail");
    String::from_utf8(buf).expect("CSV is ASCII")
}

pub fn parse_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidData("empty CSV".into()))?;
    if header.trim() != CSV_HEADER {
        return Err(Error::InvalidData(format!("unexpected CSV header `{header}`")));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::InvalidData(format!(
                "CSV line {}: expected 7 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let fnum = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| Error::InvalidData(format!("CSV line {}: bad real `{s}`", i + 2)))
        };
        records.push(EpochRecord {
            epoch: fields[0]
                .trim()
                .parse()
                .map_err(|_| Error::InvalidData(format!("CSV line {}: bad epoch", i + 2)))?,
            time_s: fnum(fields[1])?,
            primal: fnum(fields[2])?,
            dual: fnum(fields[3])?,
            gap: fnum(fields[4])?,
            rel_change: fnum(fields[5])?,
            converged: fields[6]
                .trim()
                .parse()
                .map_err(|_| Error::InvalidData(format!("CSV line {}: bad flag", i + 2)))?,
        });
    }
    Ok(records)
}
