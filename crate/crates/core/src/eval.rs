//! Scoring of effect reports against ground truth, Monte Carlo aggregation,
//! and bucketing of replications by effect heterogeneity.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::GroundTruth;
use crate::error::{Error, Result};
use crate::report::EffectReport;
use crate::scalar::Real;

pub const STATUS_OK: &str = "ok";

/// One estimator on one replication. Timing lives elsewhere so result files
/// stay byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub estimator: String,
    pub scenario: String,
    pub replication: usize,
    /// Signed ATE error, estimate minus truth.
    pub ate_error: f64,
    pub ate_covered: bool,
    pub ate_length: f64,
    pub cate_rmse: f64,
    pub cate_cover: f64,
    pub cate_length: f64,
    pub relative_sd: f64,
    /// `ok`, or the failure message.
    pub status: String,
}

impl MetricsRow {
    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }

    /// Placeholder row for an estimator that errored.
    pub fn failure(estimator: &str, scenario: &str, replication: usize, relative_sd: f64, message: &str) -> Self {
        MetricsRow {
            estimator: estimator.into(),
            scenario: scenario.into(),
            replication,
            ate_error: f64::NAN,
            ate_covered: false,
            ate_length: f64::NAN,
            cate_rmse: f64::NAN,
            cate_cover: f64::NAN,
            cate_length: f64::NAN,
            relative_sd,
            status: format!("failed: {message}"),
        }
    }
}

pub fn score_replication<T: Real>(
    report: &EffectReport<T>,
    truth: &GroundTruth<T>,
    scenario: &str,
    replication: usize,
) -> Result<MetricsRow> {
    let n = truth.n();
    if report.n() != n {
        return Err(Error::Schema(format!("report has {} units, truth has {n}", report.n())));
    }
    if n == 0 {
        return Err(Error::Precondition("cannot score an empty replication".into()));
    }
    let tau: Vec<f64> = truth.tau.iter().map(|t| t.as_f64()).collect();
    let ate_true = tau.iter().sum::<f64>() / n as f64;
    let (mut sse, mut hit, mut width) = (0.0, 0usize, 0.0);
    for (c, &t) in report.cate.iter().zip(&tau) {
        let c = c.map(|v| v.as_f64());
        sse += (c.mean - t).powi(2);
        hit += usize::from(c.lower <= t && t <= c.upper);
        width += c.length();
    }
    let ate = report.ate.map(|v| v.as_f64());
    Ok(MetricsRow {
        estimator: report.estimator.clone(),
        scenario: scenario.into(),
        replication,
        ate_error: ate.mean - ate_true,
        ate_covered: ate.lower <= ate_true && ate_true <= ate.upper,
        ate_length: ate.length(),
        cate_rmse: (sse / n as f64).sqrt(),
        cate_cover: hit as f64 / n as f64,
        cate_length: width / n as f64,
        relative_sd: truth.relative_sd().as_f64(),
        status: STATUS_OK.into(),
    })
}

/// One (estimator, scenario) cell of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub estimator: String,
    pub scenario: String,
    pub ate_rmse: f64,
    pub ate_cover: f64,
    pub ate_length: f64,
    pub cate_rmse: f64,
    pub cate_cover: f64,
    pub cate_length: f64,
    pub replications: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregateTable {
    pub rows: Vec<AggregateRow>,
}

impl AggregateTable {
    pub fn get(&self, estimator: &str, scenario: &str) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.scenario == scenario)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_csv_rows(w, &self.rows)
    }
}

fn aggregate_cell(estimator: &str, scenario: &str, rows: &[&MetricsRow]) -> AggregateRow {
    let ok: Vec<&&MetricsRow> = rows.iter().filter(|r| r.is_ok()).collect();
    let k = ok.len() as f64;
    let avg = |f: &dyn Fn(&MetricsRow) -> f64| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|r| f(r)).sum::<f64>() / k
        }
    };
    AggregateRow {
        estimator: estimator.into(),
        scenario: scenario.into(),
        ate_rmse: avg(&|r| r.ate_error * r.ate_error).sqrt(),
        ate_cover: avg(&|r| f64::from(u8::from(r.ate_covered))),
        ate_length: avg(&|r| r.ate_length),
        cate_rmse: avg(&|r| r.cate_rmse),
        cate_cover: avg(&|r| r.cate_cover),
        cate_length: avg(&|r| r.cate_length),
        replications: ok.len(),
        failures: rows.len() - ok.len(),
    }
}

/// Cells in order of first appearance. ATE RMSE pools squared errors;
/// CATE RMSE averages the per-replication values.
pub fn aggregate(rows: &[MetricsRow]) -> AggregateTable {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        let key = (r.estimator.as_str(), r.scenario.as_str());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let rows = keys
        .into_iter()
        .map(|(e, s)| {
            let cell: Vec<&MetricsRow> = rows.iter().filter(|r| r.estimator == e && r.scenario == s).collect();
            aggregate_cell(e, s, &cell)
        })
        .collect();
    AggregateTable { rows }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileRow {
    pub bucket: usize,
    pub mean_relative_sd: f64,
    #[serde(flatten)]
    pub cell: AggregateRow,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PercentileTable {
    pub rows: Vec<PercentileRow>,
}

impl PercentileTable {
    pub fn buckets_for(&self, estimator: &str, scenario: &str) -> Vec<&PercentileRow> {
        self.rows.iter().filter(|r| r.cell.estimator == estimator && r.cell.scenario == scenario).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        // flattened structs don't serialize through csv; write columns by hand
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "bucket",
            "mean_relative_sd",
            "estimator",
            "scenario",
            "ate_rmse",
            "ate_cover",
            "ate_length",
            "cate_rmse",
            "cate_cover",
            "cate_length",
            "replications",
            "failures",
        ])?;
        for r in &self.rows {
            let c = &r.cell;
            out.write_record([
                r.bucket.to_string(),
                r.mean_relative_sd.to_string(),
                c.estimator.clone(),
                c.scenario.clone(),
                c.ate_rmse.to_string(),
                c.ate_cover.to_string(),
                c.ate_length.to_string(),
                c.cate_rmse.to_string(),
                c.cate_cover.to_string(),
                c.cate_length.to_string(),
                c.replications.to_string(),
                c.failures.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Sorts each (estimator, scenario) cell's replications by relative SD
/// (ties by replication id), splits them into `n_buckets` near-equal
/// consecutive groups, and aggregates each group.
pub fn percentile_report(rows: &[MetricsRow], n_buckets: usize) -> Result<PercentileTable> {
    if n_buckets == 0 {
        return Err(Error::Config("need at least one bucket".into()));
    }
    let mut out = Vec::new();
    for cell in aggregate(rows).rows {
        let mut members: Vec<&MetricsRow> =
            rows.iter().filter(|r| r.estimator == cell.estimator && r.scenario == cell.scenario).collect();
        let n = members.len();
        if n < n_buckets {
            return Err(Error::Precondition(format!(
                "{} on {}: {n} replications cannot fill {n_buckets} buckets",
                cell.estimator, cell.scenario
            )));
        }
        members.sort_by(|a, b| a.relative_sd.total_cmp(&b.relative_sd).then(a.replication.cmp(&b.replication)));
        for b in 0..n_buckets {
            let part = &members[b * n / n_buckets..(b + 1) * n / n_buckets];
            let mean_relative_sd = part.iter().map(|r| r.relative_sd).sum::<f64>() / part.len() as f64;
            out.push(PercentileRow {
                bucket: b + 1,
                mean_relative_sd,
                cell: aggregate_cell(&cell.estimator, &cell.scenario, part),
            });
        }
    }
    Ok(PercentileTable { rows: out })
}

pub fn write_metrics_csv<W: Write>(w: W, rows: &[MetricsRow]) -> Result<()> {
    write_csv_rows(w, rows)
}

pub fn read_metrics_csv<R: std::io::Read>(r: R) -> Result<Vec<MetricsRow>> {
    csv::Reader::from_reader(r).deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn write_csv_rows<W: Write, S: Serialize>(w: W, rows: &[S]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Everything for one experiment, as a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub aggregate: AggregateTable,
    pub percentiles: Option<PercentileTable>,
}
