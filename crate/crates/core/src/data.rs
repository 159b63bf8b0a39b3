//! Observable data `(X, Z, Y)`, oracle ground truth, and delimited-text ingestion.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Observed covariates, binary treatment and outcome for `n` units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Dataset<T> {
    x: Array2<T>,
    z: Vec<bool>,
    y: Vec<T>,
    columns: Vec<String>,
}

impl<T: Real> Dataset<T> {
    /// Builds a dataset after checking that the three parts agree in length.
    /// Content invariants (arms, finiteness) are reported by [`validate`].
    pub fn new(x: Array2<T>, z: Vec<bool>, y: Vec<T>) -> Result<Self> {
        let columns = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_columns(x, z, y, columns)
    }

    pub fn with_columns(x: Array2<T>, z: Vec<bool>, y: Vec<T>, columns: Vec<String>) -> Result<Self> {
        if x.nrows() != z.len() || x.nrows() != y.len() {
            return Err(Error::Schema(format!("x has {} rows, z has {}, y has {}", x.nrows(), z.len(), y.len())));
        }
        if columns.len() != x.ncols() {
            return Err(Error::Schema(format!("{} column names for {} covariates", columns.len(), x.ncols())));
        }
        Ok(Dataset { x, z, y, columns })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn d(&self) -> usize {
        self.x.ncols()
    }
    pub fn x(&self) -> &Array2<T> {
        &self.x
    }
    pub fn z(&self) -> &[bool] {
        &self.z
    }
    pub fn y(&self) -> &[T] {
        &self.y
    }
    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    /// Treatment indicator as a scalar column.
    pub fn z_values(&self) -> Vec<T> {
        self.z.iter().map(|&t| if t { T::one() } else { T::zero() }).collect()
    }

    pub fn n_treated(&self) -> usize {
        self.z.iter().filter(|&&t| t).count()
    }

    /// Rows with the given treatment status, as `(x, y, original indices)`.
    pub fn arm(&self, treated: bool) -> (Array2<T>, Vec<T>, Vec<usize>) {
        let idx: Vec<usize> = (0..self.n()).filter(|&i| self.z[i] == treated).collect();
        let x = self.x.select(Axis(0), &idx);
        let y = idx.iter().map(|&i| self.y[i]).collect();
        (x, y, idx)
    }

    /// Subset of rows, preserving order of `idx`.
    pub fn subset(&self, idx: &[usize]) -> Dataset<T> {
        Dataset {
            x: self.x.select(Axis(0), idx),
            z: idx.iter().map(|&i| self.z[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            columns: self.columns.clone(),
        }
    }

    /// Fails with the first violation reported by [`validate`].
    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate(self, None);
        match report.violations.into_iter().next() {
            None => Ok(()),
            Some(v) => Err(Error::Validation(v.message)),
        }
    }

    /// Writes `x1..xd, z, y` with a header row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.columns.iter().map(String::as_str).collect();
        header.push("z");
        header.push("y");
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(if self.z[i] { "1".into() } else { "0".into() });
            rec.push(self.y[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`Dataset::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let zc = header.iter().position(|h| h == "z").ok_or_else(|| Error::MissingColumn("z".into()))?;
        let yc = header.iter().position(|h| h == "y").ok_or_else(|| Error::MissingColumn("y".into()))?;
        let xcols: Vec<usize> = (0..header.len()).filter(|&c| c != zc && c != yc).collect();
        let mut xs = Vec::new();
        let mut z = Vec::new();
        let mut y = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for &c in &xcols {
                xs.push(parse_field::<T>(&rec, c, row, &header[c])?);
            }
            z.push(parse_binary(&rec, zc, row)?);
            y.push(parse_field::<T>(&rec, yc, row, "y")?);
        }
        let n = y.len();
        let x = Array2::from_shape_vec((n, xcols.len()), xs).map_err(|e| Error::Schema(e.to_string()))?;
        let columns = xcols.iter().map(|&c| header[c].clone()).collect();
        Dataset::with_columns(x, z, y, columns)
    }
}

/// Oracle quantities a simulated design exposes for scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GroundTruth<T> {
    pub mu0: Vec<T>,
    pub mu1: Vec<T>,
    pub tau: Vec<T>,
    /// True propensity; unknown for externally supplied realizations.
    pub pi: Option<Vec<T>>,
}

impl<T: Real> GroundTruth<T> {
    /// `tau` is always derived as `mu1 - mu0`.
    pub fn new(mu0: Vec<T>, mu1: Vec<T>, pi: Option<Vec<T>>) -> Result<Self> {
        if mu0.len() != mu1.len() || pi.as_ref().is_some_and(|p| p.len() != mu0.len()) {
            return Err(Error::Schema("ground-truth vectors differ in length".into()));
        }
        let tau = mu0.iter().zip(&mu1).map(|(&a, &b)| b - a).collect();
        Ok(GroundTruth { mu0, mu1, tau, pi })
    }

    /// Builds from the control mean and the effect, keeping `tau` exact
    /// (`mu1 = mu0 + tau` may round).
    pub fn from_effect(mu0: Vec<T>, tau: Vec<T>, pi: Option<Vec<T>>) -> Result<Self> {
        if mu0.len() != tau.len() || pi.as_ref().is_some_and(|p| p.len() != mu0.len()) {
            return Err(Error::Schema("ground-truth vectors differ in length".into()));
        }
        let mu1 = mu0.iter().zip(&tau).map(|(&a, &t)| a + t).collect();
        Ok(GroundTruth { mu0, mu1, tau, pi })
    }

    pub fn n(&self) -> usize {
        self.tau.len()
    }

    /// Sample average of the unit-level effects.
    pub fn ate(&self) -> T {
        crate::scalar::mean(&self.tau)
    }

    /// Average effect over the treated units of `z`.
    pub fn att(&self, z: &[bool]) -> T {
        let (s, c) =
            self.tau.iter().zip(z).filter(|(_, &t)| t).fold((T::zero(), 0usize), |(s, c), (&t, _)| (s + t, c + 1));
        s / crate::scalar::count(c)
    }

    /// SD(tau) / |mean(tau)|; zero for a constant effect.
    pub fn relative_sd(&self) -> T {
        let sd = population_sd(&self.tau);
        if sd == T::zero() {
            return T::zero();
        }
        sd / self.ate().abs()
    }
}

fn population_sd<T: Real>(v: &[T]) -> T {
    let m = crate::scalar::mean(v);
    let ss: T = v.iter().map(|&x| (x - m) * (x - m)).sum();
    (ss / crate::scalar::count(v.len())).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingMode {
    OneHot,
    IntegerCoded,
}

/// How an integer-coded categorical column enters the samplers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalEncoding {
    pub column: usize,
    pub levels: usize,
    pub mode: EncodingMode,
}

impl CategoricalEncoding {
    pub fn new(column: usize, levels: usize, mode: EncodingMode) -> Result<Self> {
        if levels < 2 {
            return Err(Error::Config("a categorical column needs at least two levels".into()));
        }
        Ok(CategoricalEncoding { column, levels, mode })
    }
}

/// Expands categorical columns (coded `1..=levels`) in place of the original column.
pub fn encode_categoricals<T: Real>(
    x: &Array2<T>,
    names: &[String],
    encodings: &[CategoricalEncoding],
) -> Result<(Array2<T>, Vec<String>)> {
    let mut cols: Vec<Vec<T>> = Vec::new();
    let mut out_names = Vec::new();
    for (j, col) in x.columns().into_iter().enumerate() {
        match encodings.iter().find(|e| e.column == j) {
            Some(enc) if enc.mode == EncodingMode::OneHot => {
                for level in 1..=enc.levels {
                    let lv = crate::scalar::count::<T>(level);
                    let mut v = Vec::with_capacity(col.len());
                    for (i, &c) in col.iter().enumerate() {
                        if c.round() != c || c < T::one() || c > crate::scalar::count(enc.levels) {
                            return Err(Error::Domain(format!("row {i}: level {c} outside 1..={}", enc.levels)));
                        }
                        v.push(if c == lv { T::one() } else { T::zero() });
                    }
                    cols.push(v);
                    out_names.push(format!("{}_{level}", names[j]));
                }
            }
            _ => {
                cols.push(col.to_vec());
                out_names.push(names[j].clone());
            }
        }
    }
    let n = x.nrows();
    let mut out = Array2::zeros((n, cols.len()));
    for (j, c) in cols.into_iter().enumerate() {
        for (i, v) in c.into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok((out, out_names))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    TooFewUnits,
    NoCovariates,
    NoTreated,
    NoControl,
    NonFinite,
    LengthMismatch,
    TauMismatch,
    OverlapViolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, kind: ViolationKind, message: impl Into<String>, indices: Vec<usize>) {
        self.violations.push(Violation { kind, message: message.into(), indices });
    }
}

/// Checks every dataset and ground-truth invariant, collecting all violations.
pub fn validate<T: Real>(dataset: &Dataset<T>, truth: Option<&GroundTruth<T>>) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = dataset.n();
    if n < 2 {
        report.push(ViolationKind::TooFewUnits, format!("need at least 2 units, got {n}"), vec![]);
    }
    if dataset.d() < 1 {
        report.push(ViolationKind::NoCovariates, "no covariates", vec![]);
    }
    let treated = dataset.n_treated();
    if treated == 0 {
        report.push(ViolationKind::NoTreated, "no treated units", vec![]);
    }
    if treated == n {
        report.push(ViolationKind::NoControl, "no control units", vec![]);
    }
    let bad: Vec<usize> =
        (0..n).filter(|&i| !dataset.y[i].is_finite() || dataset.x.row(i).iter().any(|v| !v.is_finite())).collect();
    if !bad.is_empty() {
        report.push(ViolationKind::NonFinite, "non-finite entries", bad);
    }
    if let Some(t) = truth {
        if t.n() != n || t.mu0.len() != n || t.mu1.len() != n {
            report.push(ViolationKind::LengthMismatch, "ground truth length differs from dataset", vec![]);
        }
        let tau_bad: Vec<usize> = (0..t.n().min(t.mu0.len()).min(t.mu1.len()))
            .filter(|&i| {
                let d = t.mu1[i] - t.mu0[i];
                let tol = lit::<T>(1e-9) * (T::one() + t.mu1[i].abs().max(t.mu0[i].abs()));
                !((t.tau[i] - d).abs() <= tol)
            })
            .collect();
        if !tau_bad.is_empty() {
            report.push(ViolationKind::TauMismatch, "tau differs from mu1 - mu0", tau_bad);
        }
        if let Some(pi) = &t.pi {
            let off: Vec<usize> = (0..pi.len()).filter(|&i| !(pi[i] > T::zero() && pi[i] < T::one())).collect();
            if !off.is_empty() {
                report.push(
                    ViolationKind::OverlapViolated,
                    "overlap violated: positivity requires 0 < pi(x) < 1 for every unit",
                    off,
                );
            }
        }
    }
    report
}

/// One externally supplied IHDP realization.
#[derive(Debug, Clone)]
pub struct IhdpRealization<T> {
    pub dataset: Dataset<T>,
    pub truth: GroundTruth<T>,
    pub y_cfactual: Vec<T>,
    pub warnings: Vec<String>,
}

pub const IHDP_UNITS: usize = 747;
pub const IHDP_COVARIATES: usize = 25;
pub const IHDP_TREATED: usize = 139;

/// Loads IHDP realizations from a directory of per-realization files or from a
/// single file. Column order follows the published layout
/// `treatment, y_factual, y_cfactual, mu0, mu1, x1..xd`; a header row is
/// optional. A single file may hold several realizations if it has a
/// `realization` column.
pub fn load_ihdp_realizations<T: Real>(path: &Path, expected_covariates: usize) -> Result<Vec<IhdpRealization<T>>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut f: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv" || e == "txt"))
            .collect();
        f.sort();
        f
    } else {
        vec![path.to_path_buf()]
    };
    let mut out = Vec::new();
    for file in files {
        out.extend(read_ihdp_file(&file, expected_covariates)?);
    }
    for (r, real) in out.iter().enumerate() {
        log::info!(
            "ihdp realization {r}: n = {}, d = {}, treated = {}",
            real.dataset.n(),
            real.dataset.d(),
            real.dataset.n_treated()
        );
    }
    Ok(out)
}

struct IhdpColumns {
    treatment: usize,
    y_factual: usize,
    y_cfactual: usize,
    mu0: usize,
    mu1: usize,
    x: Vec<usize>,
    tau: Option<usize>,
    realization: Option<usize>,
}

fn ihdp_positional_name(c: usize) -> String {
    match c {
        0 => "treatment".into(),
        1 => "y_factual".into(),
        2 => "y_cfactual".into(),
        3 => "mu0".into(),
        4 => "mu1".into(),
        _ => format!("x{}", c - 4),
    }
}

fn ihdp_columns(header: Option<&[String]>, width: usize, d: usize) -> Result<IhdpColumns> {
    match header {
        None => {
            if width < 5 + d {
                return Err(Error::MissingColumn(ihdp_positional_name(width)));
            }
            Ok(IhdpColumns {
                treatment: 0,
                y_factual: 1,
                y_cfactual: 2,
                mu0: 3,
                mu1: 4,
                x: (5..5 + d).collect(),
                tau: None,
                realization: None,
            })
        }
        Some(h) => {
            let find = |names: &[&str]| h.iter().position(|c| names.iter().any(|n| c.eq_ignore_ascii_case(n)));
            let need = |names: &[&str]| find(names).ok_or_else(|| Error::MissingColumn(names[0].into()));
            let mut x = Vec::with_capacity(d);
            for j in 1..=d {
                let name = format!("x{j}");
                x.push(find(&[name.as_str()]).ok_or(Error::MissingColumn(name))?);
            }
            Ok(IhdpColumns {
                treatment: need(&["treatment", "t", "z"])?,
                y_factual: need(&["y_factual", "yf", "y"])?,
                y_cfactual: need(&["y_cfactual", "ycf"])?,
                mu0: need(&["mu0", "mu_0"])?,
                mu1: need(&["mu1", "mu_1"])?,
                x,
                tau: find(&["tau", "ite"]),
                realization: find(&["realization", "rep"]),
            })
        }
    }
}

fn read_ihdp_file<T: Real>(path: &Path, d: usize) -> Result<Vec<IhdpRealization<T>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_path(path)?;
    let mut records = rdr.records();
    let first = match records.next() {
        Some(r) => r?,
        None => return Ok(Vec::new()),
    };
    let has_header = first.get(0).is_some_and(|f| f.parse::<f64>().is_err());
    let header: Option<Vec<String>> = has_header.then(|| first.iter().map(str::to_string).collect());
    let cols = ihdp_columns(header.as_deref(), first.len(), d)?;
    let names: Vec<String> = match &header {
        Some(h) => h.clone(),
        None => (0..first.len()).map(ihdp_positional_name).collect(),
    };

    let mut rows: Vec<csv::StringRecord> = Vec::new();
    if !has_header {
        rows.push(first);
    }
    for r in records {
        rows.push(r?);
    }

    // Group by realization id, keeping first-appearance order.
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, rec) in rows.iter().enumerate() {
        let key = cols.realization.and_then(|c| rec.get(c)).unwrap_or("").to_string();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(i),
            None => groups.push((key, vec![i])),
        }
    }

    let row_offset = usize::from(has_header);
    let mut out = Vec::with_capacity(groups.len());
    for (_, idx) in groups {
        let n = idx.len();
        let mut x = Array2::<T>::zeros((n, d));
        let mut z = Vec::with_capacity(n);
        let (mut yf, mut ycf, mut mu0, mut mu1) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (k, &i) in idx.iter().enumerate() {
            let rec = &rows[i];
            let row = i + row_offset;
            if rec.len() < names.len().min(5 + d) {
                return Err(Error::MissingColumn(ihdp_positional_name(rec.len())));
            }
            z.push(parse_binary(rec, cols.treatment, row)?);
            yf.push(parse_field::<T>(rec, cols.y_factual, row, &names[cols.y_factual])?);
            ycf.push(parse_field::<T>(rec, cols.y_cfactual, row, &names[cols.y_cfactual])?);
            let m0 = parse_field::<T>(rec, cols.mu0, row, &names[cols.mu0])?;
            let m1 = parse_field::<T>(rec, cols.mu1, row, &names[cols.mu1])?;
            if let Some(tc) = cols.tau {
                let stored = parse_field::<T>(rec, tc, row, &names[tc])?;
                if ((m1 - m0) - stored).abs() > lit(1e-8) {
                    return Err(Error::Validation(format!(
                        "row {row}: stored tau {stored} disagrees with mu1 - mu0 = {}",
                        m1 - m0
                    )));
                }
            }
            mu0.push(m0);
            mu1.push(m1);
            for (j, &c) in cols.x.iter().enumerate() {
                x[[k, j]] = parse_field::<T>(rec, c, row, &names[c])?;
            }
        }
        let columns = cols.x.iter().map(|&c| names[c].clone()).collect();
        let dataset = Dataset::with_columns(x, z, yf, columns)?;
        let truth = GroundTruth::new(mu0, mu1, None)?;
        let mut warnings = Vec::new();
        if dataset.n_treated() != IHDP_TREATED {
            let msg = format!("{}: {} treated units (expected {IHDP_TREATED})", path.display(), dataset.n_treated());
            log::warn!("{msg}");
            warnings.push(msg);
        }
        if dataset.n() != IHDP_UNITS {
            let msg = format!("{}: {} units (expected {IHDP_UNITS})", path.display(), dataset.n());
            log::warn!("{msg}");
            warnings.push(msg);
        }
        out.push(IhdpRealization { dataset, truth, y_cfactual: ycf, warnings });
    }
    Ok(out)
}

fn parse_field<T: Real>(rec: &csv::StringRecord, c: usize, row: usize, name: &str) -> Result<T> {
    let raw = rec.get(c).ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    let v: T = raw
        .trim()
        .parse()
        .map_err(|_| Error::InvalidRow { row, message: format!("column `{name}`: cannot parse `{raw}`") })?;
    if !v.is_finite() {
        return Err(Error::InvalidRow { row, message: format!("column `{name}` is not finite") });
    }
    Ok(v)
}

fn parse_binary(rec: &csv::StringRecord, c: usize, row: usize) -> Result<bool> {
    let raw = rec.get(c).ok_or_else(|| Error::MissingColumn("treatment".into()))?;
    match raw.trim().parse::<f64>() {
        Ok(0.0) => Ok(false),
        Ok(1.0) => Ok(true),
        _ => Err(Error::InvalidRow { row, message: format!("treatment must be 0 or 1, got `{raw}`") }),
    }
}

/// Column-stacks extra columns to the right of `x`.
pub fn append_columns<T: Real>(x: &Array2<T>, extra: &[&[T]]) -> Array2<T> {
    let (n, d) = x.dim();
    let mut out = Array2::zeros((n, d + extra.len()));
    out.slice_mut(ndarray::s![.., ..d]).assign(x);
    for (k, col) in extra.iter().enumerate() {
        for i in 0..n {
            out[[i, d + k]] = col[i];
        }
    }
    out
}

/// Writes a dataset to `path` in the delimited format.
pub fn save_dataset<T: Real>(dataset: &Dataset<T>, path: &Path) -> Result<()> {
    dataset.write_csv(File::create(path)?)
}
