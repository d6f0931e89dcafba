//! Cumulative case ingestion and the scaled growth-rate transform.
//!
//! A region's cumulative counts `f(t)` become daily increments
//! `s(t) = f(t) - f(t-1)`, which are normalized to sum to one and placed on
//! an equally spaced grid over `[0, 1]`.

mod basis;
mod fpca;

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub use basis::{build_basis, BasisSet};
pub use fpca::{fpca_eigenvalues, fpca_noise_variance, fpca_select_p, fpca_select_p_denoised};

/// Tolerance on row sums of a [`CurveMatrix`].
pub const ROW_SUM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CumulativeSeries {
    pub region_id: String,
    pub dates: Vec<NaiveDate>,
    pub counts: Vec<i64>,
}

impl CumulativeSeries {
    pub fn new(region_id: impl Into<String>, dates: Vec<NaiveDate>, counts: Vec<i64>) -> Result<Self> {
        let region_id = region_id.into();
        if dates.len() != counts.len() {
            return Err(Error::Dimension(format!(
                "region {region_id}: {} dates but {} counts",
                dates.len(),
                counts.len()
            )));
        }
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Format(format!(
                    "region {region_id}: dates not strictly increasing at {}",
                    w[1]
                )));
            }
            if w[1] != w[0].succ_opt().unwrap_or(w[0]) {
                return Err(Error::DateGap {
                    region: region_id,
                    date: w[0].succ_opt().map(|d| d.to_string()).unwrap_or_default(),
                });
            }
        }
        Ok(Self {
            region_id,
            dates,
            counts,
        })
    }

    /// Daily increments `f(t) - f(t-1)`.
    pub fn increments(&self) -> Vec<i64> {
        self.counts.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Read a `region_id,date,cumulative_cases` CSV.
///
/// Regions are returned in order of first appearance. When `date_range` is
/// given (inclusive on both ends) rows outside it are dropped before the
/// contiguity check.
pub fn load_cumulative_cases(
    path: &Path,
    date_range: Option<(NaiveDate, NaiveDate)>,
) -> Result<Vec<CumulativeSeries>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_cumulative_cases(file, date_range)
}

pub fn read_cumulative_cases<R: Read>(
    reader: R,
    date_range: Option<(NaiveDate, NaiveDate)>,
) -> Result<Vec<CumulativeSeries>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing column `{name}`")))
    };
    let (ci, cd, cc) = (col("region_id")?, col("date")?, col("cumulative_cases")?);

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, BTreeMap<NaiveDate, i64>> = HashMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let region = field(ci).to_string();
        let date = NaiveDate::parse_from_str(field(cd), "%Y-%m-%d").map_err(|e| {
            Error::Format(format!("row {}: bad date `{}`: {e}", line + 2, field(cd)))
        })?;
        let count: i64 = field(cc).parse().map_err(|_| {
            Error::Format(format!("row {}: bad count `{}`", line + 2, field(cc)))
        })?;
        if count < 0 {
            return Err(Error::Format(format!(
                "row {}: negative cumulative count for region {region}",
                line + 2
            )));
        }
        if let Some((start, end)) = date_range {
            if date < start || date > end {
                continue;
            }
        }
        let entry = rows.entry(region.clone()).or_insert_with(|| {
            order.push(region.clone());
            BTreeMap::new()
        });
        if entry.insert(date, count).is_some() {
            return Err(Error::DuplicateRecord {
                region,
                date: date.to_string(),
            });
        }
    }

    order
        .into_iter()
        .map(|region| {
            let map = rows.remove(&region).unwrap_or_default();
            if let Some((start, end)) = date_range {
                let first = map.keys().next().copied();
                let last = map.keys().next_back().copied();
                if first != Some(start) {
                    return Err(Error::DateGap {
                        region,
                        date: start.to_string(),
                    });
                }
                if last != Some(end) {
                    return Err(Error::DateGap {
                        region,
                        date: end.to_string(),
                    });
                }
            }
            let (dates, counts): (Vec<_>, Vec<_>) = map.into_iter().unzip();
            CumulativeSeries::new(region, dates, counts)
        })
        .collect()
}

/// Repair negative daily increments.
///
/// Each negative increment is set to zero and its deficit is removed from
/// the most recent earlier days with positive increments, walking backward.
/// If the earlier increments cannot absorb the whole deficit the starting
/// count is lowered. The count on every day at or after the miscount is
/// preserved, so the output is non-decreasing and ends on the same value.
pub fn correct_negatives(series: &CumulativeSeries) -> CumulativeSeries {
    if series.counts.len() < 2 {
        return series.clone();
    }
    let mut base = series.counts[0];
    let mut inc = series.increments();
    for t in 0..inc.len() {
        if inc[t] >= 0 {
            continue;
        }
        let mut deficit = -inc[t];
        inc[t] = 0;
        for k in (0..t).rev() {
            if deficit == 0 {
                break;
            }
            let take = inc[k].min(deficit);
            inc[k] -= take;
            deficit -= take;
        }
        base -= deficit;
    }
    let mut counts = Vec::with_capacity(series.counts.len());
    counts.push(base);
    for s in inc {
        let last = *counts.last().unwrap();
        counts.push(last + s);
    }
    CumulativeSeries {
        region_id: series.region_id.clone(),
        dates: series.dates.clone(),
        counts,
    }
}

/// `n x T` matrix of scaled growth-rate curves on the grid `j / (T - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveMatrix {
    values: DMatrix<f64>,
    grid: Vec<f64>,
    region_ids: Vec<String>,
}

pub fn unit_grid(t: usize) -> Vec<f64> {
    if t == 1 {
        return vec![0.0];
    }
    let denom = (t - 1) as f64;
    (0..t).map(|j| j as f64 / denom).collect()
}

impl CurveMatrix {
    /// Validates finiteness and the unit row-sum invariant.
    pub fn new(region_ids: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        let c = Self::from_raw(region_ids, values)?;
        for (i, row) in c.values.row_iter().enumerate() {
            let s = row.sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Domain(format!(
                    "curve for region {} sums to {s}, expected 1",
                    c.region_ids[i]
                )));
            }
        }
        Ok(c)
    }

    /// Skips the unit row-sum check. For data on the model's own scale,
    /// such as draws from the prior predictive.
    pub fn from_raw(region_ids: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if region_ids.len() != values.nrows() {
            return Err(Error::Dimension(format!(
                "{} region ids for {} curve rows",
                region_ids.len(),
                values.nrows()
            )));
        }
        if values.ncols() < 2 {
            return Err(Error::Dimension("curves need at least 2 grid points".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite curve value".into()));
        }
        let grid = unit_grid(values.ncols());
        Ok(Self {
            values,
            grid,
            region_ids,
        })
    }

    /// Divides each row by its sum before validating.
    pub fn from_unnormalized(region_ids: Vec<String>, mut values: DMatrix<f64>) -> Result<Self> {
        for (i, mut row) in values.row_iter_mut().enumerate() {
            let s = row.sum();
            if s == 0.0 || !s.is_finite() {
                let id = region_ids.get(i).cloned().unwrap_or_else(|| i.to_string());
                return Err(Error::DegenerateRegion(id));
            }
            row /= s;
        }
        Self::new(region_ids, values)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn region_ids(&self) -> &[String] {
        &self.region_ids
    }

    pub fn n_regions(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["region_id".to_string()];
        header.extend(self.grid.iter().map(|g| g.to_string()));
        w.write_record(&header)?;
        for (i, id) in self.region_ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.values.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<curve csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("region_id") {
            return Err(Error::Format("curve file must start with `region_id` column".into()));
        }
        let t = headers.len() - 1;
        let grid = unit_grid(t);
        for (j, h) in headers.iter().skip(1).enumerate() {
            let g: f64 = h
                .parse()
                .map_err(|_| Error::Format(format!("grid column `{h}` is not numeric")))?;
            if (g - grid[j]).abs() > 1e-9 {
                return Err(Error::Format(format!(
                    "grid column {j} is {g}, expected {}",
                    grid[j]
                )));
            }
        }
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != t + 1 {
                return Err(Error::Format("ragged curve row".into()));
            }
            ids.push(rec[0].to_string());
            for v in rec.iter().skip(1) {
                data.push(
                    v.parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad curve value `{v}`")))?,
                );
            }
        }
        let values = DMatrix::from_row_slice(ids.len(), t, &data);
        Self::new(ids, values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file)
    }
}

/// Turn corrected cumulative series into scaled growth-rate curves.
///
/// All series must share the same dates. A series of `T + 1` days yields `T`
/// grid points.
pub fn to_growth_curves(series: &[CumulativeSeries]) -> Result<CurveMatrix> {
    let first = series
        .first()
        .ok_or_else(|| Error::DegenerateData("no series".into()))?;
    let len = first.len();
    if len < 3 {
        return Err(Error::Dimension(format!(
            "series must have at least 3 days, got {len}"
        )));
    }
    let t = len - 1;
    let mut values = DMatrix::zeros(series.len(), t);
    for (i, s) in series.iter().enumerate() {
        if s.len() != len || s.dates != first.dates {
            return Err(Error::Dimension(format!(
                "region {} does not share the date axis of region {}",
                s.region_id, first.region_id
            )));
        }
        let inc = s.increments();
        if let Some(pos) = inc.iter().position(|&d| d < 0) {
            return Err(Error::Domain(format!(
                "region {} has a negative increment on {}; correct negatives first",
                s.region_id,
                s.dates[pos + 1]
            )));
        }
        let total: i64 = inc.iter().sum();
        if total == 0 {
            return Err(Error::DegenerateRegion(s.region_id.clone()));
        }
        for (j, d) in inc.iter().enumerate() {
            values[(i, j)] = *d as f64 / total as f64;
        }
    }
    CurveMatrix::new(series.iter().map(|s| s.region_id.clone()).collect(), values)
}
