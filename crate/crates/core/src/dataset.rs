//! Annual historical series: loading, validation and growth pairing.
//!
//! The canonical CSV has the header `year,consumption,equity_return,riskfree_return`.
//! Returns are gross real decimals (`1.0698` for 6.98%). Rows may appear in
//! any order; years must form a contiguous block.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SfmError};

pub const CSV_HEADER: [&str; 4] = ["year", "consumption", "equity_return", "riskfree_return"];

const BUNDLED_CSV: &str = include_str!("../../../data/mp_1889_1978.csv");

/// One year of the series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnualRecord {
    pub year: i32,
    /// Per-capita real consumption level.
    pub consumption: f64,
    pub equity_return: f64,
    pub riskfree_return: f64,
}

/// Validated, ascending, gap-free sequence of [`AnnualRecord`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSeries {
    records: Vec<AnnualRecord>,
}

impl MarketSeries {
    /// Sorts by year and checks every invariant. Line numbers in errors are
    /// only available when coming through [`parse_series`].
    pub fn new(records: Vec<AnnualRecord>) -> Result<Self> {
        let lines = vec![None; records.len()];
        Self::from_parts(records, lines)
    }

    fn from_parts(records: Vec<AnnualRecord>, lines: Vec<Option<u64>>) -> Result<Self> {
        let mut rows: Vec<(AnnualRecord, Option<u64>)> = records.into_iter().zip(lines).collect();
        for (rec, line) in &rows {
            check_record(rec, *line)?;
        }
        rows.sort_by_key(|(rec, _)| rec.year);
        for pair in rows.windows(2) {
            let (prev, _) = pair[0];
            let (next, line) = pair[1];
            if next.year == prev.year {
                return Err(SfmError::data(
                    line,
                    format!("duplicate year {}", next.year),
                ));
            }
            if next.year != prev.year + 1 {
                return Err(SfmError::data(
                    line,
                    format!("year gap between {} and {}", prev.year, next.year),
                ));
            }
        }
        if rows.len() < 3 {
            return Err(SfmError::data(
                None,
                format!("series needs at least 3 years, found {}", rows.len()),
            ));
        }
        Ok(MarketSeries {
            records: rows.into_iter().map(|(rec, _)| rec).collect(),
        })
    }

    pub fn records(&self) -> &[AnnualRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first_year(&self) -> i32 {
        self.records[0].year
    }

    pub fn last_year(&self) -> i32 {
        self.records[self.records.len() - 1].year
    }

    pub fn record(&self, year: i32) -> Option<&AnnualRecord> {
        let idx = year.checked_sub(self.first_year())?;
        self.records.get(usize::try_from(idx).ok()?)
    }
}

fn check_record(rec: &AnnualRecord, line: Option<u64>) -> Result<()> {
    let fields = [
        ("consumption", rec.consumption),
        ("equity_return", rec.equity_return),
        ("riskfree_return", rec.riskfree_return),
    ];
    for (name, value) in fields {
        if !value.is_finite() || value <= 0.0 {
            return Err(SfmError::data(
                line,
                format!(
                    "{name} must be positive and finite in year {}, got {value}",
                    rec.year
                ),
            ));
        }
    }
    Ok(())
}

/// Paired observation for year `t`: growth over `t-1 -> t` with the returns
/// recorded for year `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthObservation {
    pub year: i32,
    pub x: f64,
    pub r_e: f64,
    pub r_f: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthSeries {
    pub observations: Vec<GrowthObservation>,
}

impl GrowthSeries {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn growth(&self) -> impl Iterator<Item = f64> + '_ {
        self.observations.iter().map(|o| o.x)
    }

    pub fn equity_returns(&self) -> impl Iterator<Item = f64> + '_ {
        self.observations.iter().map(|o| o.r_e)
    }

    pub fn riskfree_returns(&self) -> impl Iterator<Item = f64> + '_ {
        self.observations.iter().map(|o| o.r_f)
    }

    /// Rebuilds consumption levels from a starting level.
    pub fn reconstruct_levels(&self, first_level: f64) -> Vec<f64> {
        let mut levels = Vec::with_capacity(self.len() + 1);
        levels.push(first_level);
        let mut level = first_level;
        for x in self.growth() {
            level *= x;
            levels.push(level);
        }
        levels
    }
}

pub fn growth_series(series: &MarketSeries) -> GrowthSeries {
    let observations = series
        .records
        .windows(2)
        .map(|w| GrowthObservation {
            year: w[1].year,
            x: w[1].consumption / w[0].consumption,
            r_e: w[1].equity_return,
            r_f: w[1].riskfree_return,
        })
        .collect();
    GrowthSeries { observations }
}

pub fn load_series(path: impl AsRef<Path>) -> Result<MarketSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| SfmError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_series(file)
}

/// The 1889-1978 series shipped in `data/mp_1889_1978.csv`.
pub fn bundled() -> MarketSeries {
    parse_series(BUNDLED_CSV.as_bytes()).expect("bundled series is valid")
}

pub fn parse_series<R: Read>(reader: R) -> Result<MarketSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(&e))?.clone();
    if headers.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(SfmError::data(
            Some(1),
            format!(
                "expected header `{}`, got `{}`",
                CSV_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    let mut records = Vec::new();
    let mut lines = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(&e))?;
        let line = row.position().map(|p| p.line());
        let rec: AnnualRecord = row
            .deserialize(Some(&headers))
            .map_err(|e| SfmError::data(line, format!("malformed row: {e}")))?;
        records.push(rec);
        lines.push(line);
    }
    MarketSeries::from_parts(records, lines)
}

fn csv_error(err: &csv::Error) -> SfmError {
    let line = err.position().map(|p| p.line());
    SfmError::data(line, format!("malformed row: {err}"))
}
