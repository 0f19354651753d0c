//! Hourly air-quality ingestion: parsing, missing-value fill, seasonal
//! adjustment, normalization, client windowing and autocorrelation.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{Datelike, NaiveDate, NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objectives::{ObjectiveError, RegressionClient, RegressionProblem, RegressionSample, REGRESSION_DIM};
use crate::rng::{below, RngKey};

/// Header of the source files, in order.
pub const SCHEMA: [&str; 18] = [
    "No", "year", "month", "day", "hour", "PM2.5", "PM10", "SO2", "NO2", "CO", "O3", "TEMP", "PRES", "DEWP", "RAIN",
    "wd", "WSPM", "station",
];

/// Numeric fields kept per record, in storage order.
pub const NUMERIC_FIELDS: [&str; 11] = ["PM2.5", "PM10", "SO2", "NO2", "CO", "O3", "TEMP", "PRES", "DEWP", "RAIN", "WSPM"];

/// Regression features, in column order.
pub const FEATURES: [&str; REGRESSION_DIM] = ["SO2", "NO2", "CO", "O3", "TEMP", "PRES", "DEWP", "RAIN", "WSPM"];
pub const TARGET: &str = "PM2.5";

/// Months available for training and for client windows.
pub const TRAINING_MONTHS: u32 = 36;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{source_name}: schema error in column {column:?}: {detail}")]
    Schema { source_name: String, column: String, detail: String },
    #[error("{source_name}: row {row}: {detail}")]
    Ordering { source_name: String, row: usize, detail: String },
    #[error("{source_name}: row {row}, column {column:?}: cannot parse {value:?}")]
    Parse { source_name: String, row: usize, column: String, value: String },
    #[error("field {field} still has missing values; fill them first")]
    MissingValues { field: String },
    #[error("column {column} is constant over the training period")]
    ConstantColumn { column: String },
    #[error("autocorrelation undefined for a constant series")]
    UndefinedAutocorrelation,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

pub type Result<T> = std::result::Result<T, IngestError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp {
    pub year: i32,
    pub month: u32,
    pub day: u32,
    pub hour: u32,
}

impl Timestamp {
    pub fn new(year: i32, month: u32, day: u32, hour: u32) -> Option<Self> {
        (NaiveDate::from_ymd_opt(year, month, day).is_some() && hour < 24).then_some(Self { year, month, day, hour })
    }

    fn datetime(&self) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(self.year, self.month, self.day)
            .and_then(|d| d.and_hms_opt(self.hour, 0, 0))
            .expect("validated on construction")
    }

    fn from_datetime(dt: NaiveDateTime) -> Self {
        use chrono::Timelike;
        Self { year: dt.year(), month: dt.month(), day: dt.day(), hour: dt.hour() }
    }

    /// Next hour.
    pub fn succ(&self) -> Self {
        Self::from_datetime(self.datetime() + TimeDelta::hours(1))
    }

    /// Months since `origin`'s calendar month.
    pub fn months_since(&self, origin: &Timestamp) -> i64 {
        i64::from(self.year - origin.year) * 12 + i64::from(self.month) - i64::from(origin.month)
    }

    fn days_in_month(&self) -> u32 {
        let (y, m) = if self.month == 12 { (self.year + 1, 1) } else { (self.year, self.month + 1) };
        let first_next = NaiveDate::from_ymd_opt(y, m, 1).expect("valid month");
        first_next.pred_opt().expect("has predecessor").day()
    }

    /// Position within the calendar year in months, in `[0, 12)`.
    fn month_position(&self) -> f64 {
        f64::from(self.month - 1) + (f64::from(self.day - 1) + f64::from(self.hour) / 24.0) / f64::from(self.days_in_month())
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}-{:02} {:02}:00", self.year, self.month, self.day, self.hour)
    }
}

/// One hourly row. `values` follows [`NUMERIC_FIELDS`]; `None` marks "NA".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRecord {
    pub timestamp: Timestamp,
    pub values: [Option<f64>; 11],
    pub wd: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSeries {
    pub station: String,
    pub records: Vec<StationRecord>,
}

impl StationSeries {
    pub fn missing_cells(&self) -> usize {
        self.records.iter().map(|r| r.values.iter().filter(|v| v.is_none()).count()).sum()
    }

    pub fn field_index(name: &str) -> Option<usize> {
        NUMERIC_FIELDS.iter().position(|f| *f == name)
    }

    /// Values of one field; panics if any is missing.
    pub fn column(&self, field: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.values[field].expect("filled series")).collect()
    }

    fn origin(&self) -> Option<Timestamp> {
        self.records.first().map(|r| r.timestamp)
    }
}

pub fn load_csv(path: &Path) -> Result<StationSeries> {
    let file = std::fs::File::open(path)
        .map_err(|e| IngestError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_csv(file, &path.display().to_string())
}

/// Parses a UCI-schema station file. `source_name` only labels errors.
pub fn parse_csv<R: Read>(reader: R, source_name: &str) -> Result<StationSeries> {
    let schema_err = |column: &str, detail: String| IngestError::Schema {
        source_name: source_name.to_string(),
        column: column.to_string(),
        detail,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| schema_err("", e.to_string()))?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
        return Err(schema_err(SCHEMA[0], "missing header".into()));
    }
    for (i, expected) in SCHEMA.iter().enumerate() {
        match header.get(i) {
            Some(got) if got.trim() == *expected => {}
            Some(got) => return Err(schema_err(got, format!("expected {expected:?} at position {i}"))),
            None => return Err(schema_err(expected, "column absent".into())),
        }
    }
    if header.len() > SCHEMA.len() {
        return Err(schema_err(&header[SCHEMA.len()], "unexpected extra column".into()));
    }

    let mut station: Option<String> = None;
    let mut records: Vec<StationRecord> = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 1;
        let row = row.map_err(|e| schema_err("", format!("row {line}: {e}")))?;
        if row.len() != SCHEMA.len() {
            return Err(schema_err("", format!("row {line} has {} fields, expected {}", row.len(), SCHEMA.len())));
        }
        let parse_err = |col: usize| IngestError::Parse {
            source_name: source_name.to_string(),
            row: line,
            column: SCHEMA[col].to_string(),
            value: row[col].to_string(),
        };
        let int = |col: usize| row[col].trim().parse::<i64>().map_err(|_| parse_err(col));
        let (year, month, day, hour) = (int(1)?, int(2)?, int(3)?, int(4)?);
        let timestamp = Timestamp::new(year as i32, month as u32, day as u32, hour as u32).ok_or_else(|| IngestError::Ordering {
            source_name: source_name.to_string(),
            row: line,
            detail: format!("invalid timestamp {year}-{month}-{day} {hour}h"),
        })?;
        let mut values = [None; 11];
        for (slot, name) in values.iter_mut().zip(NUMERIC_FIELDS) {
            let col = SCHEMA.iter().position(|c| *c == name).expect("numeric fields are in the schema");
            let cell = row[col].trim();
            *slot = if cell == "NA" || cell.is_empty() {
                None
            } else {
                Some(cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| parse_err(col))?)
            };
        }
        let wd = match row[15].trim() {
            "NA" | "" => None,
            s => Some(s.to_string()),
        };
        let name = row[17].trim();
        match &station {
            None => station = Some(name.to_string()),
            Some(s) if s != name => {
                return Err(schema_err("station", format!("row {line} names station {name:?}, file started with {s:?}")))
            }
            _ => {}
        }
        if let Some(prev) = records.last() {
            let prev = prev.timestamp;
            let ordering = |detail: String| IngestError::Ordering { source_name: source_name.to_string(), row: line, detail };
            if timestamp <= prev {
                return Err(ordering(format!("timestamp {timestamp} does not follow {prev}")));
            }
            if timestamp != prev.succ() {
                return Err(ordering(format!("timestamp {timestamp} leaves a gap after {prev}; hourly rows expected")));
            }
        }
        records.push(StationRecord { timestamp, values, wd });
    }
    let station = station.ok_or_else(|| schema_err(SCHEMA[0], "no data rows".into()))?;
    Ok(StationSeries { station, records })
}

/// Loads every `*.csv` in `dir`, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<StationSeries>> {
    let io = |e: std::io::Error| IngestError::Io { path: dir.display().to_string(), message: e.to_string() };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(IngestError::Io { path: dir.display().to_string(), message: "no .csv files found".into() });
    }
    paths.iter().map(|p| load_csv(p)).collect()
}

/// Replaces each missing cell with the mean of that field's valid values
/// in the preceding calendar month, else over all earlier rows, else 0.
/// Only originally observed values enter the means.
pub fn fill_missing(series: &StationSeries) -> StationSeries {
    let mut out = series.clone();
    let Some(origin) = series.origin() else { return out };
    let months = series.records.last().map_or(0, |r| r.timestamp.months_since(&origin)) as usize + 1;
    for f in 0..NUMERIC_FIELDS.len() {
        let mut month_sum = vec![0.0; months];
        let mut month_count = vec![0usize; months];
        for r in &series.records {
            if let Some(v) = r.values[f] {
                let mi = r.timestamp.months_since(&origin) as usize;
                month_sum[mi] += v;
                month_count[mi] += 1;
            }
        }
        let mut hist_sum = 0.0;
        let mut hist_count = 0usize;
        for (r, o) in series.records.iter().zip(out.records.iter_mut()) {
            match r.values[f] {
                Some(v) => {
                    hist_sum += v;
                    hist_count += 1;
                }
                None => {
                    let mi = r.timestamp.months_since(&origin) as usize;
                    let fill = if mi > 0 && month_count[mi - 1] > 0 {
                        month_sum[mi - 1] / month_count[mi - 1] as f64
                    } else if hist_count > 0 {
                        hist_sum / hist_count as f64
                    } else {
                        0.0
                    };
                    o.values[f] = Some(fill);
                }
            }
        }
    }
    out
}

/// Two-pass mean; exact for constant inputs.
fn mean(values: impl Iterator<Item = f64> + Clone) -> Option<f64> {
    let (sum, n) = values.clone().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return None;
    }
    let first = sum / n as f64;
    let correction = values.map(|v| v - first).sum::<f64>() / n as f64;
    Some(first + correction)
}

/// How the monthly climatology is evaluated between month cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeasonalInterpolation {
    /// The cell of the row's calendar month.
    Step,
    /// Linear in time between the two nearest month centers, per hour.
    Linear,
}

/// Per-field additive climatology `ĉ(month, hour)` fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Climatology {
    pub training_months: u32,
    /// `cells[field][month − 1][hour]`, fields as in [`NUMERIC_FIELDS`].
    pub cells: Vec<Vec<[f64; 24]>>,
}

fn training_rows(series: &StationSeries, training_months: u32) -> impl Iterator<Item = &StationRecord> + Clone {
    let origin = series.origin();
    series
        .records
        .iter()
        .filter(move |r| origin.is_some_and(|o| r.timestamp.months_since(&o) < i64::from(training_months)))
}

fn require_filled(series: &StationSeries) -> Result<()> {
    for (f, name) in NUMERIC_FIELDS.iter().enumerate() {
        if series.records.iter().any(|r| r.values[f].is_none()) {
            return Err(IngestError::MissingValues { field: name.to_string() });
        }
    }
    Ok(())
}

/// Fits the climatology on the first `training_months` calendar months.
/// Cells without training rows take the field's training mean.
pub fn fit_climatology(series: &StationSeries, training_months: u32) -> Result<Climatology> {
    require_filled(series)?;
    if training_months == 0 {
        return Err(IngestError::InvalidParameter("training period must cover at least one month".into()));
    }
    let train: Vec<&StationRecord> = training_rows(series, training_months).collect();
    if train.is_empty() {
        return Err(IngestError::InvalidParameter("no rows inside the training period".into()));
    }
    let cell = |r: &StationRecord| (r.timestamp.month as usize - 1) * 24 + r.timestamp.hour as usize;
    let mut cells = Vec::with_capacity(NUMERIC_FIELDS.len());
    for f in 0..NUMERIC_FIELDS.len() {
        let value = |r: &StationRecord| r.values[f].unwrap_or_default();
        let overall = mean(train.iter().map(|r| value(r))).expect("non-empty training rows");
        // two passes, as in `mean`, so constant fields give exact cells
        let mut sum = [0.0f64; 288];
        let mut count = [0usize; 288];
        for r in &train {
            sum[cell(r)] += value(r);
            count[cell(r)] += 1;
        }
        let first: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| if n > 0 { s / n as f64 } else { overall }).collect();
        let mut correction = [0.0f64; 288];
        for r in &train {
            correction[cell(r)] += value(r) - first[cell(r)];
        }
        let table = (0..12)
            .map(|mo| {
                std::array::from_fn(|h| {
                    let i = mo * 24 + h;
                    if count[i] > 0 { first[i] + correction[i] / count[i] as f64 } else { overall }
                })
            })
            .collect();
        cells.push(table);
    }
    Ok(Climatology { training_months, cells })
}

impl Climatology {
    pub fn value(&self, field: usize, ts: &Timestamp, mode: SeasonalInterpolation) -> f64 {
        let table = &self.cells[field];
        let h = ts.hour as usize;
        match mode {
            SeasonalInterpolation::Step => table[ts.month as usize - 1][h],
            SeasonalInterpolation::Linear => {
                let u = ts.month_position() - 0.5;
                let lo = u.floor();
                let frac = u - lo;
                let a = table[(lo as i64).rem_euclid(12) as usize][h];
                let b = table[(lo as i64 + 1).rem_euclid(12) as usize][h];
                a + frac * (b - a)
            }
        }
    }

    /// Subtracts the climatology from every row, training and test alike.
    pub fn remove(&self, series: &StationSeries, mode: SeasonalInterpolation) -> Result<StationSeries> {
        require_filled(series)?;
        let mut out = series.clone();
        for r in &mut out.records {
            for (f, v) in r.values.iter_mut().enumerate() {
                let c = self.value(f, &r.timestamp, mode);
                *v = v.map(|x| x - c);
            }
        }
        Ok(out)
    }
}

/// Removes the (calendar month, hour-of-day) climatology fitted on the
/// first `training_months` months, interpolated linearly between months.
pub fn deseasonalize(series: &StationSeries, training_months: u32) -> Result<StationSeries> {
    fit_climatology(series, training_months)?.remove(series, SeasonalInterpolation::Linear)
}

/// Training-period mean and standard deviation of each dataset column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub column: String,
    pub mean: f64,
    pub std: f64,
}

/// Normalized regression data of one station, rows in timestamp order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub station: String,
    pub timestamps: Vec<Timestamp>,
    pub features: Vec<[f64; REGRESSION_DIM]>,
    pub targets: Vec<f64>,
    pub training_months: u32,
    /// Feature statistics in [`FEATURES`] order, then the target.
    pub stats: Vec<ColumnStats>,
}

/// Drops PM10 and wind direction and z-scores every remaining column with
/// training-period statistics (population standard deviation).
pub fn normalize_and_select(series: &StationSeries, training_months: u32) -> Result<Dataset> {
    require_filled(series)?;
    let columns: Vec<&str> = FEATURES.iter().copied().chain(std::iter::once(TARGET)).collect();
    let mut stats = Vec::with_capacity(columns.len());
    for name in &columns {
        let f = StationSeries::field_index(name).expect("known field");
        let train = training_rows(series, training_months).map(move |r| r.values[f].unwrap_or_default());
        let mu = mean(train.clone()).ok_or_else(|| IngestError::InvalidParameter("no rows inside the training period".into()))?;
        let var = mean(train.map(|v| (v - mu) * (v - mu))).unwrap_or(0.0);
        if !(var > 0.0) {
            return Err(IngestError::ConstantColumn { column: name.to_string() });
        }
        stats.push(ColumnStats { column: name.to_string(), mean: mu, std: var.sqrt() });
    }
    let z = |name: &str, idx: usize, r: &StationRecord| {
        let f = StationSeries::field_index(name).expect("known field");
        (r.values[f].unwrap_or_default() - stats[idx].mean) / stats[idx].std
    };
    let features = series
        .records
        .iter()
        .map(|r| std::array::from_fn(|j| z(FEATURES[j], j, r)))
        .collect();
    let targets = series.records.iter().map(|r| z(TARGET, REGRESSION_DIM, r)).collect();
    Ok(Dataset {
        station: series.station.clone(),
        timestamps: series.records.iter().map(|r| r.timestamp).collect(),
        features,
        targets,
        training_months,
        stats,
    })
}

/// Sidecar written next to a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub station: String,
    pub source_rows: usize,
    pub filled_cells: usize,
    pub training_months: u32,
    pub interpolation: SeasonalInterpolation,
    pub stats: Vec<ColumnStats>,
    pub climatology: Climatology,
}

/// Fill, deseasonalize and normalize one station.
pub fn prepare_station(series: &StationSeries, training_months: u32) -> Result<(Dataset, DatasetSidecar)> {
    let filled = fill_missing(series);
    let climatology = fit_climatology(&filled, training_months)?;
    let adjusted = climatology.remove(&filled, SeasonalInterpolation::Linear)?;
    let dataset = normalize_and_select(&adjusted, training_months)?;
    let sidecar = DatasetSidecar {
        station: series.station.clone(),
        source_rows: series.records.len(),
        filled_cells: series.missing_cells(),
        training_months,
        interpolation: SeasonalInterpolation::Linear,
        stats: dataset.stats.clone(),
        climatology,
    };
    Ok((dataset, sidecar))
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn origin(&self) -> Option<Timestamp> {
        self.timestamps.first().copied()
    }

    /// Rows of months `start_month ..= start_month + n_months − 1`
    /// (1-based, counted from the dataset's first month).
    pub fn window(&self, start_month: u32, n_months: u32) -> Result<Vec<RegressionSample>> {
        let origin = self.origin().ok_or_else(|| IngestError::InvalidParameter("empty dataset".into()))?;
        if start_month == 0 {
            return Err(IngestError::InvalidParameter("months are numbered from 1".into()));
        }
        let lo = i64::from(start_month) - 1;
        let hi = lo + i64::from(n_months);
        let rows: Vec<RegressionSample> = self
            .timestamps
            .iter()
            .zip(self.features.iter().zip(&self.targets))
            .filter(|(ts, _)| (lo..hi).contains(&ts.months_since(&origin)))
            .map(|(_, (x, y))| RegressionSample { x: *x, y: *y })
            .collect();
        if rows.is_empty() {
            return Err(IngestError::InvalidParameter(format!(
                "station {} has no rows in months {start_month}..{}",
                self.station,
                hi
            )));
        }
        Ok(rows)
    }

    /// CSV with header `timestamp, <features>, PM2.5`.
    pub fn write_csv<W: Write>(&self, writer: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp"];
        header.extend(FEATURES);
        header.push(TARGET);
        w.write_record(&header)?;
        for ((ts, x), y) in self.timestamps.iter().zip(&self.features).zip(&self.targets) {
            let mut rec = vec![ts.to_string()];
            rec.extend(x.iter().map(|v| v.to_string()));
            rec.push(y.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A client's contiguous slice of one station's training period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientWindow {
    pub station: String,
    pub start_month: u32,
    pub n_months: u32,
}

/// Draws `count` windows uniformly with replacement over stations and
/// legal start months `1 ..= 37 − n_months`.
pub fn partition_clients(stations: &[String], n_months: u32, count: usize, key: RngKey) -> Result<Vec<ClientWindow>> {
    if n_months == 0 || n_months > TRAINING_MONTHS {
        return Err(IngestError::InvalidParameter(format!("window of {n_months} months does not fit in {TRAINING_MONTHS}")));
    }
    if count == 0 {
        return Err(IngestError::InvalidParameter("need at least one client".into()));
    }
    if stations.is_empty() {
        return Err(IngestError::InvalidParameter("no stations".into()));
    }
    let starts = u64::from(TRAINING_MONTHS - n_months + 1);
    let mut rng = key.rng();
    Ok((0..count)
        .map(|_| {
            let station = stations[below(&mut rng, stations.len() as u64) as usize].clone();
            let start_month = below(&mut rng, starts) as u32 + 1;
            ClientWindow { station, start_month, n_months }
        })
        .collect())
}

/// Regression problem whose clients read the given windows.
pub fn build_regression(datasets: &[Dataset], windows: &[ClientWindow], lambda: f64) -> Result<RegressionProblem> {
    let mut clients = Vec::with_capacity(windows.len());
    for w in windows {
        let ds = datasets
            .iter()
            .find(|d| d.station == w.station)
            .ok_or_else(|| IngestError::InvalidParameter(format!("unknown station {:?}", w.station)))?;
        let rows: Arc<[RegressionSample]> = ds.window(w.start_month, w.n_months)?.into();
        clients.push(RegressionClient::new(rows)?);
    }
    Ok(RegressionProblem::new(clients, lambda)?)
}

/// `ρ(ℓ) = Σ(v_t − v̄)(v_{t+ℓ} − v̄) / Σ(v_t − v̄)²` for `ℓ = 0..=max_lag`.
pub fn autocorrelation(values: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if values.len() <= max_lag {
        return Err(IngestError::InvalidParameter(format!(
            "series of length {} is too short for lag {max_lag}",
            values.len()
        )));
    }
    let mu = mean(values.iter().copied()).expect("non-empty");
    let centered: Vec<f64> = values.iter().map(|v| v - mu).collect();
    let denom: f64 = centered.iter().map(|v| v * v).sum();
    if !(denom > 0.0) {
        return Err(IngestError::UndefinedAutocorrelation);
    }
    Ok((0..=max_lag)
        .map(|lag| {
            if lag == 0 {
                return 1.0;
            }
            centered.iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / denom
        })
        .collect())
}
