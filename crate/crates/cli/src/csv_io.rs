//! Dataset CSV format.
//!
//! A header row is required. `time` and `status` are mandatory, `time2` is the
//! upper bound of interval-censored rows and may be absent otherwise. Every
//! other column is a numeric covariate, in header order.
//!
//! | status   | meaning                               |
//! |----------|---------------------------------------|
//! | exact    | event at `time`                       |
//! | right    | event after `time`                    |
//! | left     | event at or before `time`             |
//! | interval | event in (`time`, `time2`]; `time2` may be `inf` |

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use tramsurv::{CensoringKind, Observation, SurvivalDataset};

use crate::error::{CliError, CliResult};

const TIME: &str = "time";
const TIME2: &str = "time2";
const STATUS: &str = "status";

pub fn parse_dataset_csv(path: &Path) -> CliResult<SurvivalDataset> {
    if !path.exists() {
        return Err(CliError::DataNotFound(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_dataset(file)
}

fn parse_time(row: usize, column: &str, value: &str) -> CliResult<f64> {
    value.trim().parse::<f64>().map_err(|_| CliError::BadTime {
        row,
        column: column.to_string(),
        value: value.to_string(),
    })
}

/// Parses a dataset; row numbers in errors count data rows from 1. Values are
/// checked for format here and for consistency by `validate_dataset`.
pub fn read_dataset(reader: impl Read) -> CliResult<SurvivalDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Csv(e.to_string()))?
        .clone();
    let position = |name: &str| headers.iter().position(|h| h == name);
    let missing = |column: &str| CliError::MissingColumn {
        row: 0,
        column: column.to_string(),
    };
    let time_col = position(TIME).ok_or_else(|| missing(TIME))?;
    let status_col = position(STATUS).ok_or_else(|| missing(STATUS))?;
    let time2_col = position(TIME2);
    let covariate_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| ![TIME, TIME2, STATUS].contains(&&headers[i]))
        .collect();
    let feature_names = covariate_cols
        .iter()
        .map(|&i| headers[i].to_string())
        .collect();

    let mut observations = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| CliError::Csv(e.to_string()))?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let status_raw = field(status_col);
        let status: CensoringKind = status_raw.parse().map_err(|_| CliError::BadStatusValue {
            row,
            value: status_raw.to_string(),
        })?;
        let time = parse_time(row, TIME, field(time_col))?;
        let covariates = covariate_cols
            .iter()
            .map(|&i| {
                field(i)
                    .parse::<f64>()
                    .map_err(|_| CliError::NonNumericCovariate {
                        row,
                        column: headers[i].to_string(),
                        value: field(i).to_string(),
                    })
            })
            .collect::<CliResult<Vec<f64>>>()?;
        observations.push(match status {
            CensoringKind::Exact => Observation::exact(time, covariates),
            CensoringKind::RightCensored => Observation::right_censored(time, covariates),
            CensoringKind::LeftCensored => Observation::left_censored(time, covariates),
            CensoringKind::IntervalCensored => {
                let col = time2_col.ok_or(CliError::MissingColumn {
                    row,
                    column: TIME2.to_string(),
                })?;
                let upper = parse_time(row, TIME2, field(col))?;
                Observation::interval_censored(time, upper, covariates)
            }
        });
    }
    Ok(SurvivalDataset::new(observations, feature_names))
}

/// Writes floats in shortest round-trip form; `time2` is present only when
/// some row is interval-censored.
pub fn write_dataset(writer: impl Write, dataset: &SurvivalDataset) -> CliResult<()> {
    let with_time2 = dataset
        .observations
        .iter()
        .any(|o| o.censoring == CensoringKind::IntervalCensored);
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![TIME.to_string()];
    if with_time2 {
        header.push(TIME2.to_string());
    }
    header.push(STATUS.to_string());
    header.extend(dataset.feature_names.iter().cloned());
    wtr.write_record(&header)
        .map_err(|e| CliError::Csv(e.to_string()))?;
    for obs in &dataset.observations {
        let time = match obs.censoring {
            CensoringKind::LeftCensored => obs.time_upper,
            _ => obs.time_lower,
        };
        let mut row = vec![time.to_string()];
        if with_time2 {
            row.push(if obs.censoring == CensoringKind::IntervalCensored {
                obs.time_upper.to_string()
            } else {
                String::new()
            });
        }
        row.push(obs.censoring.as_str().to_string());
        row.extend(obs.covariates.iter().map(f64::to_string));
        wtr.write_record(&row)
            .map_err(|e| CliError::Csv(e.to_string()))?;
    }
    wtr.flush().map_err(|e| CliError::Csv(e.to_string()))?;
    Ok(())
}

pub fn write_dataset_csv(path: &Path, dataset: &SurvivalDataset) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_dataset(file, dataset)
}
