//! Observation files: CSV with columns `index,value`.
//!
//! Indices are consecutive integers (generations or calendar years); values
//! are non-negative integers or `NA`. An optional last row `phi,<int>`
//! carries the progenitor count of the second-to-last generation.

use std::fmt::Write as _;
use std::path::Path;

use cbp_abc::ObservedSample;

use crate::error::{CliError, Result};

/// A parsed observation file.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    /// Index of the first row (0 for generations, a year for annual series).
    pub first_index: i64,
    pub sample: ObservedSample,
}

pub fn load_observations(path: &Path) -> Result<Observations> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_observations(&text, path)
}

pub fn parse_observations(text: &str, path: &Path) -> Result<Observations> {
    let row_err = |row: usize, message: String| CliError::DataRow {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut first_index: Option<i64> = None;
    let mut sizes: Vec<Option<u64>> = Vec::new();
    let mut phi: Option<u64> = None;
    let mut seen_header = false;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let row = record.position().map_or(i + 1, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(row_err(row, format!("expected 2 columns, found {}", record.len())));
        }
        let (index, value) = (&record[0], &record[1]);
        if index.eq_ignore_ascii_case("index") && !seen_header && sizes.is_empty() {
            seen_header = true;
            continue;
        }
        if phi.is_some() {
            return Err(row_err(row, "the `phi` row must be the last row".into()));
        }
        if index == "phi" {
            let v = value
                .parse::<u64>()
                .map_err(|_| row_err(row, format!("phi must be a non-negative integer, got `{value}`")))?;
            phi = Some(v);
            continue;
        }
        let idx: i64 = index
            .parse()
            .map_err(|_| row_err(row, format!("index must be an integer or `phi`, got `{index}`")))?;
        match first_index {
            None => first_index = Some(idx),
            Some(f) if idx != f + sizes.len() as i64 => {
                return Err(row_err(
                    row,
                    format!(
                        "indices must be consecutive: expected {}, got {idx}",
                        f + sizes.len() as i64
                    ),
                ))
            }
            Some(_) => {}
        }
        let size = if value == "NA" {
            None
        } else {
            Some(value.parse::<u64>().map_err(|_| {
                row_err(
                    row,
                    format!("value must be a non-negative integer or NA, got `{value}`"),
                )
            })?)
        };
        sizes.push(size);
    }
    let first_index = first_index.ok_or_else(|| CliError::Data(format!("{}: no observations", path.display())))?;
    let sample = ObservedSample::new(sizes, phi).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(Observations { first_index, sample })
}

pub fn format_observations(obs: &Observations) -> String {
    let mut out = String::from("index,value\n");
    for (i, z) in obs.sample.sizes.iter().enumerate() {
        let idx = obs.first_index + i as i64;
        match z {
            Some(z) => writeln!(out, "{idx},{z}"),
            None => writeln!(out, "{idx},NA"),
        }
        .expect("writing to a string");
    }
    if let Some(phi) = obs.sample.last_progenitors {
        writeln!(out, "phi,{phi}").expect("writing to a string");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Observations> {
        parse_observations(text, Path::new("obs.csv"))
    }

    #[test]
    fn header_na_and_phi() {
        let obs = parse("index,value\n0,1\n1,NA\n2,6\nphi,4\n").unwrap();
        assert_eq!(obs.first_index, 0);
        assert_eq!(obs.sample.sizes, vec![Some(1), None, Some(6)]);
        assert_eq!(obs.sample.last_progenitors, Some(4));
    }

    #[test]
    fn years_as_index() {
        let obs = parse("1975, 1694\n1976, 1742\n1977, 2082\n").unwrap();
        assert_eq!(obs.first_index, 1975);
        assert_eq!(obs.sample.sizes.len(), 3);
    }

    #[test]
    fn round_trip() {
        let obs = parse("index,value\n3,10\n4,NA\n5,12\nphi,7\n").unwrap();
        assert_eq!(parse(&format_observations(&obs)).unwrap(), obs);
    }

    fn row_of(e: CliError) -> usize {
        match e {
            CliError::DataRow { row, .. } => row,
            other => panic!("expected a row error, got {other}"),
        }
    }

    #[test]
    fn errors_carry_rows() {
        assert!(matches!(parse(""), Err(CliError::Data(_))));
        assert!(matches!(parse("index,value\n"), Err(CliError::Data(_))));
        assert_eq!(row_of(parse("index,value\n0,1\n1,x\n").unwrap_err()), 3);
        assert_eq!(row_of(parse("0,1\n2,5\n").unwrap_err()), 2);
        assert_eq!(row_of(parse("0,1\nphi,1\n1,3\n").unwrap_err()), 3);
        assert_eq!(row_of(parse("0,1,2\n").unwrap_err()), 1);
        assert_eq!(row_of(parse("0,1\n1,-3\n").unwrap_err()), 2);
        assert_eq!(row_of(parse("0,1\nphi,NA\n").unwrap_err()), 2);
    }

    #[test]
    fn invalid_sample_is_a_data_error() {
        // the first generation must be observed
        let e = parse("0,NA\n1,4\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
