//! CSV ingestion and norm/weight file parsing.
//!
//! The CSV contract: a header row, UTF-8, `.` as the decimal point, and a
//! treatment column holding `0` or `1`.

use std::path::Path;

use super::CliError;
use crate::data::{Exponent, NormSpec, Sample};

/// The columns of a loaded CSV file, in input order.
#[derive(Debug, Clone)]
pub struct Columns {
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64, CliError> {
    let v: f64 = raw.trim().parse().map_err(|_| {
        CliError::Data(format!("row {row}, column {column:?}: cannot parse {raw:?} as a number"))
    })?;
    if !v.is_finite() {
        return Err(CliError::Data(format!("row {row}, column {column:?}: value {raw:?} is not finite")));
    }
    Ok(v)
}

/// Reads a sample. Without an explicit covariate list every column other than
/// the outcome and treatment is a covariate.
pub fn load_sample(
    path: &Path,
    outcome: &str,
    treatment: &str,
    covariates: Option<&[String]>,
) -> Result<(Sample, Columns), CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("cannot read the header of {}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str, role: &str| -> Result<usize, CliError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Config(format!("{role} column {name:?} not found in {}", path.display())))
    };
    let y_col = find(outcome, "outcome")?;
    let d_col = find(treatment, "treatment")?;
    if y_col == d_col {
        return Err(CliError::Config("outcome and treatment must be different columns".into()));
    }
    let x_names: Vec<String> = match covariates {
        Some(list) => list.to_vec(),
        None => headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != y_col && i != d_col)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    if x_names.is_empty() {
        return Err(CliError::Config("no covariate columns".into()));
    }
    let mut x_cols = Vec::with_capacity(x_names.len());
    for name in &x_names {
        let c = find(name, "covariate")?;
        if c == y_col || c == d_col {
            return Err(CliError::Config(format!("column {name:?} cannot be both a covariate and the outcome or treatment")));
        }
        x_cols.push(c);
    }

    let mut x = Vec::new();
    let mut d = Vec::new();
    let mut y = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        // data rows are numbered from 2; the header is row 1
        let row = k + 2;
        let rec = rec.map_err(|e| CliError::Data(format!("row {row}: {e}")))?;
        if rec.len() != headers.len() {
            return Err(CliError::Data(format!(
                "row {row}: expected {} fields, found {}",
                headers.len(),
                rec.len()
            )));
        }
        let dv = match rec[d_col].trim() {
            "0" | "0.0" => false,
            "1" | "1.0" => true,
            other => {
                return Err(CliError::Data(format!(
                    "row {row}, column {treatment:?}: treatment must be 0 or 1, found {other:?}"
                )))
            }
        };
        d.push(dv);
        y.push(parse_cell(&rec[y_col], row, outcome)?);
        for (&c, name) in x_cols.iter().zip(&x_names) {
            x.push(parse_cell(&rec[c], row, name)?);
        }
    }
    if d.is_empty() {
        return Err(CliError::Data(format!("{} has no data rows", path.display())));
    }
    let sample = Sample::from_flat(x_names.len(), x, d, Some(y)).map_err(|e| CliError::Data(e.to_string()))?;
    Ok((
        sample,
        Columns {
            outcome: outcome.to_string(),
            treatment: treatment.to_string(),
            covariates: x_names,
        },
    ))
}

/// Comma-separated list of numbers.
pub fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|v| {
            let t = v.trim();
            t.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| CliError::Config(format!("{what}: cannot parse {t:?} as a number")))
        })
        .collect()
}

/// A grid of Lipschitz constants: positive and strictly ascending.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let grid = parse_list(s, "--C-grid")?;
    if grid.is_empty() {
        return Err(CliError::Config("--C-grid is empty".into()));
    }
    if grid.iter().any(|&c| !(c > 0.0)) {
        return Err(CliError::Config("--C-grid values must be positive".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::Config("--C-grid must be strictly ascending".into()));
    }
    Ok(grid)
}

/// `a:b` or a single `m`.
pub fn parse_range(s: &str) -> Result<std::ops::RangeInclusive<usize>, CliError> {
    let bad = || CliError::Config(format!("--M-range must look like 1:40, got {s:?}"));
    let (a, b) = match s.split_once(':') {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
        None => {
            let m = s.trim().parse().map_err(|_| bad())?;
            (m, m)
        }
    };
    if a == 0 || b < a {
        return Err(bad());
    }
    Ok(a..=b)
}

/// The analysis norm from `--norm-diag` or `--norm-file`; identity otherwise.
pub fn build_norm(diag: Option<&str>, file: Option<&Path>, p: Exponent, dim: usize) -> Result<NormSpec, CliError> {
    let norm = match (diag, file) {
        (Some(_), Some(_)) => return Err(CliError::Config("give either --norm-diag or --norm-file, not both".into())),
        (Some(d), None) => NormSpec::diagonal(parse_list(d, "--norm-diag")?, p).map_err(|e| CliError::Config(e.to_string()))?,
        (None, Some(f)) => {
            let text = std::fs::read_to_string(f)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", f.display())))?;
            let rows: Vec<Vec<f64>> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .enumerate()
                .map(|(i, l)| {
                    l.split(|c: char| c == ',' || c.is_whitespace())
                        .filter(|t| !t.is_empty())
                        .map(|t| {
                            t.parse::<f64>().map_err(|_| {
                                CliError::Config(format!("{} line {}: cannot parse {t:?}", f.display(), i + 1))
                            })
                        })
                        .collect()
                })
                .collect::<Result<_, _>>()?;
            let k = rows.len();
            if rows.iter().any(|r| r.len() != k) {
                return Err(CliError::Config(format!("{} must hold a square matrix", f.display())));
            }
            let data: Vec<f64> = rows.concat();
            if p == Exponent::Two {
                NormSpec::full(k, data).map_err(|e| CliError::Config(e.to_string()))?
            } else {
                let off = (0..k).any(|r| (0..k).any(|c| r != c && data[r * k + c] != 0.0));
                if off {
                    return Err(CliError::Config("a non-diagonal scaling matrix requires --p 2".into()));
                }
                NormSpec::diagonal((0..k).map(|r| data[r * k + r]).collect(), p)
                    .map_err(|e| CliError::Config(e.to_string()))?
            }
        }
        (None, None) => NormSpec::identity(dim, p),
    };
    if norm.dim() != dim {
        return Err(CliError::Config(format!(
            "the norm has dimension {} but there are {dim} covariates",
            norm.dim()
        )));
    }
    Ok(norm)
}

/// One weight per line; a non-numeric first line is taken as a header.
pub fn load_weights(path: &Path) -> Result<Vec<f64>, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim().trim_end_matches(',');
        if t.is_empty() {
            continue;
        }
        match t.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            _ if i == 0 => continue,
            _ => {
                return Err(CliError::Data(format!(
                    "{} line {}: cannot parse {t:?} as a weight",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_and_reports_locations() {
        let f = write("y,d,x1,x2\n1.5,1,0,1\n0.5,0,1,2\n");
        let (s, cols) = load_sample(f.path(), "y", "d", None).unwrap();
        assert_eq!(cols.covariates, vec!["x1", "x2"]);
        assert_eq!(s.x(1), &[1.0, 2.0]);
        assert!(s.is_treated(0));

        let f = write("y,d,x\n1,1,0\n2,0,abc\n");
        let err = load_sample(f.path(), "y", "d", None).unwrap_err();
        assert!(matches!(&err, CliError::Data(m) if m.contains("row 3") && m.contains("\"x\"")), "{err:?}");

        let f = write("y,d,x\n1,2,0\n");
        assert!(matches!(load_sample(f.path(), "y", "d", None), Err(CliError::Data(_))));
        let err = load_sample(f.path(), "y", "treat", None).unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.contains("treat")));
    }

    #[test]
    fn grids_and_ranges() {
        assert_eq!(parse_grid("0.5, 1,2").unwrap(), vec![0.5, 1.0, 2.0]);
        assert!(parse_grid("1,1").is_err());
        assert!(parse_grid("0,1").is_err());
        assert_eq!(parse_range("2:5").unwrap(), 2..=5);
        assert_eq!(parse_range("3").unwrap(), 3..=3);
        assert!(parse_range("0:2").is_err());
    }

    #[test]
    fn weights_with_header() {
        let f = write("k\n-1\n1\n");
        assert_eq!(load_weights(f.path()).unwrap(), vec![-1.0, 1.0]);
    }
}
