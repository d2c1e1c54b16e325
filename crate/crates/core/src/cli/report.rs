//! Report rows, JSON envelopes and plain-text tables.
//!
//! Table cells are derived from the JSON text of each number, rounded half to
//! even at the displayed precision, so tables never disagree with JSON.

use serde::Serialize;
use serde_json::Value;

use crate::estimator::PathPoint;
use crate::pipeline::{LinearEstimate, Provenance};

pub const SCHEMA_ID: &str = "honest-ate/report";
pub const SCHEMA_VERSION: u32 = 1;

/// One estimator, flattened for output.
#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub c: f64,
    pub estimator: &'static str,
    pub criterion: Option<&'static str>,
    pub point: Option<PathPoint>,
    pub delta: Option<f64>,
    pub m: Option<usize>,
    pub estimate: f64,
    pub maxbias: f64,
    pub se_homoskedastic: f64,
    pub se_robust: f64,
    pub cv: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub one_sided_lower: f64,
    pub one_sided_upper: f64,
    pub lindeberg: f64,
}

impl Row {
    pub fn from_estimate(e: &LinearEstimate) -> Self {
        let (estimator, criterion, point, delta, m) = match e.provenance {
            Provenance::Optimal {
                criterion,
                point,
                delta,
            } => (
                match point {
                    PathPoint::Zero => "optimal_limit_zero",
                    PathPoint::Infinity => "optimal_limit_infinity",
                    PathPoint::Mu(_) => "optimal",
                },
                criterion.map(|c| c.name()),
                Some(point),
                delta.is_finite().then_some(delta),
                None,
            ),
            Provenance::Matching { m } => ("matching", None, None, None, Some(m)),
            Provenance::DifferenceInMeans => ("difference_in_means", None, None, None, None),
            Provenance::Supplied => ("supplied", None, None, None, None),
        };
        Self {
            c: e.c,
            estimator,
            criterion,
            point,
            delta,
            m,
            estimate: e.estimate,
            maxbias: e.maxbias,
            se_homoskedastic: e.sd_homoskedastic,
            se_robust: e.se_robust,
            cv: e.cv,
            ci_lower: e.flci.lower.unwrap_or(f64::NAN),
            ci_upper: e.flci.upper.unwrap_or(f64::NAN),
            one_sided_lower: e.lower.lower.unwrap_or(f64::NAN),
            one_sided_upper: e.upper.upper.unwrap_or(f64::NAN),
            lindeberg: e.lindeberg,
        }
    }

    pub fn with_criterion(mut self, name: &'static str) -> Self {
        self.criterion = Some(name);
        self
    }
}

/// The top-level JSON object of every command.
#[derive(Debug, Serialize)]
pub struct Envelope<C: Serialize, R: Serialize> {
    pub schema: &'static str,
    pub version: u32,
    pub command: &'static str,
    pub config: C,
    pub results: R,
}

/// Rounds the decimal string of a JSON number half to even at `digits`
/// places after the point.
pub fn round_half_even(repr: &str, digits: usize) -> String {
    let (neg, body) = match repr.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, repr),
    };
    let (mant, exp) = match body.find(['e', 'E']) {
        Some(i) => (&body[..i], body[i + 1..].parse::<i64>().unwrap_or(0)),
        None => (body, 0),
    };
    let (int_part, frac_part) = mant.split_once('.').unwrap_or((mant, ""));
    let mut ds: Vec<u8> = int_part.bytes().chain(frac_part.bytes()).map(|b| b - b'0').collect();
    let mut point = int_part.len() as i64 + exp;
    let lead = ds.iter().take_while(|&&d| d == 0).count();
    ds.drain(..lead);
    point -= lead as i64;

    let keep = point + digits as i64;
    let kept: Vec<u8> = if keep <= 0 {
        // everything lies beyond the last displayed place
        let up = keep == 0 && !ds.is_empty() && (ds[0] > 5 || (ds[0] == 5 && ds[1..].iter().any(|&d| d != 0)));
        point = -(digits as i64);
        if up {
            point += 1;
            vec![1]
        } else {
            Vec::new()
        }
    } else if keep as usize >= ds.len() {
        ds
    } else {
        let k = keep as usize;
        let first = ds[k];
        let rest_nonzero = ds[k + 1..].iter().any(|&d| d != 0);
        let mut kept = ds[..k].to_vec();
        let odd = kept.last().is_some_and(|d| d % 2 == 1);
        if first > 5 || (first == 5 && (rest_nonzero || odd)) {
            let mut i = kept.len();
            loop {
                if i == 0 {
                    kept.insert(0, 1);
                    point += 1;
                    break;
                }
                i -= 1;
                if kept[i] == 9 {
                    kept[i] = 0;
                } else {
                    kept[i] += 1;
                    break;
                }
            }
        }
        kept
    };

    // lay the digits out around the point
    let mut int_digits = String::new();
    let mut frac_digits = String::new();
    let total = digits as i64;
    let int_len = point.max(0);
    for i in 0..int_len {
        int_digits.push((b'0' + kept.get(i as usize).copied().unwrap_or(0)) as char);
    }
    if int_digits.is_empty() {
        int_digits.push('0');
    }
    for j in 0..total {
        let idx = point + j;
        let d = if idx < 0 { 0 } else { kept.get(idx as usize).copied().unwrap_or(0) };
        frac_digits.push((b'0' + d) as char);
    }
    let zero = int_digits.bytes().all(|b| b == b'0') && frac_digits.bytes().all(|b| b == b'0');
    let sign = if neg && !zero { "-" } else { "" };
    if digits == 0 {
        format!("{sign}{int_digits}")
    } else {
        format!("{sign}{int_digits}.{frac_digits}")
    }
}

/// Renders a JSON value for a table cell.
pub fn cell(v: &Value, digits: usize) -> String {
    match v {
        Value::Null => "-".to_string(),
        Value::Number(n) => {
            if n.is_f64() {
                round_half_even(&n.to_string(), digits)
            } else {
                n.to_string()
            }
        }
        Value::String(s) => s.clone(),
        Value::Bool(b) => b.to_string(),
        other => other.to_string(),
    }
}

/// A left-aligned first column and right-aligned remaining columns.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let k = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let mut out = String::new();
        for (i, c) in cells.iter().enumerate().take(k) {
            if i > 0 {
                out.push_str("  ");
            }
            if i == 0 {
                out.push_str(&format!("{:<w$}", c, w = width[i]));
            } else {
                out.push_str(&format!("{:>w$}", c, w = width[i]));
            }
        }
        out.trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (k - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

/// Column keys and headers of an estimator table.
pub const ROW_COLUMNS: [(&str, &str); 12] = [
    ("estimator", "estimator"),
    ("criterion", "criterion"),
    ("c", "C"),
    ("delta", "delta"),
    ("m", "M"),
    ("estimate", "estimate"),
    ("maxbias", "max bias"),
    ("se_homoskedastic", "se (homosk.)"),
    ("se_robust", "se (robust)"),
    ("cv", "cv"),
    ("ci_lower", "CI lower"),
    ("ci_upper", "CI upper"),
];

/// Renders serialized rows with [`ROW_COLUMNS`].
pub fn rows_table(rows: &[Value], digits: usize) -> String {
    let header: Vec<&str> = ROW_COLUMNS.iter().map(|c| c.1).collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| ROW_COLUMNS.iter().map(|(key, _)| cell(&r[*key], digits)).collect())
        .collect();
    render_table(&header, &body)
}
