//! `report.csv` and a human-readable table.
//!
//! Site labels in the report are one-based. Reals are written with 17
//! significant digits, enough for `parse_report_csv(write_report_csv(r)) == r`.
//! Columns without inference (DCW) are left empty.

use crate::dac::{EstimateReport, Estimator, Inference};
use crate::data::{SiteId, SiteSet, MAX_SITES};
use crate::wire_real::parse_real;

use super::ProtoError;

const HEADER: [&str; 12] =
    ["method", "k", "k_prime", "subset", "tau_hat", "mu_k", "mu_k_prime", "variance", "std_error", "ci_low", "ci_high", "p_value"];

fn real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "NA".into()
    }
}

pub fn write_report_csv(reports: &[EstimateReport]) -> Result<String, ProtoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| ProtoError::Transport(e.to_string());
    w.write_record(HEADER).map_err(io)?;
    for r in reports {
        let mut row = vec![
            r.method.to_string(),
            r.k.label().to_string(),
            r.k_prime.label().to_string(),
            r.subset.to_string(),
            real(r.tau_hat),
            real(r.mu_k),
            real(r.mu_k_prime),
        ];
        match &r.inference {
            Some(i) => row.extend([i.variance, i.std_error, i.ci_low, i.ci_high, i.p_value].map(real)),
            None => row.extend(std::iter::repeat_n(String::new(), 5)),
        }
        w.write_record(&row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| ProtoError::Transport(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn parse_label(s: &str) -> Result<SiteId, ProtoError> {
    match s.trim().parse::<usize>() {
        Ok(l) if (1..=MAX_SITES).contains(&l) => Ok(SiteId(l - 1)),
        _ => Err(ProtoError::SchemaViolation(format!("bad site label {s:?}"))),
    }
}

/// Parses `{1,3}` into a site set.
pub fn parse_subset(s: &str) -> Result<SiteSet, ProtoError> {
    let inner = s
        .trim()
        .strip_prefix('{')
        .and_then(|t| t.strip_suffix('}'))
        .ok_or_else(|| ProtoError::SchemaViolation(format!("bad subset {s:?}")))?;
    let sites: Vec<SiteId> = inner.split(',').map(parse_label).collect::<Result<_, _>>()?;
    if sites.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ProtoError::SchemaViolation(format!("subset {s:?} is not strictly ascending")));
    }
    Ok(SiteSet::from_sites(sites.iter().map(|s| s.index())))
}

pub fn parse_report_csv(text: &str) -> Result<Vec<EstimateReport>, ProtoError> {
    let bad = |msg: String| ProtoError::SchemaViolation(msg);
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(HEADER) {
        return Err(bad(format!("unexpected report header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| parse_real(&rec[i]).ok_or_else(|| bad(format!("row {}: bad {} value {:?}", line + 1, HEADER[i], &rec[i])));
        let method = match &rec[0] {
            "DAC" => Estimator::Dac,
            "DOR" => Estimator::Dor,
            "DCW" => Estimator::Dcw,
            m => return Err(bad(format!("row {}: unknown method {m:?}", line + 1))),
        };
        let inference = if (7..12).all(|i| rec[i].is_empty()) {
            None
        } else {
            Some(Inference { variance: num(7)?, std_error: num(8)?, ci_low: num(9)?, ci_high: num(10)?, p_value: num(11)? })
        };
        out.push(EstimateReport {
            method,
            k: parse_label(&rec[1])?,
            k_prime: parse_label(&rec[2])?,
            subset: parse_subset(&rec[3])?,
            tau_hat: num(4)?,
            mu_k: num(5)?,
            mu_k_prime: num(6)?,
            inference,
        });
    }
    Ok(out)
}

/// `%g`-style formatting with `digits` significant digits.
pub fn format_significant(x: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    // Rounding can carry into the next decade (9.9996 → 10.00).
    let sci = format!("{:.*e}", digits - 1, x);
    let exp = sci.split('e').nth(1).and_then(|e| e.parse::<i32>().ok()).unwrap_or(exp);
    if exp < -4 || exp >= digits as i32 {
        let (mantissa, e) = sci.split_once('e').expect("scientific format has an exponent");
        let mantissa = trim_zeros(mantissa);
        format!("{mantissa}e{}{:02}", if e.starts_with('-') { '-' } else { '+' }, e.trim_start_matches('-').parse::<i32>().unwrap_or(0))
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Fixed-width table at four significant digits.
pub fn render_table(reports: &[EstimateReport]) -> String {
    let head = ["method", "k", "k'", "subset", "tau_hat", "std_error", "ci_low", "ci_high", "p_value"];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let g = |x: f64| format_significant(x, 4);
            let inf = |f: fn(&Inference) -> f64| r.inference.as_ref().map(|i| g(f(i))).unwrap_or_else(|| "-".into());
            vec![
                r.method.to_string(),
                r.k.to_string(),
                r.k_prime.to_string(),
                r.subset.to_string(),
                g(r.tau_hat),
                inf(|i| i.std_error),
                inf(|i| i.ci_low),
                inf(|i| i.ci_high),
                inf(|i| i.p_value),
            ]
        })
        .collect();
    let widths: Vec<usize> =
        (0..head.len()).map(|c| rows.iter().map(|r| r[c].len()).chain([head[c].len()]).max().unwrap_or(0)).collect();
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(head.to_vec());
    for r in &rows {
        out += &line(r.iter().map(String::as_str).collect());
    }
    out
}
