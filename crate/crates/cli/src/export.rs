//! Tidy CSV views of JSON reports, one observation per row.
//!
//! | kind             | columns                                                                               |
//! |------------------|---------------------------------------------------------------------------------------|
//! | `ldp`            | eps, hits, n, p_hat, ci_lo, ci_hi, eps_log_p, margin                                  |
//! | `exit-scaling`   | eps, n, n_censored, mean_tau, mean_tau_lower, median_tau, eps_log_mean_tau, window_prob, V_ref |
//! | `exit-place`     | cell, count, freq, ci_lo, ci_hi                                                       |
//! | `sweep`          | index, distance_from_center, margin, pass                                             |
//! | `quasipotential` | horizon, action, converged                                                            |
//! | `verify`         | index, x0_norm, stays_in_domain, final_distance, attracted                            |
//!
//! Non-finite values appear as the literals `inf`, `-inf` and `nan`; a
//! missing value (for example `mean_tau` when every path is censored) is an
//! empty cell. Files are UTF-8 with LF line endings.

use serde_json::Value;

use crate::error::CliError;

pub const KINDS: [&str; 6] = ["ldp", "exit-scaling", "exit-place", "sweep", "quasipotential", "verify"];

/// Formats a float for CSV output, round-trip exact.
pub fn num(v: f64) -> String {
    if let Some(t) = fwspde_core::floats::text(v) {
        return t.to_string();
    }
    let a = v.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn cell(v: Option<&Value>) -> String {
    match v {
        None | Some(Value::Null) => String::new(),
        Some(Value::Bool(b)) => b.to_string(),
        Some(Value::Number(n)) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => u.to_string(),
            (None, Some(i)) => i.to_string(),
            _ => num(n.as_f64().unwrap_or(f64::NAN)),
        },
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    }
}

fn float(v: Option<&Value>) -> Option<f64> {
    match v? {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => match s.as_str() {
            "inf" => Some(f64::INFINITY),
            "-inf" => Some(f64::NEG_INFINITY),
            "nan" => Some(f64::NAN),
            _ => None,
        },
        _ => None,
    }
}

fn array<'a>(report: &'a Value, key: &str) -> &'a [Value] {
    report.get(key).and_then(Value::as_array).map(Vec::as_slice).unwrap_or(&[])
}

fn coeff_norm(v: Option<&Value>) -> Option<f64> {
    let a = v?.as_array()?;
    let mut s = 0.0;
    for x in a {
        s += x.as_f64()?.powi(2);
    }
    Some(s.sqrt())
}

/// Serializes rows as RFC 4180 CSV with LF terminators.
pub fn write_csv(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// CSV text for a report of the given kind.
pub fn export_plotdata(kind: &str, report: &Value) -> Result<Vec<u8>, CliError> {
    let (header, rows): (Vec<&str>, Vec<Vec<String>>) = match kind {
        "ldp" => {
            let cols = ["eps", "hits", "n", "p_hat", "ci_lo", "ci_hi", "eps_log_p", "margin"];
            let rows = array(report, "rows")
                .iter()
                .map(|r| cols.iter().map(|c| cell(r.get(*c))).collect())
                .collect();
            (cols.to_vec(), rows)
        }
        "exit-scaling" => {
            let v_ref = cell(report.get("v_ref"));
            let rows = array(report, "rows")
                .iter()
                .map(|r| {
                    let mut row: Vec<String> = ["eps", "n", "n_censored", "mean_tau", "mean_tau_lower", "median_tau"]
                        .iter()
                        .map(|c| cell(r.get(*c)))
                        .collect();
                    row.push(cell(r.get("eps_log_mean")));
                    row.push(cell(r.get("window_prob")));
                    row.push(v_ref.clone());
                    row
                })
                .collect();
            (
                vec![
                    "eps",
                    "n",
                    "n_censored",
                    "mean_tau",
                    "mean_tau_lower",
                    "median_tau",
                    "eps_log_mean_tau",
                    "window_prob",
                    "V_ref",
                ],
                rows,
            )
        }
        "exit-place" => {
            let rows = array(report, "cells")
                .iter()
                .map(|c| {
                    let ci = c.get("ci").and_then(Value::as_array);
                    vec![
                        cell(c.get("name")),
                        cell(c.get("count")),
                        cell(c.get("freq")),
                        cell(ci.and_then(|a| a.first())),
                        cell(ci.and_then(|a| a.get(1))),
                    ]
                })
                .collect();
            (vec!["cell", "count", "freq", "ci_lo", "ci_hi"], rows)
        }
        "sweep" => {
            let x0s = array(report, "x0s");
            let reports = array(report, "reports");
            let center = x0s.first().and_then(Value::as_array);
            let rows = array(report, "margins")
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let dist = match (center, x0s.get(i).and_then(Value::as_array)) {
                        (Some(c), Some(x)) => {
                            let d: f64 = c
                                .iter()
                                .zip(x)
                                .map(|(a, b)| (a.as_f64().unwrap_or(0.0) - b.as_f64().unwrap_or(0.0)).powi(2))
                                .sum();
                            num(d.sqrt())
                        }
                        _ => String::new(),
                    };
                    vec![
                        i.to_string(),
                        dist,
                        cell(Some(m)),
                        cell(reports.get(i).and_then(|r| r.get("pass"))),
                    ]
                })
                .collect();
            (vec!["index", "distance_from_center", "margin", "pass"], rows)
        }
        "quasipotential" => {
            let conv = array(report, "converged");
            let rows = array(report, "per_horizon")
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let pair = p.as_array();
                    vec![
                        cell(pair.and_then(|a| a.first())),
                        cell(pair.and_then(|a| a.get(1))),
                        cell(conv.get(i)),
                    ]
                })
                .collect();
            (vec!["horizon", "action", "converged"], rows)
        }
        "verify" => {
            let rows = array(report, "entries")
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    vec![
                        i.to_string(),
                        coeff_norm(e.get("x0")).map(num).unwrap_or_default(),
                        cell(e.get("stays_in_domain")),
                        float(e.get("final_distance")).map(num).unwrap_or_default(),
                        cell(e.get("attracted")),
                    ]
                })
                .collect();
            (
                vec!["index", "x0_norm", "stays_in_domain", "final_distance", "attracted"],
                rows,
            )
        }
        other => {
            return Err(CliError::UnknownKind {
                kind: other.to_string(),
                expected: KINDS.join(", "),
            })
        }
    };
    Ok(write_csv(&header, &rows))
}
