//! CSV and JSON emission. CSV floats carry 17 significant digits.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use fsrm::noisestudy::ErrPoint;
use serde::Serialize;

use crate::commands::ConvergeRow;
use crate::error::CliResult;

pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn converge_csv(rows: &[ConvergeRow]) -> String {
    let mut s = String::from("n_m,N,n_u,repetitions,err,seed\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.n_m, r.n, r.n_u, r.repetitions, float(r.err), r.seed);
    }
    s
}

pub fn noise_csv(points: &[ErrPoint]) -> String {
    let mut s = String::from("scheme,k,epsilon,N,err,seed\n");
    for p in points {
        let _ = writeln!(s, "{},{},{},{},{},{}", p.scheme, p.k, float(p.epsilon), p.n, float(p.err), p.seed);
    }
    s
}

/// Parses rows written by [`noise_csv`].
pub fn parse_noise_csv(text: &str) -> Result<Vec<ErrPoint>, String> {
    let mut lines = text.lines();
    if lines.next() != Some("scheme,k,epsilon,N,err,seed") {
        return Err("unexpected header".into());
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(format!("expected 6 fields in {line:?}"));
            }
            let bad = |e: &dyn std::fmt::Display| format!("{line:?}: {e}");
            Ok(ErrPoint {
                scheme: f[0].to_string(),
                k: f[1].parse().map_err(|e| bad(&e))?,
                epsilon: f[2].parse().map_err(|e| bad(&e))?,
                n: f[3].parse().map_err(|e| bad(&e))?,
                err: f[4].parse().map_err(|e| bad(&e))?,
                seed: f[5].parse().map_err(|e| bad(&e))?,
            })
        })
        .collect()
}

pub fn json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_csv_round_trips_exactly() {
        let pts = vec![ErrPoint {
            scheme: "fsrm-2".into(),
            k: 2,
            epsilon: 0.1,
            n: 1000,
            err: 0.012345678901234567,
            seed: 9,
        }];
        let back = parse_noise_csv(&noise_csv(&pts)).unwrap();
        assert_eq!(back, pts);
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(float(0.1), "1.0000000000000001e-1");
        let x = std::f64::consts::PI / 7.0;
        assert_eq!(float(x).parse::<f64>().unwrap(), x);
    }
}
