use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{HarnessError, Result};
use crate::estimators::{estimate_alpha, estimate_alpha_multidim, CensoredSample, QuantileConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub alpha_hat: Vec<f64>,
    pub p_used: Vec<f64>,
    pub objective: Vec<f64>,
    pub n: usize,
    pub n_censored: usize,
}

/// Reads estimator samples. Columns: one or more context columns whose
/// names start with `x`, then `d_obs` (empty when censored) and `own_bid`;
/// an optional `censored` column (0/1) overrides `d_obs`.
pub fn read_samples(path: &Path) -> Result<Vec<CensoredSample>> {
    let data = |row: usize, message: String| HarnessError::Data { path: PathBuf::from(path), row, message };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| HarnessError::io(path, e.into()))?;
    let header = reader.headers().map_err(|e| data(1, e.to_string()))?.clone();
    let xs: Vec<usize> = header.iter().enumerate().filter(|(_, h)| h.starts_with('x')).map(|(i, _)| i).collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let (d_col, bid_col) = match (find("d_obs"), find("own_bid")) {
        (Some(d), Some(b)) if !xs.is_empty() => (d, b),
        _ => return Err(data(1, "header needs x column(s), d_obs and own_bid".into())),
    };
    let flag_col = find("censored");
    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| data(row, e.to_string()))?;
        let num = |k: usize| -> Result<f64> {
            let s = record.get(k).unwrap_or("");
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| data(row, format!("column `{}`: bad number `{s}`", &header[k])))
        };
        let x = xs.iter().map(|&k| num(k)).collect::<Result<Vec<f64>>>()?;
        let own_bid = num(bid_col)?;
        let censored = match flag_col.map(|k| record.get(k).unwrap_or("")) {
            None | Some("") => record.get(d_col).unwrap_or("").is_empty(),
            Some("1") => true,
            Some("0") => false,
            Some(other) => return Err(data(row, format!("column `censored`: expected 0 or 1, got `{other}`"))),
        };
        let d_obs = if censored { None } else { Some(num(d_col)?) };
        samples.push(CensoredSample { x, d_obs, own_bid });
    }
    Ok(samples)
}

pub fn estimate_cmd(path: &Path, config: &QuantileConfig) -> Result<EstimateReport> {
    let samples = read_samples(path)?;
    let dim = samples.first().map_or(1, |s| s.x.len());
    let est = if dim == 1 {
        estimate_alpha(&samples, config)?
    } else {
        estimate_alpha_multidim(&samples, &vec![config.clone(); dim])?
    };
    Ok(EstimateReport {
        alpha_hat: est.value,
        p_used: est.p_used,
        objective: est.objective_at_min,
        n: samples.len(),
        n_censored: samples.iter().filter(|s| s.censored()).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::EstimatorError;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn noiseless(hidden: impl Fn(usize) -> String, with_flag: bool) -> String {
        let mut s = String::from(if with_flag { "x,d_obs,own_bid,censored\n" } else { "x,d_obs,own_bid\n" });
        for i in 0..400 {
            let x = (i as f64 + 0.5) / 400.0;
            let d = 0.8 * x + 0.05 * ((i * 7919 % 400) as f64 / 400.0 - 0.5);
            let bid = 0.75 * x - 0.02;
            if d < bid {
                if with_flag {
                    s += &format!("{x},{},{bid},1\n", hidden(i));
                } else {
                    s += &format!("{x},,{bid}\n");
                }
            } else if with_flag {
                s += &format!("{x},{d},{bid},0\n");
            } else {
                s += &format!("{x},{d},{bid}\n");
            }
        }
        s
    }

    #[test]
    fn noiseless_line_recovers_slope() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = String::from("x,d_obs,own_bid\n");
        for i in 0..200 {
            let x = i as f64 / 200.0;
            s += &format!("{x},{},0\n", 0.8 * x + 0.1);
        }
        let p = write(dir.path(), "a.csv", &s);
        let r = estimate_cmd(&p, &QuantileConfig::default()).unwrap();
        let step = QuantileConfig::default().step_for(200);
        assert!((r.alpha_hat[0] - 0.8).abs() <= step, "{r:?}");
        assert_eq!(r.n_censored, 0);
    }

    #[test]
    fn hidden_payloads_do_not_matter() {
        let dir = tempfile::tempdir().unwrap();
        let empty = write(dir.path(), "e.csv", &noiseless(|_| String::new(), false));
        let junk = write(dir.path(), "j.csv", &noiseless(|i| format!("{}", 1e6 * i as f64 - 3.0), true));
        let a = estimate_cmd(&empty, &QuantileConfig::default()).unwrap();
        let b = estimate_cmd(&junk, &QuantileConfig::default()).unwrap();
        assert!(a.n_censored > 0);
        assert_eq!(a, b);
    }

    #[test]
    fn all_censored_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = String::from("x,d_obs,own_bid\n");
        for i in 0..50 {
            s += &format!("{},,0.5\n", i as f64 / 50.0);
        }
        let p = write(dir.path(), "c.csv", &s);
        let e = estimate_cmd(&p, &QuantileConfig::default()).unwrap_err();
        assert!(
            matches!(e, HarnessError::Estimator(EstimatorError::CensoringTooHeavy { .. } | EstimatorError::AllCensored)),
            "{e}"
        );
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn bad_row_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "b.csv", "x,d_obs,own_bid\n0.1,0.2,0\n0.3,oops,0\n");
        match read_samples(&p).unwrap_err() {
            HarnessError::Data { row, message, .. } => {
                assert_eq!(row, 3);
                assert!(message.contains("oops"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn multi_column_contexts() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "x_1,x_2,d_obs,own_bid\n0.1,0.2,0.3,0\n0.5,0.4,,0.9\n");
        let s = read_samples(&p).unwrap();
        assert_eq!(s[0].x, vec![0.1, 0.2]);
        assert!(s[1].censored());
    }
}
