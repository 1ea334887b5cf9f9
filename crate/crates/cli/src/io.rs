//! File formats used by the command line tool.

use std::fs;
use std::path::Path;

use clrg::population::EnvironmentMoments;
use clrg::sem::EnvSample;
use clrg::Matrix;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Writes samples as CSV with header `env,y,x1,...,xd` (1-based env).
pub fn write_samples(path: &Path, samples: &[EnvSample]) -> Result<(), CliError> {
    let d = samples.first().map_or(0, |s| s.x.cols());
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    let mut header = vec!["env".to_string(), "y".to_string()];
    header.extend((1..=d).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(|e| CliError::io(path, e))?;
    for s in samples {
        for i in 0..s.len() {
            let mut rec = vec![(s.env_index + 1).to_string(), format!("{:.16e}", s.y[i])];
            rec.extend(s.x.row(i).iter().map(|v| format!("{v:.16e}")));
            w.write_record(&rec).map_err(|e| CliError::io(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads samples written by [`write_samples`]. Environments are returned in
/// ascending order of their label.
pub fn read_samples(path: &Path) -> Result<Vec<EnvSample>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let headers = r.headers().map_err(|e| CliError::io(path, e))?.clone();
    if headers.len() < 3 || &headers[0] != "env" || &headers[1] != "y" {
        return Err(CliError::Invalid(format!("{}: expected header env,y,x1,...", path.display())));
    }
    let d = headers.len() - 2;
    let mut groups: Vec<(usize, Vec<f64>, Vec<f64>)> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        let bad = |what: &str| CliError::Invalid(format!("{}: row {}: invalid {what}", path.display(), line + 2));
        let env: usize = rec[0].trim().parse().map_err(|_| bad("env"))?;
        if env == 0 {
            return Err(bad("env (labels start at 1)"));
        }
        let nums = (1..rec.len()).map(|j| rec[j].trim().parse::<f64>().map_err(|_| bad("number"))).collect::<Result<Vec<_>, _>>()?;
        let pos = match groups.iter().position(|g| g.0 == env) {
            Some(p) => p,
            None => {
                groups.push((env, Vec::new(), Vec::new()));
                groups.len() - 1
            }
        };
        groups[pos].1.push(nums[0]);
        groups[pos].2.extend_from_slice(&nums[1..]);
    }
    if groups.is_empty() {
        return Err(CliError::Invalid(format!("{}: no samples", path.display())));
    }
    groups.sort_by_key(|g| g.0);
    groups
        .into_iter()
        .map(|(env, y, data)| {
            let x = Matrix::new(y.len(), d, data)?;
            Ok(EnvSample { env_index: env - 1, x, y })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MomentsEntry {
    pub sigma: Vec<Vec<f64>>,
    pub rho: Vec<f64>,
}

/// `{"environments": [{"sigma": [[..]], "rho": [..]}, ...]}`
#[derive(Debug, Serialize, Deserialize)]
pub struct MomentsFile {
    pub environments: Vec<MomentsEntry>,
}

pub fn read_moments(path: &Path) -> Result<Vec<EnvironmentMoments>, CliError> {
    let file: MomentsFile = read_json(path)?;
    file.environments
        .into_iter()
        .map(|e| Ok(EnvironmentMoments::new(Matrix::from_rows(&e.sigma)?, e.rho)?))
        .collect()
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}
