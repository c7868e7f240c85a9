use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::Mdp;
use crate::error::{Error, Result};
use crate::lfa::ParamVec;
use crate::train::RunConfig;

pub const RECORD_SCHEMA_VERSION: u32 = 1;
pub const CSV_COLUMNS: &str = "round,samples_per_agent,mse_theta_star,mse_chi_star,theta_norm,wall_ms";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    /// Mean over agents of transitions consumed, skipped ones included.
    pub samples_per_agent: f64,
    pub mse_theta_star: f64,
    pub mse_chi_star: f64,
    pub theta_norm: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Configuration with every default filled in.
    pub config: RunConfig,
    pub config_hash: String,
    pub env_hashes: Vec<String>,
    pub theta_star: Option<ParamVec>,
    pub chi_star: Option<ParamVec>,
    pub rows: Vec<RoundRow>,
    pub final_theta: ParamVec,
    /// Fingerprint of the policy in force after each logged round.
    pub policy_fingerprints: Vec<u64>,
}

/// 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:.16e}")
    }
}

pub fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| fmt_real(*x)).collect();
    format!("[{}]", parts.join(","))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Short content hash of an environment.
pub fn env_hash(mdp: &Mdp) -> Result<String> {
    Ok(sha256_hex(mdp.to_json()?.as_bytes())[..16].to_string())
}

/// Hash over the resolved configuration and the environments it runs on.
pub fn config_hash(config: &RunConfig, env_hashes: &[String]) -> Result<String> {
    let mut text = serde_json::to_string(config)?;
    for h in env_hashes {
        text.push('|');
        text.push_str(h);
    }
    Ok(sha256_hex(text.as_bytes()))
}

impl RunRecord {
    pub fn last(&self) -> &RoundRow {
        self.rows.last().expect("a run record always holds round 0")
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        let opt = |v: &Option<ParamVec>| v.as_ref().map_or("none".to_string(), |p| fmt_vec(p.as_slice()));
        writeln!(out, "# fedsarsa run record").ok();
        writeln!(out, "# schema_version: {RECORD_SCHEMA_VERSION}").ok();
        writeln!(out, "# config: {}", serde_json::to_string(&self.config)?).ok();
        writeln!(out, "# config_hash: {}", self.config_hash).ok();
        writeln!(out, "# env_hashes: {}", self.env_hashes.join(",")).ok();
        writeln!(out, "# theta_star: {}", opt(&self.theta_star)).ok();
        writeln!(out, "# chi_star: {}", opt(&self.chi_star)).ok();
        writeln!(out, "# final_theta: {}", fmt_vec(self.final_theta.as_slice())).ok();
        writeln!(out, "{CSV_COLUMNS}").ok();
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.round,
                r.samples_per_agent,
                fmt_real(r.mse_theta_star),
                fmt_real(r.mse_chi_star),
                fmt_real(r.theta_norm),
                r.wall_ms
            )
            .ok();
        }
        Ok(out)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv()?.as_bytes())
    }
}

/// Rows of a run-record CSV, skipping `#` lines and the column header.
pub fn parse_csv_rows(text: &str) -> Result<Vec<RoundRow>> {
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (n, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if !seen_header {
            if line != CSV_COLUMNS {
                return Err(Error::Config(format!("line {}: expected column header `{CSV_COLUMNS}`", n + 1)));
            }
            seen_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::Config(format!("line {}: expected 6 fields, found {}", n + 1, f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse::<f64>().map_err(|_| Error::Config(format!("line {}: field {} is not a number", n + 1, i + 1)))
        };
        rows.push(RoundRow {
            round: f[0].parse().map_err(|_| Error::Config(format!("line {}: bad round index", n + 1)))?,
            samples_per_agent: num(1)?,
            mse_theta_star: num(2)?,
            mse_chi_star: num(3)?,
            theta_norm: num(4)?,
            wall_ms: num(5)?,
        });
    }
    Ok(rows)
}

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 123456.789, 0.0] {
            assert_eq!(fmt_real(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_real(f64::NAN), "NaN");
    }

    #[test]
    fn header_is_checked() {
        assert!(parse_csv_rows("a,b\n1,2").is_err());
        let rows = parse_csv_rows(&format!("# x\n{CSV_COLUMNS}\n0,0,1.5,NaN,2,0\n")).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].mse_chi_star.is_nan());
    }
}
