//! CSV tables and the run manifest.
//!
//! Numbers are written with 17 significant digits so they round-trip
//! exactly; `NaN` is written as an empty field.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::harness::{SweepTable, TraceTable};
use crate::signals::RNG_NAME;

pub const SCHEMA_VERSION: u32 = 1;

pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

pub fn sweep_csv(table: &SweepTable) -> String {
    let mut s = String::from("snr_db,estimator,norm_bias_pct,norm_sde_pct,norm_sqrt_crlb_pct,n_runs,m\n");
    for r in &table.records {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            fmt_num(r.snr_db),
            r.estimator,
            fmt_num(r.norm_bias_pct),
            fmt_num(r.norm_sde_pct),
            fmt_num(r.norm_sqrt_crlb_pct),
            r.n_runs,
            r.m
        )
        .unwrap();
    }
    s
}

/// Per-batch table; `dynamic` adds the SNR, RMS current and gating columns.
pub fn trace_csv(table: &TraceTable, dynamic: bool) -> String {
    let mut s = String::from("batch_index,time_s");
    if dynamic {
        s.push_str(",rms_current_a,snr_db");
    }
    for e in &table.estimators {
        let l = e.method.label();
        write!(s, ",{l}_mean,{l}_norm_bias_pct,{l}_norm_sde_pct,{l}_n_valid").unwrap();
        if dynamic {
            write!(s, ",{l}_gated_frac").unwrap();
        }
    }
    s.push_str(",pcrlb,norm_sqrt_pcrlb_pct\n");
    for k in 0..table.n_batches() {
        write!(s, "{},{}", table.batch_index[k], fmt_num(table.time_s[k])).unwrap();
        if dynamic {
            let snr = table.snr_db.as_ref().map_or(f64::NAN, |v| v[k]);
            write!(s, ",{},{}", fmt_num(table.rms_current[k]), fmt_num(snr)).unwrap();
        }
        for e in &table.estimators {
            write!(
                s,
                ",{},{},{},{}",
                fmt_num(e.mean[k]),
                fmt_num(e.norm_bias_pct[k]),
                fmt_num(e.norm_sde_pct[k]),
                e.n_valid[k]
            )
            .unwrap();
            if dynamic {
                write!(s, ",{}", fmt_num(e.gated_frac[k])).unwrap();
            }
        }
        writeln!(s, ",{},{}", fmt_num(table.pcrlb[k]), fmt_num(table.norm_sqrt_pcrlb_pct[k])).unwrap();
    }
    s
}

pub fn pcrlb_csv(table: &TraceTable) -> String {
    let mut s = String::from("batch_index,time_s,pcrlb,norm_sqrt_pcrlb_pct\n");
    for k in 0..table.n_batches() {
        writeln!(
            s,
            "{},{},{},{}",
            table.batch_index[k],
            fmt_num(table.time_s[k]),
            fmt_num(table.pcrlb[k]),
            fmt_num(table.norm_sqrt_pcrlb_pct[k])
        )
        .unwrap();
    }
    s
}

/// Sample-level SNR of the true current.
pub fn snr_csv(table: &TraceTable) -> Result<String> {
    let mut s = String::from("sample_index,time_s,current_a,snr_db\n");
    for (k, (t, i)) in table.profile.samples().enumerate() {
        let snr = crate::signals::snr_dynamic(i, table.r_true, table.sigma_v, table.sigma_i)?;
        writeln!(s, "{},{},{},{}", k, fmt_num(t), fmt_num(i), fmt_num(snr)).unwrap();
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub rng_name: String,
    pub seed: u64,
    pub started_utc: String,
    pub finished_utc: String,
    pub config: ExperimentConfig,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `contents` to `dir/name` and returns its manifest entry.
pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<FileEntry> {
    fs::write(dir.join(name), contents)?;
    Ok(FileEntry { name: name.to_string(), sha256: sha256_hex(contents.as_bytes()), bytes: contents.len() as u64 })
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: &ExperimentConfig,
        started: chrono::DateTime<chrono::Utc>,
        files: Vec<FileEntry>,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            rng_name: RNG_NAME.to_string(),
            seed: config.seed,
            started_utc: started.to_rfc3339(),
            finished_utc: chrono::Utc::now().to_rfc3339(),
            config: config.clone(),
            files,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| crate::Error::Format(e.to_string()))?;
        fs::write(dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        serde_json::from_str(&text).map_err(|e| crate::Error::Format(e.to_string()))
    }
}
