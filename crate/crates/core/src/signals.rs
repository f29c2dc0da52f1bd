//! Current profiles, synthetic voltage/current measurements and SNR.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// ChaCha20 keyed by `seed_from_u64`, Gaussian draws by the ziggurat sampler
/// of rand_distr 0.5. Each sample draws the current noise first, then the
/// voltage noise.
pub const RNG_NAME: &str = "chacha20/ziggurat-rand_distr-0.5";

const SPACING_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSource {
    Constant,
    Pulsed,
    File,
}

/// Uniformly sampled true current. Sample `k` sits at `start + k·dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct CurrentProfile {
    start: f64,
    dt: f64,
    currents: Vec<f64>,
    source: ProfileSource,
}

impl CurrentProfile {
    pub fn new(start: f64, dt: f64, currents: Vec<f64>, source: ProfileSource) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("sampling interval must be positive, got {dt}")));
        }
        if currents.is_empty() {
            return Err(Error::InvalidArgument("profile needs at least one sample".into()));
        }
        if let Some(k) = currents.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!("current at sample {k} is not finite")));
        }
        Ok(Self { start, dt, currents, source })
    }

    pub fn len(&self) -> usize {
        self.currents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.currents.is_empty()
    }

    pub fn sampling_interval(&self) -> f64 {
        self.dt
    }

    pub fn source(&self) -> ProfileSource {
        self.source
    }

    pub fn currents(&self) -> &[f64] {
        &self.currents
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start + k as f64 * self.dt
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.currents.iter().enumerate().map(|(k, &c)| (self.time(k), c))
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 * self.dt
    }

    /// Writes `time_s,current_A` rows with a header line.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("time_s,current_A\n");
        for (t, c) in self.samples() {
            out.push_str(&format!("{t:.16e},{c:.16e}\n"));
        }
        let mut f = fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }
}

/// `m·n_blocks` samples of constant current `i_c`.
pub fn gen_constant_profile(i_c: f64, m: usize, n_blocks: usize, dt: f64) -> Result<CurrentProfile> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("block length must be at least 2, got {m}")));
    }
    if n_blocks == 0 {
        return Err(Error::InvalidArgument("need at least one block".into()));
    }
    if !i_c.is_finite() {
        return Err(Error::InvalidArgument("current must be finite".into()));
    }
    CurrentProfile::new(0.0, dt, vec![i_c; m * n_blocks], ProfileSource::Constant)
}

/// Piecewise-constant profile from `(duration_s, current_A)` segments, repeated.
pub fn gen_pulse_profile(segments: &[(f64, f64)], dt: f64, repeat: usize) -> Result<CurrentProfile> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("sampling interval must be positive, got {dt}")));
    }
    if segments.is_empty() || repeat == 0 {
        return Err(Error::InvalidArgument("need at least one segment and one repetition".into()));
    }
    let mut cycle = Vec::new();
    for (i, &(duration, current)) in segments.iter().enumerate() {
        if !(duration > 0.0) {
            return Err(Error::InvalidArgument(format!("segment {i} has non-positive duration")));
        }
        let steps = duration / dt;
        let n = steps.round();
        if (steps - n).abs() > SPACING_TOL * n.max(1.0) || n < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "segment {i} duration {duration} s is not a multiple of dt = {dt} s"
            )));
        }
        cycle.extend(std::iter::repeat_n(current, n as usize));
    }
    let currents = cycle.repeat(repeat);
    CurrentProfile::new(0.0, dt, currents, ProfileSource::Pulsed)
}

/// Reads `time_s,current_A` rows; a non-numeric first line is taken as a header.
pub fn load_profile_csv(path: impl AsRef<Path>, dt: f64) -> Result<CurrentProfile> {
    let text = fs::read_to_string(path)?;
    parse_profile_csv(&text, dt)
}

pub fn parse_profile_csv(text: &str, dt: f64) -> Result<CurrentProfile> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("sampling interval must be positive, got {dt}")));
    }
    let mut rows: Vec<(f64, f64)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let mut fields = raw.split(',').map(str::trim);
        let parsed = match (fields.next(), fields.next(), fields.next()) {
            (Some(t), Some(c), None) => t.parse::<f64>().ok().zip(c.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some(row) => rows.push(row),
            None if line == 1 => continue,
            None => return Err(Error::Parse { line, detail: format!("expected `time_s,current_A`, got `{raw}`") }),
        }
    }
    let Some(&(start, _)) = rows.first() else {
        return Err(Error::Format("profile file has no data rows".into()));
    };
    for (k, &(t, _)) in rows.iter().enumerate() {
        let expected = start + k as f64 * dt;
        if (t - expected).abs() > SPACING_TOL {
            return Err(Error::Format(format!(
                "sample {k} at t = {t} s breaks the uniform {dt} s spacing (expected {expected} s)"
            )));
        }
    }
    CurrentProfile::new(start, dt, rows.into_iter().map(|(_, c)| c).collect(), ProfileSource::File)
}

/// Measurement noise model. The true resistance is deliberately not part of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_v: f64,
    pub sigma_i: f64,
    pub seed: u64,
    pub rng_name: String,
}

impl NoiseSpec {
    pub fn new(sigma_v: f64, sigma_i: f64, seed: u64) -> Result<Self> {
        if !(sigma_v >= 0.0) || !(sigma_i >= 0.0) || !sigma_v.is_finite() || !sigma_i.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise standard deviations must be finite and non-negative (σ_v = {sigma_v}, σ_i = {sigma_i})"
            )));
        }
        Ok(Self { sigma_v, sigma_i, seed, rng_name: RNG_NAME.to_string() })
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// One batch κ of m samples.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementBlock {
    pub batch_index: usize,
    true_current: Vec<f64>,
    measured_current: Vec<f64>,
    measured_voltage: Vec<f64>,
}

impl MeasurementBlock {
    pub fn new(
        batch_index: usize,
        true_current: Vec<f64>,
        measured_current: Vec<f64>,
        measured_voltage: Vec<f64>,
    ) -> Result<Self> {
        let m = true_current.len();
        if m < 2 || measured_current.len() != m || measured_voltage.len() != m {
            return Err(Error::InvalidArgument(format!(
                "block vectors must share a length of at least 2 (got {}, {}, {})",
                m,
                measured_current.len(),
                measured_voltage.len()
            )));
        }
        Ok(Self { batch_index, true_current, measured_current, measured_voltage })
    }

    pub fn len(&self) -> usize {
        self.true_current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_current.is_empty()
    }

    pub fn measured_current(&self) -> &[f64] {
        &self.measured_current
    }

    pub fn measured_voltage(&self) -> &[f64] {
        &self.measured_voltage
    }

    /// Noiseless current, for bounds and oracle checks only.
    pub fn true_current(&self) -> &[f64] {
        &self.true_current
    }

    /// Model matrix `A` (m×1) built from the measured current.
    pub fn model(&self) -> Matrix {
        Matrix::column(&self.measured_current)
    }

    /// Noiseless model matrix, for the PCRLB.
    pub fn true_model(&self) -> Matrix {
        Matrix::column(&self.true_current)
    }

    pub fn observation(&self) -> &[f64] {
        &self.measured_voltage
    }
}

/// Metadata every generated stream carries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub rng_name: String,
    pub seed: u64,
    pub sigma_v: f64,
    pub sigma_i: f64,
    pub r_true: f64,
    pub m: usize,
}

/// `z_i = i + n_i`, `z_v = i·R + n_v` with i.i.d. Gaussian noise, cut into blocks of `m`.
pub fn synthesize_measurements(
    profile: &CurrentProfile,
    noise: &NoiseSpec,
    r_true: f64,
    m: usize,
) -> Result<Vec<MeasurementBlock>> {
    if noise.rng_name != RNG_NAME {
        return Err(Error::InvalidArgument(format!("unsupported rng `{}`", noise.rng_name)));
    }
    if m < 2 {
        return Err(Error::InvalidArgument(format!("block length must be at least 2, got {m}")));
    }
    if !profile.len().is_multiple_of(m) {
        return Err(Error::InvalidArgument(format!(
            "profile length {} is not divisible by block length {m}",
            profile.len()
        )));
    }
    if !r_true.is_finite() {
        return Err(Error::InvalidArgument("true resistance must be finite".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(noise.seed);
    let blocks = profile
        .currents()
        .chunks(m)
        .enumerate()
        .map(|(b, chunk)| {
            let mut zi = Vec::with_capacity(m);
            let mut zv = Vec::with_capacity(m);
            for &i in chunk {
                let ni: f64 = rng.sample(StandardNormal);
                let nv: f64 = rng.sample(StandardNormal);
                zi.push(i + noise.sigma_i * ni);
                zv.push(i * r_true + noise.sigma_v * nv);
            }
            MeasurementBlock {
                batch_index: b + 1,
                true_current: chunk.to_vec(),
                measured_current: zi,
                measured_voltage: zv,
            }
        })
        .collect();
    Ok(blocks)
}

pub fn stream_meta(noise: &NoiseSpec, r_true: f64, m: usize) -> StreamMeta {
    StreamMeta {
        rng_name: noise.rng_name.clone(),
        seed: noise.seed,
        sigma_v: noise.sigma_v,
        sigma_i: noise.sigma_i,
        r_true,
        m,
    }
}

/// `20·log₁₀(i_c·R/σ_v)`; `+∞` when `σ_v = 0`.
pub fn snr_static(i_c: f64, r: f64, sigma_v: f64) -> Result<f64> {
    let signal = i_c * r;
    if !(signal > 0.0) {
        return Err(Error::UndefinedSnr(format!("signal amplitude i_c·R = {signal} must be positive")));
    }
    if sigma_v < 0.0 || sigma_v.is_nan() {
        return Err(Error::InvalidArgument(format!("σ_v must be non-negative, got {sigma_v}")));
    }
    if sigma_v == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (signal / sigma_v).log10())
}

/// Inverse of [`snr_static`]: `σ_v = i_c·R·10^(−snr/20)`.
pub fn sigma_for_snr(snr_db: f64, i_c: f64, r: f64) -> Result<f64> {
    let signal = i_c * r;
    if !(signal > 0.0) {
        return Err(Error::UndefinedSnr(format!("signal amplitude i_c·R = {signal} must be positive")));
    }
    Ok(signal * 10f64.powf(-snr_db / 20.0))
}

/// Time-varying SNR with the combined noise `√(σ_v² + σ_i²R²)`; `−∞` at zero current.
pub fn snr_dynamic(i_k: f64, r: f64, sigma_v: f64, sigma_i: f64) -> Result<f64> {
    let noise = (sigma_v * sigma_v + sigma_i * sigma_i * r * r).sqrt();
    if !(noise > 0.0) {
        return Err(Error::UndefinedSnr("both noise standard deviations are zero".into()));
    }
    let signal = (i_k * r).abs();
    if signal == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(20.0 * (signal / noise).log10())
}

/// How a dB value maps to a voltage noise level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrConvention {
    /// `20·log₁₀(i_c·R/σ_v)`.
    #[default]
    Signal,
    /// `20·log₁₀(i_c/σ_v)`: current amplitude against the voltage noise.
    Current,
}

impl SnrConvention {
    pub fn sigma_v(self, snr_db: f64, i_c: f64, r: f64) -> Result<f64> {
        match self {
            SnrConvention::Signal => sigma_for_snr(snr_db, i_c, r),
            SnrConvention::Current => sigma_for_snr(snr_db, i_c, 1.0),
        }
    }
}
