//! Stochastic channel and hardware-impairment models standing in for the
//! over-the-air link.
//!
//! Each fading tap is a sum of 16 sinusoids with arrival angles
//! `(2 pi k + theta0) / 16` and complex Gaussian weights of equal mean
//! power, giving exact Rayleigh marginals and a Bessel-J0 autocorrelation
//! in the ensemble over seeds.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_SINUSOIDS: usize = 16;

// Tap gains are evaluated exactly on this sample grid and linearly
// interpolated in between.
const GAIN_STEP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelModel {
    /// No fading and no noise.
    Ideal,
    /// Noise only.
    Awgn,
    /// One Rayleigh tap at zero delay, plus noise.
    RayleighFlat,
    /// Tapped delay line of Rayleigh taps, plus noise.
    RayleighTdl,
}

impl ChannelModel {
    pub fn name(self) -> &'static str {
        match self {
            ChannelModel::Ideal => "ideal",
            ChannelModel::Awgn => "awgn",
            ChannelModel::RayleighFlat => "rayleigh_flat",
            ChannelModel::RayleighTdl => "rayleigh_tdl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ideal" => Some(ChannelModel::Ideal),
            "awgn" => Some(ChannelModel::Awgn),
            "rayleigh_flat" => Some(ChannelModel::RayleighFlat),
            "rayleigh_tdl" => Some(ChannelModel::RayleighTdl),
            _ => None,
        }
    }

    pub fn has_noise(self) -> bool {
        !matches!(self, ChannelModel::Ideal)
    }

    pub fn is_fading(self) -> bool {
        matches!(self, ChannelModel::RayleighFlat | ChannelModel::RayleighTdl)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    pub delay_samples: usize,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub model: ChannelModel,
    pub doppler_hz: f64,
    pub taps: Vec<Tap>,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self::indoor_v2v()
    }
}

impl ChannelConfig {
    /// Three-tap indoor profile: delays 0/4/9 samples, powers 0.7/0.2/0.1,
    /// 60 Hz Doppler.
    pub fn indoor_v2v() -> Self {
        Self {
            model: ChannelModel::RayleighTdl,
            doppler_hz: 60.0,
            taps: vec![
                Tap {
                    delay_samples: 0,
                    power: 0.7,
                },
                Tap {
                    delay_samples: 4,
                    power: 0.2,
                },
                Tap {
                    delay_samples: 9,
                    power: 0.1,
                },
            ],
            seed: 0,
        }
    }

    pub fn with_model(model: ChannelModel) -> Self {
        Self {
            model,
            ..Self::indoor_v2v()
        }
    }

    pub fn validate(&self, cp_len: usize) -> Result<()> {
        if !(self.doppler_hz >= 0.0) || !self.doppler_hz.is_finite() {
            return Err(Error::config(
                "channel.doppler_hz",
                "must be finite and >= 0",
            ));
        }
        if self.model == ChannelModel::RayleighTdl {
            if self.taps.is_empty() {
                return Err(Error::config("channel.taps", "no taps"));
            }
            if let Some(t) = self.taps.iter().find(|t| t.delay_samples >= cp_len) {
                return Err(Error::config(
                    "channel.taps",
                    format!(
                        "delay {} not shorter than the {cp_len}-sample CP",
                        t.delay_samples
                    ),
                ));
            }
            if self.taps.iter().any(|t| !(t.power >= 0.0)) {
                return Err(Error::config("channel.taps", "negative tap power"));
            }
            let total: f64 = self.taps.iter().map(|t| t.power).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::config(
                    "channel.taps",
                    format!("powers sum to {total}, expected 1"),
                ));
            }
        }
        Ok(())
    }

    fn effective_taps(&self) -> Vec<Tap> {
        match self.model {
            ChannelModel::RayleighTdl => self.taps.clone(),
            _ => vec![Tap {
                delay_samples: 0,
                power: 1.0,
            }],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpairmentConfig {
    pub cfo_hz: f64,
    pub timing_offset_samples: i64,
    pub cfo_enabled: bool,
    pub timing_enabled: bool,
}

impl Default for ImpairmentConfig {
    fn default() -> Self {
        Self::none()
    }
}

impl ImpairmentConfig {
    pub fn none() -> Self {
        Self {
            cfo_hz: 0.0,
            timing_offset_samples: 0,
            cfo_enabled: false,
            timing_enabled: false,
        }
    }

    /// 300 Hz CFO that goes with the indoor fading profile.
    pub fn indoor_v2v() -> Self {
        Self {
            cfo_hz: 300.0,
            cfo_enabled: true,
            ..Self::none()
        }
    }

    pub fn validate(&self, cp_len: usize) -> Result<()> {
        if self.timing_offset_samples.unsigned_abs() >= cp_len as u64 {
            return Err(Error::config(
                "impairments.timing_offset_samples",
                format!("|offset| must be below the {cp_len}-sample CP"),
            ));
        }
        if !self.cfo_hz.is_finite() {
            return Err(Error::config("impairments.cfo_hz", "must be finite"));
        }
        Ok(())
    }

    /// Applies the enabled impairments in place.
    pub fn apply(&self, samples: &mut Vec<Complex64>, sample_rate: f64) {
        if self.cfo_enabled && self.cfo_hz != 0.0 {
            apply_cfo(samples, self.cfo_hz, sample_rate);
        }
        if self.timing_enabled && self.timing_offset_samples != 0 {
            *samples = apply_timing_offset(samples, self.timing_offset_samples);
        }
    }
}

/// Maps transmit power to receive SNR: `snr_db = tx_power_dbm + gain_offset_db`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerCalibration {
    pub gain_offset_db: f64,
}

pub const DEFAULT_GAIN_OFFSET_DB: f64 = 16.0;

impl Default for PowerCalibration {
    fn default() -> Self {
        Self {
            gain_offset_db: DEFAULT_GAIN_OFFSET_DB,
        }
    }
}

impl PowerCalibration {
    pub fn snr_db(&self, tx_power_dbm: f64) -> f64 {
        tx_power_dbm + self.gain_offset_db
    }
}

#[derive(Debug, Clone)]
struct FadingTap {
    delay: usize,
    // sqrt(tap power) folded in.
    weights: [Complex64; N_SINUSOIDS],
    // Doppler shift of each sinusoid in radians per sample.
    omegas: [f64; N_SINUSOIDS],
}

impl FadingTap {
    fn draw(rng: &mut ChaCha8Rng, tap: Tap, doppler_hz: f64, sample_rate: f64) -> Self {
        let theta0 = rng.gen_range(0.0..2.0 * PI);
        let sigma = (tap.power / (2.0 * N_SINUSOIDS as f64)).sqrt();
        let mut weights = [Complex64::new(0.0, 0.0); N_SINUSOIDS];
        let mut omegas = [0.0; N_SINUSOIDS];
        for k in 0..N_SINUSOIDS {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            weights[k] = Complex64::new(re, im) * sigma;
            let alpha = (2.0 * PI * k as f64 + theta0) / N_SINUSOIDS as f64;
            omegas[k] = 2.0 * PI * doppler_hz * alpha.cos() / sample_rate;
        }
        Self {
            delay: tap.delay_samples,
            weights,
            omegas,
        }
    }

    fn gain_at(&self, t: f64) -> Complex64 {
        self.weights
            .iter()
            .zip(&self.omegas)
            .map(|(w, &om)| w * Complex64::from_polar(1.0, om * t))
            .sum()
    }

    // Exact gains at t0, t0 + GAIN_STEP, ... covering t0 .. t0 + len.
    fn knots(&self, t0: u64, len: usize) -> Vec<Complex64> {
        let n = len / GAIN_STEP + 2;
        let mut phasors: [Complex64; N_SINUSOIDS] = std::array::from_fn(|k| {
            self.weights[k] * Complex64::from_polar(1.0, self.omegas[k] * t0 as f64)
        });
        let steps: [Complex64; N_SINUSOIDS] =
            std::array::from_fn(|k| Complex64::from_polar(1.0, self.omegas[k] * GAIN_STEP as f64));
        let mut knots = Vec::with_capacity(n);
        for _ in 0..n {
            knots.push(phasors.iter().sum::<Complex64>());
            for (p, s) in phasors.iter_mut().zip(&steps) {
                *p *= s;
            }
        }
        knots
    }

    // Calls `f(n, gain)` for every sample n in 0..len.
    fn for_each_gain(&self, t0: u64, len: usize, mut f: impl FnMut(usize, Complex64)) {
        let inv = 1.0 / GAIN_STEP as f64;
        for (seg, pair) in self.knots(t0, len).windows(2).enumerate() {
            let base = seg * GAIN_STEP;
            if base >= len {
                break;
            }
            let slope = (pair[1] - pair[0]) * inv;
            for i in 0..GAIN_STEP.min(len - base) {
                f(base + i, pair[0] + slope * i as f64);
            }
        }
    }
}

/// Per-sample complex gain of every tap over one call.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    pub delays: Vec<usize>,
    pub gains: Vec<Vec<Complex64>>,
}

impl ChannelTrace {
    /// Frequency response at signed FFT bin `k` using the gains at sample `n`.
    pub fn frequency_response(&self, n: usize, k: i64, fft_size: usize) -> Complex64 {
        self.delays
            .iter()
            .zip(&self.gains)
            .map(|(&d, g)| {
                g[n] * Complex64::from_polar(1.0, -2.0 * PI * k as f64 * d as f64 / fft_size as f64)
            })
            .sum()
    }
}

/// One link's fading state. Time advances with every call to
/// [`FadingChannel::apply`] so Doppler phases stay continuous across
/// subframes.
#[derive(Debug, Clone)]
pub struct FadingChannel {
    model: ChannelModel,
    taps: Vec<FadingTap>,
    time: u64,
}

impl FadingChannel {
    pub fn new(cfg: &ChannelConfig, sample_rate: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let taps = cfg
            .effective_taps()
            .into_iter()
            .map(|t| FadingTap::draw(&mut rng, t, cfg.doppler_hz, sample_rate))
            .collect();
        Self {
            model: cfg.model,
            taps,
            time: 0,
        }
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn set_time(&mut self, time: u64) {
        self.time = time;
    }

    /// Exact gain of tap `tap` at absolute sample time `t` (1 for
    /// non-fading models).
    pub fn tap_gain_at(&self, tap: usize, t: f64) -> Complex64 {
        if self.model.is_fading() {
            self.taps[tap].gain_at(t)
        } else {
            Complex64::new(1.0, 0.0)
        }
    }

    pub fn n_taps(&self) -> usize {
        self.taps.len()
    }

    /// Runs `samples` through the tapped delay line starting at the current
    /// time and advances the clock.
    pub fn apply(&mut self, samples: &[Complex64]) -> (Vec<Complex64>, ChannelTrace) {
        let mut trace = ChannelTrace {
            delays: Vec::with_capacity(self.taps.len()),
            gains: Vec::with_capacity(self.taps.len()),
        };
        let out = self.run(samples, Some(&mut trace));
        (out, trace)
    }

    /// [`FadingChannel::apply`] without recording the tap gains.
    pub fn filter(&mut self, samples: &[Complex64]) -> Vec<Complex64> {
        self.run(samples, None)
    }

    fn run(
        &mut self,
        samples: &[Complex64],
        mut trace: Option<&mut ChannelTrace>,
    ) -> Vec<Complex64> {
        let len = samples.len();
        let t0 = self.time;
        self.time += len as u64;
        if !self.model.is_fading() {
            if let Some(tr) = trace {
                tr.delays.push(0);
                tr.gains.push(vec![Complex64::new(1.0, 0.0); len]);
            }
            return samples.to_vec();
        }
        let mut out = vec![Complex64::new(0.0, 0.0); len];
        for tap in &self.taps {
            let d = tap.delay;
            match trace.as_deref_mut() {
                Some(tr) => {
                    let mut g = Vec::with_capacity(len);
                    tap.for_each_gain(t0, len, |n, gn| {
                        g.push(gn);
                        if n >= d {
                            out[n] += gn * samples[n - d];
                        }
                    });
                    tr.delays.push(d);
                    tr.gains.push(g);
                }
                None => tap.for_each_gain(t0, len, |n, gn| {
                    if n >= d {
                        out[n] += gn * samples[n - d];
                    }
                }),
            }
        }
        out
    }
}

/// Stateless form of [`FadingChannel::apply`] starting at `time_origin`.
pub fn apply_channel(
    samples: &[Complex64],
    cfg: &ChannelConfig,
    sample_rate: f64,
    time_origin: u64,
) -> (Vec<Complex64>, ChannelTrace) {
    let mut ch = FadingChannel::new(cfg, sample_rate);
    ch.set_time(time_origin);
    ch.apply(samples)
}

/// Adds circular complex Gaussian noise of variance
/// `reference_power / 10^(snr_db / 10)`. An infinite SNR adds nothing.
pub fn add_awgn<R: Rng>(samples: &mut [Complex64], snr_db: f64, reference_power: f64, rng: &mut R) {
    if snr_db == f64::INFINITY {
        return;
    }
    let sigma = (reference_power / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
    for s in samples.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *s += Complex64::new(re, im) * sigma;
    }
}

/// Multiplies sample `n` by `exp(j 2 pi cfo n / fs)`.
pub fn apply_cfo(samples: &mut [Complex64], cfo_hz: f64, sample_rate: f64) {
    // Phasor recurrence, re-anchored every block to bound rounding drift.
    const BLOCK: usize = 64;
    let step = 2.0 * PI * cfo_hz / sample_rate;
    let rot = Complex64::from_polar(1.0, step);
    for (b, chunk) in samples.chunks_mut(BLOCK).enumerate() {
        let mut ph = Complex64::from_polar(1.0, step * (b * BLOCK) as f64);
        for s in chunk {
            *s *= ph;
            ph *= rot;
        }
    }
}

/// Circular shift; positive offsets delay the signal.
pub fn apply_timing_offset(samples: &[Complex64], offset: i64) -> Vec<Complex64> {
    let len = samples.len();
    if len == 0 {
        return Vec::new();
    }
    let shift = offset.rem_euclid(len as i64) as usize;
    let mut out = Vec::with_capacity(len);
    out.extend_from_slice(&samples[len - shift..]);
    out.extend_from_slice(&samples[..len - shift]);
    out
}
