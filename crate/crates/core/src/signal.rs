//! Randomly modulated reference pulses and their running time integrals.
//!
//! A [`ReferenceSet`] holds `K` pulses of `P` ticks each. The
//! [`IntegralTable`] built from it stores, for every pulse `i` and every
//! integration window `t'`, the energy accumulated from the pulse start up to
//! `t'`. Those columns are the dictionary that received pixel energies are
//! correlated against.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Domain};

/// Rows per reduction chunk when computing column statistics. Fixed so the
/// summation order never depends on the worker count.
const STATS_CHUNK_ROWS: usize = 512;

/// Fills one pulse with intensity samples.
///
/// Implementations must be pure functions of `(seed, pulse)` so that pulses
/// can be produced in any order on any thread.
pub trait PulseGenerator: Sync {
    fn fill_pulse(&self, seed: u64, pulse: usize, out: &mut [f64]);
}

/// I.i.d. uniform intensities on `[0, 1)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPulses;

impl PulseGenerator for UniformPulses {
    fn fill_pulse(&self, seed: u64, pulse: usize, out: &mut [f64]) {
        let mut rng = stream_rng(seed, Domain::Reference, pulse as u64);
        for v in out.iter_mut() {
            *v = rng.random::<f64>();
        }
    }
}

/// Every sample equals the wrapped value. Degenerate, useful for checking the
/// forward model by hand.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPulses(pub f64);

impl PulseGenerator for ConstantPulses {
    fn fill_pulse(&self, _seed: u64, _pulse: usize, out: &mut [f64]) {
        out.fill(self.0);
    }
}

/// `K` reference pulses of `P` ticks, stored pulse-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    num_pulses: usize,
    pulse_len: usize,
    samples: Vec<f64>,
    seed: Option<u64>,
    tick_seconds: f64,
}

impl ReferenceSet {
    /// Wraps externally produced samples (for instance, read from disk).
    pub fn from_samples(
        num_pulses: usize,
        pulse_len: usize,
        samples: Vec<f64>,
        tick_seconds: f64,
        seed: Option<u64>,
    ) -> Result<Self> {
        check_dims(num_pulses, pulse_len, tick_seconds)?;
        if samples.len() != num_pulses * pulse_len {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for {num_pulses} pulses of {pulse_len} ticks",
                samples.len()
            )));
        }
        if let Some(bad) = samples.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "sample {bad} is {} (intensities must be finite and nonnegative)",
                samples[bad]
            )));
        }
        Ok(Self {
            num_pulses,
            pulse_len,
            samples,
            seed,
            tick_seconds,
        })
    }

    pub fn num_pulses(&self) -> usize {
        self.num_pulses
    }

    pub fn pulse_len(&self) -> usize {
        self.pulse_len
    }

    pub fn tick_seconds(&self) -> f64 {
        self.tick_seconds
    }

    /// Generator seed, when the set was synthesized rather than loaded.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn pulse(&self, i: usize) -> &[f64] {
        &self.samples[i * self.pulse_len..(i + 1) * self.pulse_len]
    }
}

fn check_dims(num_pulses: usize, pulse_len: usize, tick_seconds: f64) -> Result<()> {
    if num_pulses == 0 || pulse_len == 0 {
        return Err(Error::InvalidDimension(format!(
            "reference set needs K >= 1 and P >= 1 (got K={num_pulses}, P={pulse_len})"
        )));
    }
    if !(tick_seconds.is_finite() && tick_seconds > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tick_seconds must be positive and finite (got {tick_seconds})"
        )));
    }
    Ok(())
}

/// Uniform `[0, 1)` reference pulses, reproducible from `seed`.
pub fn generate_reference(
    num_pulses: usize,
    pulse_len: usize,
    seed: u64,
    tick_seconds: f64,
) -> Result<ReferenceSet> {
    generate_reference_with(&UniformPulses, num_pulses, pulse_len, seed, tick_seconds)
}

pub fn generate_reference_with<G: PulseGenerator + ?Sized>(
    generator: &G,
    num_pulses: usize,
    pulse_len: usize,
    seed: u64,
    tick_seconds: f64,
) -> Result<ReferenceSet> {
    check_dims(num_pulses, pulse_len, tick_seconds)?;
    let mut samples = vec![0.0; num_pulses * pulse_len];
    samples
        .par_chunks_mut(pulse_len)
        .enumerate()
        .for_each(|(i, pulse)| generator.fill_pulse(seed, i, pulse));
    Ok(ReferenceSet {
        num_pulses,
        pulse_len,
        samples,
        seed: Some(seed),
        tick_seconds,
    })
}

/// Running integrals of every reference pulse plus per-window statistics
/// over the pulse index.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralTable {
    num_pulses: usize,
    pulse_len: usize,
    tick_seconds: f64,
    // integrals[i * P + (t - 1)] is the energy of pulse i over ticks 1..=t.
    integrals: Vec<f64>,
    column_means: Vec<f64>,
    column_center_norms: Vec<f64>,
}

impl IntegralTable {
    pub fn num_pulses(&self) -> usize {
        self.num_pulses
    }

    pub fn pulse_len(&self) -> usize {
        self.pulse_len
    }

    pub fn tick_seconds(&self) -> f64 {
        self.tick_seconds
    }

    /// Energy of pulse `i` over the window `1..=t`. `t = 0` is the empty window.
    #[inline]
    pub fn integral(&self, pulse: usize, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.integrals[pulse * self.pulse_len + t - 1]
        }
    }

    /// All windows `1..=P` of pulse `i`.
    pub fn row(&self, pulse: usize) -> &[f64] {
        &self.integrals[pulse * self.pulse_len..(pulse + 1) * self.pulse_len]
    }

    /// Pulse-major `K × P` matrix of integrals.
    pub fn integrals(&self) -> &[f64] {
        &self.integrals
    }

    /// Mean over pulses of the window `1..=t`, for `t` in `1..=P`.
    pub fn column_mean(&self, t: usize) -> f64 {
        self.column_means[t - 1]
    }

    /// Euclidean norm over pulses of the centered window `1..=t`.
    pub fn column_center_norm(&self, t: usize) -> f64 {
        self.column_center_norms[t - 1]
    }

    pub fn column_means(&self) -> &[f64] {
        &self.column_means
    }

    pub fn column_center_norms(&self) -> &[f64] {
        &self.column_center_norms
    }
}

/// Prefix-integrates every pulse and precomputes the column statistics used
/// by the correlation kernel.
pub fn build_integral_table(reference: &ReferenceSet) -> IntegralTable {
    let k = reference.num_pulses;
    let p = reference.pulse_len;
    let tick = reference.tick_seconds;

    let mut integrals = vec![0.0; k * p];
    integrals
        .par_chunks_mut(p)
        .zip(reference.samples.par_chunks(p))
        .for_each(|(out, pulse)| running_integral(pulse, tick, out));

    let (column_means, column_center_norms) = column_stats(&integrals, k, p);
    IntegralTable {
        num_pulses: k,
        pulse_len: p,
        tick_seconds: tick,
        integrals,
        column_means,
        column_center_norms,
    }
}

/// Neumaier-compensated running sum, scaled by `tick`.
fn running_integral(samples: &[f64], tick: f64, out: &mut [f64]) {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let mut prev = 0.0f64;
    for (x, o) in samples.iter().zip(out.iter_mut()) {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
        // Compensation can wobble by less than an ulp; the integrand is
        // nonnegative so the integral never decreases.
        let value = ((sum + comp) * tick).max(prev);
        *o = value;
        prev = value;
    }
}

fn column_stats(integrals: &[f64], k: usize, p: usize) -> (Vec<f64>, Vec<f64>) {
    let chunk = STATS_CHUNK_ROWS * p;

    let sums = integrals
        .par_chunks(chunk)
        .map(|rows| {
            let mut acc = vec![0.0; p];
            for row in rows.chunks_exact(p) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            acc
        })
        .collect::<Vec<_>>();
    let mut means = vec![0.0; p];
    for part in &sums {
        for (m, s) in means.iter_mut().zip(part) {
            *m += s;
        }
    }
    for m in &mut means {
        *m /= k as f64;
    }

    // Second pass: squared deviations, plus a flag for columns that are
    // exactly constant (their centered norm must be exactly zero).
    let partials = integrals
        .par_chunks(chunk)
        .map(|rows| {
            let mut acc = vec![0.0; p];
            let mut varies = vec![false; p];
            let first = &integrals[..p];
            for row in rows.chunks_exact(p) {
                for t in 0..p {
                    let d = row[t] - means[t];
                    acc[t] += d * d;
                    varies[t] |= row[t] != first[t];
                }
            }
            (acc, varies)
        })
        .collect::<Vec<_>>();
    let mut norms = vec![0.0; p];
    let mut varies = vec![false; p];
    for (acc, var) in &partials {
        for t in 0..p {
            norms[t] += acc[t];
            varies[t] |= var[t];
        }
    }
    for (n, v) in norms.iter_mut().zip(&varies) {
        *n = if *v { n.sqrt() } else { 0.0 };
    }
    (means, norms)
}
