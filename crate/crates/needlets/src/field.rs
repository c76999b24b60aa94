//! Angular power spectra and simulation of centered isotropic Gaussian
//! fields via coefficient sampling.
//!
//! Sampling is counter-based: each (l, m) draws from its own ChaCha stream
//! derived from the master seed, so the result does not depend on iteration
//! order or on how the work is partitioned across threads.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::geom::CubatureGrid;
use crate::harmonics::{
    synthesize_on_grid, triangular_index, weighted_legendre_sum, HarmonicCoefficients, MAX_DEGREE,
};

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Power-law envelope parameters: c1 * l^-alpha <= C_l <= c2 * l^-alpha.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectrumModel {
    pub alpha: f64,
    pub c1: f64,
    pub c2: f64,
}

/// Angular power spectrum C_l, l = 0..=l_max, with C_0 = 0 for centered
/// fields. A spectrum may carry a power-law envelope certificate; spectra
/// without one are accepted everywhere except where the regularity envelope
/// is explicitly required.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerSpectrum {
    values: Vec<f64>,
    model: Option<SpectrumModel>,
}

impl PowerSpectrum {
    /// C_l = amplitude * l^-alpha for l >= 1. Requires alpha > 2, the
    /// regularity threshold for the high-frequency theory.
    pub fn power_law(alpha: f64, amplitude: f64, l_max: usize) -> Result<Self> {
        if !(alpha > 2.0) {
            return Err(Error::invalid(format!(
                "power-law exponent must satisfy alpha > 2, got {alpha}"
            )));
        }
        if !(amplitude > 0.0) {
            return Err(Error::invalid("amplitude must be positive"));
        }
        if l_max > MAX_DEGREE {
            return Err(Error::ResourceLimit(format!(
                "l_max {l_max} exceeds configured maximum {MAX_DEGREE}"
            )));
        }
        let mut values = Vec::with_capacity(l_max + 1);
        values.push(0.0);
        for l in 1..=l_max {
            values.push(amplitude * (l as f64).powf(-alpha));
        }
        Ok(PowerSpectrum {
            values,
            model: Some(SpectrumModel {
                alpha,
                c1: amplitude,
                c2: amplitude,
            }),
        })
    }

    /// Wraps a user-supplied C_l table. Requires C_l >= 0 and C_0 = 0.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("spectrum table is empty"));
        }
        if values.len() - 1 > MAX_DEGREE {
            return Err(Error::ResourceLimit(format!(
                "spectrum table degree {} exceeds maximum {MAX_DEGREE}",
                values.len() - 1
            )));
        }
        if values[0] != 0.0 {
            return Err(Error::invalid("C_0 must be zero for a centered field"));
        }
        if values.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::invalid("spectrum values must be nonnegative"));
        }
        Ok(PowerSpectrum {
            values,
            model: None,
        })
    }

    /// Attaches an envelope certificate after verifying
    /// c1 l^-alpha <= C_l <= c2 l^-alpha for every 1 <= l <= l_max.
    pub fn with_envelope(mut self, alpha: f64, c1: f64, c2: f64) -> Result<Self> {
        if !(alpha > 2.0) || !(c1 > 0.0) || c2 < c1 {
            return Err(Error::invalid(
                "envelope requires alpha > 2 and 0 < c1 <= c2",
            ));
        }
        for (l, &v) in self.values.iter().enumerate().skip(1) {
            let base = (l as f64).powf(-alpha);
            if v < c1 * base * (1.0 - 1e-12) || v > c2 * base * (1.0 + 1e-12) {
                return Err(Error::invalid(format!(
                    "C_{l} = {v} violates envelope [{}, {}]",
                    c1 * base,
                    c2 * base
                )));
            }
        }
        self.model = Some(SpectrumModel { alpha, c1, c2 });
        Ok(self)
    }

    /// Synthetic stand-in for an observational best-fit spectrum: a damped
    /// power law C_l = A l^-3 exp(-(l/300)^2). Not a fit to any data set.
    pub fn synthetic_cmb_like(l_max: usize) -> Result<Self> {
        if l_max > MAX_DEGREE {
            return Err(Error::ResourceLimit(format!(
                "l_max {l_max} exceeds configured maximum {MAX_DEGREE}"
            )));
        }
        let mut values = Vec::with_capacity(l_max + 1);
        values.push(0.0);
        for l in 1..=l_max {
            let lf = l as f64;
            values.push(lf.powi(-3) * (-(lf / 300.0) * (lf / 300.0)).exp());
        }
        let mut spectrum = PowerSpectrum {
            values,
            model: None,
        };
        // tightest power-law envelope this table satisfies
        let c1 = (1..=l_max)
            .map(|l| spectrum.values[l] * (l as f64).powi(3))
            .fold(f64::INFINITY, f64::min);
        spectrum.model = Some(SpectrumModel {
            alpha: 3.0,
            c1,
            c2: 1.0,
        });
        Ok(spectrum)
    }

    pub fn l_max(&self) -> usize {
        self.values.len() - 1
    }

    pub fn value(&self, l: usize) -> f64 {
        self.values.get(l).copied().unwrap_or(0.0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn model(&self) -> Option<&SpectrumModel> {
        self.model.as_ref()
    }

    pub fn is_assumption_compliant(&self) -> bool {
        self.model.is_some()
    }

    /// Covariance function K(t) = sum_l C_l (2l+1)/(4 pi) P_l(t), truncated
    /// at the table degree.
    pub fn covariance(&self, t: f64) -> f64 {
        let coeffs: Vec<f64> = self
            .values
            .iter()
            .enumerate()
            .map(|(l, &c)| c * (2.0 * l as f64 + 1.0) / FOUR_PI)
            .collect();
        weighted_legendre_sum(&coeffs, t.clamp(-1.0, 1.0))
    }

    /// Field variance K(1) = sum_l C_l (2l+1)/(4 pi).
    pub fn field_variance(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(l, &c)| c * (2.0 * l as f64 + 1.0) / FOUR_PI)
            .sum()
    }

    /// Two-column text: l C_l.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "# power-spectrum v1")?;
        for (l, &c) in self.values.iter().enumerate() {
            writeln!(w, "{l} {c:.16e}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut values = Vec::new();
        for line in r.lines() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let mut it = t.split_whitespace();
            let l: usize = it
                .next()
                .ok_or_else(|| Error::Parse("missing degree column".into()))?
                .parse()
                .map_err(|e| Error::Parse(format!("bad degree: {e}")))?;
            let c: f64 = it
                .next()
                .ok_or_else(|| Error::Parse("missing C_l column".into()))?
                .parse()
                .map_err(|e| Error::Parse(format!("bad C_l: {e}")))?;
            if l != values.len() {
                return Err(Error::Parse(format!(
                    "spectrum rows must be consecutive from l = 0, got l = {l} at row {}",
                    values.len()
                )));
            }
            values.push(c);
        }
        PowerSpectrum::from_values(values)
    }
}

/// SplitMix64 step, used to derive independent per-replicate master seeds.
pub fn replicate_seed(master: u64, replicate: u64) -> u64 {
    let mut z = master ^ replicate.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws the triangular coefficient array for the spectrum.
///
/// a_{l,0} is real Gaussian with variance C_l; for m >= 1,
/// a_lm = (u + iv) sqrt(C_l / 2) with independent standard normals, so
/// E|a_lm|^2 = C_l. Each (l, m) uses its own counter-derived stream:
/// identical output for any evaluation order or thread partition.
pub fn sample_alm(spectrum: &PowerSpectrum, seed: u64) -> HarmonicCoefficients {
    let l_max = spectrum.l_max();
    let mut coeffs = HarmonicCoefficients::zeros(l_max).expect("degree checked by spectrum");
    let base = ChaCha8Rng::seed_from_u64(seed);
    for l in 1..=l_max {
        let c = spectrum.value(l);
        if c == 0.0 {
            continue;
        }
        let sd = c.sqrt();
        let half = (c / 2.0).sqrt();
        for m in 0..=l {
            let mut rng = base.clone();
            rng.set_stream(triangular_index(l, m) as u64);
            let value = if m == 0 {
                Complex64::new(sd * rng.sample::<f64, _>(StandardNormal), 0.0)
            } else {
                let u: f64 = rng.sample(StandardNormal);
                let v: f64 = rng.sample(StandardNormal);
                Complex64::new(half * u, half * v)
            };
            coeffs.set(l, m, value).expect("index in range");
        }
    }
    coeffs
}

/// Samples a field realization on the grid points.
///
/// The grid must be exact to degree 2 l_max so the realization supports
/// exact re-analysis downstream.
pub fn simulate_field(
    spectrum: &PowerSpectrum,
    grid: &CubatureGrid,
    seed: u64,
) -> Result<Vec<f64>> {
    if grid.degree() < 2 * spectrum.l_max() {
        return Err(Error::precondition(format!(
            "simulation at l_max {} needs grid degree >= {}, got {}",
            spectrum.l_max(),
            2 * spectrum.l_max(),
            grid.degree()
        )));
    }
    let coeffs = sample_alm(spectrum, seed);
    synthesize_on_grid(&coeffs, grid)
}
