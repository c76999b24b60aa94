//! Legendre kernels, orthonormal spherical harmonics, and the forward and
//! inverse transforms between grid samples and harmonic coefficients.
//!
//! Conventions: complex orthonormal harmonics with the Condon–Shortley phase,
//! `Y_{l,-m} = (-1)^m conj(Y_{lm})`. Real fields are stored as the triangular
//! array of coefficients for `m >= 0`; the negative orders are implied by the
//! conjugation rule. The associated Legendre values are generated by the
//! fully normalized (Holmes–Featherstone style) recurrences, which keep all
//! intermediates of order one well past degree 150.

use num_complex::Complex64;
use rayon::prelude::*;
use std::io::{BufRead, Write};

use crate::accum::CompensatedSum;
use crate::error::{Error, Result};
use crate::geom::{CubatureGrid, SpherePoint};

/// Largest harmonic degree the library is configured for.
pub const MAX_DEGREE: usize = 512;

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Classical Legendre polynomial P_l(t) by the three-term recurrence.
pub fn legendre_poly(l: usize, t: f64) -> f64 {
    match l {
        0 => 1.0,
        1 => t,
        _ => {
            let mut p0 = 1.0;
            let mut p1 = t;
            for k in 2..=l {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    }
}

/// Projection kernel L_l(t) = (2l+1)/(4 pi) P_l(t).
///
/// Arguments outside [-1, 1] by more than 1e-12 are rejected; rounding-level
/// excursions are clamped.
pub fn legendre_kernel(l: usize, t: f64) -> Result<f64> {
    if t.abs() > 1.0 + 1e-12 {
        return Err(Error::invalid(format!(
            "Legendre kernel argument {t} outside [-1, 1]"
        )));
    }
    let t = t.clamp(-1.0, 1.0);
    Ok((2.0 * l as f64 + 1.0) / FOUR_PI * legendre_poly(l, t))
}

/// Sum of `coeffs[l] * P_l(t)` over all degrees in one recurrence pass.
pub fn weighted_legendre_sum(coeffs: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    let mut p0 = 1.0;
    if let Some(&c) = coeffs.first() {
        acc += c * p0;
    }
    if coeffs.len() == 1 {
        return acc;
    }
    let mut p1 = t;
    acc += coeffs[1] * p1;
    for (l, &c) in coeffs.iter().enumerate().skip(2) {
        let lf = l as f64;
        let p2 = ((2.0 * lf - 1.0) * t * p1 - (lf - 1.0) * p0) / lf;
        p0 = p1;
        p1 = p2;
        acc += c * p2;
    }
    acc
}

/// Index of (l, m) with m >= 0 in the packed triangular layout.
#[inline]
pub fn triangular_index(l: usize, m: usize) -> usize {
    l * (l + 1) / 2 + m
}

/// Fully normalized associated Legendre values at one colatitude.
///
/// Entry `triangular_index(l, m)` holds `ptilde_{lm}` such that
/// `Y_lm(theta, phi) = ptilde_{lm}(theta) e^{i m phi}` for m >= 0.
pub fn normalized_legendre_triangle(l_max: usize, cos_theta: f64, sin_theta: f64) -> Vec<f64> {
    let mut p = vec![0.0; triangular_index(l_max, l_max) + 1];
    p[0] = (1.0 / FOUR_PI).sqrt();
    // diagonal, with the Condon-Shortley sign folded in
    for m in 1..=l_max {
        let mf = m as f64;
        p[triangular_index(m, m)] =
            -((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * sin_theta * p[triangular_index(m - 1, m - 1)];
    }
    for m in 0..=l_max {
        if m < l_max {
            let mf = m as f64;
            p[triangular_index(m + 1, m)] =
                (2.0 * mf + 3.0).sqrt() * cos_theta * p[triangular_index(m, m)];
        }
        for l in (m + 2)..=l_max {
            let lf = l as f64;
            let mf = m as f64;
            let alpha = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let beta = (((lf - 1.0) * (lf - 1.0) - mf * mf)
                / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0))
                .sqrt();
            p[triangular_index(l, m)] = alpha
                * (cos_theta * p[triangular_index(l - 1, m)]
                    - beta * p[triangular_index(l - 2, m)]);
        }
    }
    p
}

fn normalized_legendre_single(l: usize, m: usize, cos_theta: f64, sin_theta: f64) -> f64 {
    let mut pmm = (1.0 / FOUR_PI).sqrt();
    for k in 1..=m {
        let kf = k as f64;
        pmm *= -((2.0 * kf + 1.0) / (2.0 * kf)).sqrt() * sin_theta;
    }
    if l == m {
        return pmm;
    }
    let mf = m as f64;
    let mut plm1 = pmm;
    let mut pl = (2.0 * mf + 3.0).sqrt() * cos_theta * pmm;
    if l == m + 1 {
        return pl;
    }
    for ll in (m + 2)..=l {
        let lf = ll as f64;
        let alpha = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
        let beta =
            (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
        let next = alpha * (cos_theta * pl - beta * plm1);
        plm1 = pl;
        pl = next;
    }
    pl
}

/// Orthonormal spherical harmonic Y_lm at a point, any -l <= m <= l.
pub fn ylm(l: usize, m: i64, point: &SpherePoint) -> Result<Complex64> {
    if l > MAX_DEGREE {
        return Err(Error::ResourceLimit(format!(
            "degree {l} exceeds configured maximum {MAX_DEGREE}"
        )));
    }
    if m.unsigned_abs() as usize > l {
        return Err(Error::invalid(format!("|m| = {} exceeds l = {l}", m.abs())));
    }
    let ma = m.unsigned_abs() as usize;
    let p = normalized_legendre_single(l, ma, point.theta().cos(), point.theta().sin());
    let phase = Complex64::from_polar(1.0, ma as f64 * point.phi());
    let value = p * phase;
    if m >= 0 {
        Ok(value)
    } else if ma % 2 == 0 {
        Ok(value.conj())
    } else {
        Ok(-value.conj())
    }
}

/// Triangular array of coefficients a_lm for m >= 0; negative orders follow
/// from a_{l,-m} = (-1)^m conj(a_lm).
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicCoefficients {
    l_max: usize,
    entries: Vec<Complex64>,
}

impl HarmonicCoefficients {
    pub fn zeros(l_max: usize) -> Result<Self> {
        if l_max > MAX_DEGREE {
            return Err(Error::ResourceLimit(format!(
                "l_max {l_max} exceeds configured maximum {MAX_DEGREE}"
            )));
        }
        Ok(HarmonicCoefficients {
            l_max,
            entries: vec![Complex64::new(0.0, 0.0); triangular_index(l_max, l_max) + 1],
        })
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    /// Coefficient for any order, applying the conjugation rule for m < 0.
    pub fn get(&self, l: usize, m: i64) -> Complex64 {
        let ma = m.unsigned_abs() as usize;
        debug_assert!(l <= self.l_max && ma <= l);
        let v = self.entries[triangular_index(l, ma)];
        if m >= 0 {
            v
        } else if ma % 2 == 0 {
            v.conj()
        } else {
            -v.conj()
        }
    }

    pub fn set(&mut self, l: usize, m: usize, value: Complex64) -> Result<()> {
        if l > self.l_max || m > l {
            return Err(Error::invalid(format!(
                "(l, m) = ({l}, {m}) outside triangle with l_max {}",
                self.l_max
            )));
        }
        self.entries[triangular_index(l, m)] = value;
        Ok(())
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Complex64] {
        &mut self.entries
    }

    /// Largest coefficient magnitude, used to scale validation tolerances.
    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Checks the reality constraint: every a_{l,0} must be real up to
    /// rounding relative to the coefficient scale.
    pub fn validate(&self) -> Result<()> {
        let tol = 1e-12 * self.max_abs().max(1.0);
        for l in 0..=self.l_max {
            let v = self.entries[triangular_index(l, 0)];
            if v.im.abs() > tol {
                return Err(Error::invalid(format!(
                    "a_{{{l},0}} has imaginary part {} beyond tolerance",
                    v.im
                )));
            }
        }
        Ok(())
    }

    /// Sum of |a_lm|^2 over all orders including the implied m < 0.
    pub fn total_power(&self) -> f64 {
        let mut acc = CompensatedSum::new();
        for l in 0..=self.l_max {
            acc.add(self.entries[triangular_index(l, 0)].norm_sqr());
            for m in 1..=l {
                acc.add(2.0 * self.entries[triangular_index(l, m)].norm_sqr());
            }
        }
        acc.value()
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "# harmonic-coefficients v1")?;
        writeln!(w, "l_max {}", self.l_max)?;
        writeln!(w, "# columns: l m re im")?;
        for l in 0..=self.l_max {
            for m in 0..=l {
                let v = self.entries[triangular_index(l, m)];
                writeln!(w, "{l} {m} {:.16e} {:.16e}", v.re, v.im)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut l_max: Option<usize> = None;
        let mut coeffs: Option<HarmonicCoefficients> = None;
        for line in r.lines() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            if let Some(rest) = t.strip_prefix("l_max") {
                let v = rest
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("bad l_max: {e}")))?;
                l_max = Some(v);
                coeffs = Some(HarmonicCoefficients::zeros(v)?);
                continue;
            }
            let c = coeffs
                .as_mut()
                .ok_or_else(|| Error::Parse("coefficient row before l_max header".into()))?;
            let mut it = t.split_whitespace();
            let l: usize = it
                .next()
                .ok_or_else(|| Error::Parse("missing l".into()))?
                .parse()
                .map_err(|e| Error::Parse(format!("bad l: {e}")))?;
            let m: usize = it
                .next()
                .ok_or_else(|| Error::Parse("missing m".into()))?
                .parse()
                .map_err(|e| Error::Parse(format!("bad m: {e}")))?;
            let re: f64 = it
                .next()
                .ok_or_else(|| Error::Parse("missing re".into()))?
                .parse()
                .map_err(|e| Error::Parse(format!("bad re: {e}")))?;
            let im: f64 = it
                .next()
                .ok_or_else(|| Error::Parse("missing im".into()))?
                .parse()
                .map_err(|e| Error::Parse(format!("bad im: {e}")))?;
            c.set(l, m, Complex64::new(re, im))?;
        }
        let _ = l_max.ok_or_else(|| Error::Parse("missing l_max header".into()))?;
        Ok(coeffs.unwrap())
    }
}

/// Per-order sums G_m = sum_l a_lm ptilde_lm(theta) for one colatitude.
fn order_sums(coeffs: &HarmonicCoefficients, triangle: &[f64]) -> Vec<Complex64> {
    let l_max = coeffs.l_max();
    let mut g = vec![Complex64::new(0.0, 0.0); l_max + 1];
    for l in 0..=l_max {
        let row = triangular_index(l, 0);
        for m in 0..=l {
            g[m] += coeffs.entries[row + m] * triangle[row + m];
        }
    }
    g
}

/// Real field value from the order sums at longitude phi.
fn field_from_order_sums(g: &[Complex64], phi: f64) -> f64 {
    let step = Complex64::from_polar(1.0, phi);
    let mut phase = step;
    let mut value = g[0].re;
    for gm in &g[1..] {
        value += 2.0 * (gm * phase).re;
        phase *= step;
    }
    value
}

/// Evaluates the real field sum_{l,m} a_lm Y_lm at arbitrary points.
pub fn synthesize(coeffs: &HarmonicCoefficients, points: &[SpherePoint]) -> Result<Vec<f64>> {
    coeffs.validate()?;
    let values = points
        .par_iter()
        .map(|p| {
            let triangle =
                normalized_legendre_triangle(coeffs.l_max(), p.theta().cos(), p.theta().sin());
            let g = order_sums(coeffs, &triangle);
            field_from_order_sums(&g, p.phi())
        })
        .collect();
    Ok(values)
}

/// Same field as [`synthesize`] but reusing Legendre values across each
/// ring of a product grid, which removes the dominant cost.
pub fn synthesize_on_grid(coeffs: &HarmonicCoefficients, grid: &CubatureGrid) -> Result<Vec<f64>> {
    coeffs.validate()?;
    let n_phi = grid.n_phi();
    let ring_values: Vec<Vec<f64>> = grid
        .rings()
        .par_iter()
        .map(|ring| {
            let triangle =
                normalized_legendre_triangle(coeffs.l_max(), ring.cos_theta, ring.sin_theta);
            let g = order_sums(coeffs, &triangle);
            (0..n_phi)
                .map(|i| {
                    let phi = 2.0 * std::f64::consts::PI * i as f64 / n_phi as f64;
                    field_from_order_sums(&g, phi)
                })
                .collect()
        })
        .collect();
    Ok(ring_values.concat())
}

/// Harmonic analysis by cubature: a_lm = sum_k lambda_k T(xi_k) conj(Y_lm(xi_k)).
///
/// Exact for band-limited samples when the grid degree is at least twice the
/// requested l_max, since the integrand T * conj(Y_lm) then lies within the
/// grid's exactness degree.
pub fn analyze(grid: &CubatureGrid, values: &[f64], l_max: usize) -> Result<HarmonicCoefficients> {
    if l_max > MAX_DEGREE {
        return Err(Error::ResourceLimit(format!(
            "l_max {l_max} exceeds configured maximum {MAX_DEGREE}"
        )));
    }
    if grid.degree() < 2 * l_max {
        return Err(Error::precondition(format!(
            "analysis to l_max {l_max} needs grid degree >= {}, got {}",
            2 * l_max,
            grid.degree()
        )));
    }
    if values.len() != grid.point_count() {
        return Err(Error::invalid(format!(
            "expected {} samples, got {}",
            grid.point_count(),
            values.len()
        )));
    }
    let n_phi = grid.n_phi();
    let rings = grid.rings();
    let weights = grid.weights();
    // fixed chunking keeps the reduction order independent of worker count
    let chunk = rings.len().div_ceil(16).max(1);
    let partials: Vec<Vec<Complex64>> = rings
        .par_chunks(chunk)
        .map(|ring_chunk| {
            let mut acc = vec![Complex64::new(0.0, 0.0); triangular_index(l_max, l_max) + 1];
            for ring in ring_chunk {
                let mut f = vec![Complex64::new(0.0, 0.0); l_max + 1];
                for i in 0..n_phi {
                    let idx = ring.offset + i;
                    let phi = 2.0 * std::f64::consts::PI * i as f64 / n_phi as f64;
                    let step = Complex64::from_polar(1.0, -phi);
                    let mut c = Complex64::new(weights[idx] * values[idx], 0.0);
                    for fm in f.iter_mut() {
                        *fm += c;
                        c *= step;
                    }
                }
                let triangle = normalized_legendre_triangle(l_max, ring.cos_theta, ring.sin_theta);
                for l in 0..=l_max {
                    let row = triangular_index(l, 0);
                    for m in 0..=l {
                        acc[row + m] += triangle[row + m] * f[m];
                    }
                }
            }
            acc
        })
        .collect();
    let mut coeffs = HarmonicCoefficients::zeros(l_max)?;
    for partial in partials {
        for (dst, src) in coeffs.entries_mut().iter_mut().zip(partial) {
            *dst += src;
        }
    }
    Ok(coeffs)
}
