//! Masked-sky analysis: zeroed observation regions, perturbed needlet
//! coefficients, the per-point discrepancy ratio, and the localization
//! bound on the coefficient perturbation.
//!
//! A masked sky is T + V with V = -T on the unobserved set, so the
//! perturbed coefficients are computed exactly the way a pixel pipeline
//! would: zero the samples, re-analyze them to the scale's degree, and
//! evaluate the coefficients from the re-analyzed harmonics. The masked
//! field is not band-limited; the truncation is part of what the
//! discrepancy measures.

use rayon::prelude::*;
use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::accum::CompensatedSum;
use crate::error::{Error, Result};
use crate::field::{replicate_seed, sample_alm, PowerSpectrum};
use crate::geom::{geodesic_distance, geodesic_distance_vec, CubatureGrid, SpherePoint};
use crate::harmonics::analyze;
use crate::needlet::{coeff_variance, needlet_coeffs, NeedletCoefficients};
use crate::window::FilterProfile;

/// Discrepancy level above which a direction is flagged.
pub const FLAG_THRESHOLD: f64 = 0.1;

/// Union of colatitude bands and geodesic discs marking the unobserved
/// region.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SkyMask {
    bands: Vec<(f64, f64)>,
    discs: Vec<(SpherePoint, f64)>,
}

impl SkyMask {
    pub fn empty() -> Self {
        SkyMask::default()
    }

    /// Masks the whole sphere.
    pub fn full() -> Self {
        let mut m = SkyMask::empty();
        m.add_band(0.0, std::f64::consts::PI).unwrap();
        m
    }

    /// Adds the colatitude band [theta1, theta2], radians.
    pub fn add_band(&mut self, theta1: f64, theta2: f64) -> Result<()> {
        if !(0.0..=std::f64::consts::PI).contains(&theta1)
            || !(0.0..=std::f64::consts::PI).contains(&theta2)
            || theta1 > theta2
        {
            return Err(Error::invalid(format!(
                "band [{theta1}, {theta2}] must satisfy 0 <= theta1 <= theta2 <= pi"
            )));
        }
        self.bands.push((theta1, theta2));
        Ok(())
    }

    /// Adds a geodesic disc of the given radius (radians) around a center.
    pub fn add_disc(&mut self, center: SpherePoint, radius: f64) -> Result<()> {
        if !(radius > 0.0) || radius > std::f64::consts::PI {
            return Err(Error::invalid(format!(
                "disc radius {radius} must lie in (0, pi]"
            )));
        }
        self.discs.push((center, radius));
        Ok(())
    }

    pub fn bands(&self) -> &[(f64, f64)] {
        &self.bands
    }

    pub fn discs(&self) -> &[(SpherePoint, f64)] {
        &self.discs
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty() && self.discs.is_empty()
    }

    /// True when the point falls in the unobserved region.
    pub fn contains(&self, p: &SpherePoint) -> bool {
        if self
            .bands
            .iter()
            .any(|&(a, b)| p.theta() >= a && p.theta() <= b)
        {
            return true;
        }
        self.discs
            .iter()
            .any(|(c, r)| geodesic_distance(c, p) <= *r)
    }

    /// Boolean-per-point rasterization on a grid, true = unobserved.
    pub fn rasterize(&self, grid: &CubatureGrid) -> MaskRaster {
        let flags: Vec<bool> = grid.points().iter().map(|p| self.contains(p)).collect();
        let mut masked_weight = CompensatedSum::new();
        for (f, w) in flags.iter().zip(grid.weights()) {
            if *f {
                masked_weight.add(*w);
            }
        }
        let fraction = masked_weight.value() / (4.0 * std::f64::consts::PI);
        MaskRaster {
            flags,
            fraction: fraction.clamp(0.0, 1.0),
        }
    }

    /// Structured text: one band or disc per line.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "# sky-mask v1")?;
        for (a, b) in &self.bands {
            writeln!(w, "band {a:.16e} {b:.16e}")?;
        }
        for (c, r) in &self.discs {
            writeln!(w, "disc {:.16e} {:.16e} {r:.16e}", c.theta(), c.phi())?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut mask = SkyMask::empty();
        for line in r.lines() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let mut it = t.split_whitespace();
            let kind = it.next().unwrap();
            let nums: Vec<f64> = it
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("bad mask number {s:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            match kind {
                "band" => {
                    if nums.len() != 2 {
                        return Err(Error::Parse("band needs: theta1 theta2".into()));
                    }
                    mask.add_band(nums[0], nums[1])?;
                }
                "disc" => {
                    if nums.len() != 3 {
                        return Err(Error::Parse("disc needs: theta phi radius".into()));
                    }
                    mask.add_disc(SpherePoint::new(nums[0], nums[1])?, nums[2])?;
                }
                other => {
                    return Err(Error::Parse(format!("unknown mask entry kind {other:?}")));
                }
            }
        }
        Ok(mask)
    }
}

/// Rasterized mask tied to one grid.
#[derive(Clone, Debug)]
pub struct MaskRaster {
    flags: Vec<bool>,
    fraction: f64,
}

impl MaskRaster {
    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    /// Weighted (steradian) fraction of the sphere that is masked.
    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    pub fn masked_count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }
}

/// Zeroes the samples on the masked set, leaving the rest untouched.
pub fn apply_mask(values: &[f64], raster: &MaskRaster) -> Result<Vec<f64>> {
    if values.len() != raster.flags.len() {
        return Err(Error::invalid(format!(
            "mask rasterized on {} points, field has {}",
            raster.flags.len(),
            values.len()
        )));
    }
    Ok(values
        .iter()
        .zip(&raster.flags)
        .map(|(&v, &m)| if m { 0.0 } else { v })
        .collect())
}

/// Minimum geodesic distance from every grid point to the masked set;
/// infinity when the raster masks nothing.
pub fn clearance_distances(grid: &CubatureGrid, raster: &MaskRaster) -> Result<Vec<f64>> {
    if grid.point_count() != raster.flags.len() {
        return Err(Error::invalid("raster does not match grid"));
    }
    let masked: Vec<[f64; 3]> = grid
        .unit_vectors()
        .iter()
        .zip(&raster.flags)
        .filter(|(_, m)| **m)
        .map(|(v, _)| *v)
        .collect();
    if masked.is_empty() {
        return Ok(vec![f64::INFINITY; grid.point_count()]);
    }
    Ok(grid
        .unit_vectors()
        .par_iter()
        .map(|v| {
            masked
                .iter()
                .map(|m| geodesic_distance_vec(*v, *m))
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// Perturbed coefficients from masked samples: re-analyze the samples to the
/// scale's top degree, then evaluate the coefficients from those harmonics.
pub fn masked_needlet_coeffs(
    masked_values: &[f64],
    grid: &Arc<CubatureGrid>,
    profile: &FilterProfile,
    j: u32,
) -> Result<NeedletCoefficients> {
    let l_sup = profile.max_support_degree(j);
    let reanalyzed = analyze(grid, masked_values, l_sup)?;
    needlet_coeffs(&reanalyzed, profile, j, grid)
}

/// Per-point Monte Carlo discrepancy map D_k = E[(beta - beta~)^2] / E[beta^2].
#[derive(Clone, Debug)]
pub struct DiscrepancyMap {
    pub scale: u32,
    pub replicates: usize,
    pub d: Vec<f64>,
    pub se: Vec<f64>,
    pub flagged: Vec<bool>,
    pub clearance: Vec<f64>,
    pub mask_fraction: f64,
}

impl DiscrepancyMap {
    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|f| **f).count()
    }

    /// Tabular export: theta phi D SE flag.
    pub fn write_to(&self, grid: &CubatureGrid, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "# discrepancy-map v1")?;
        writeln!(w, "# scale {} replicates {}", self.scale, self.replicates)?;
        writeln!(w, "# columns: theta phi d se flag")?;
        for (k, p) in grid.points().iter().enumerate() {
            writeln!(
                w,
                "{:.16e} {:.16e} {:.16e} {:.16e} {}",
                p.theta(),
                p.phi(),
                self.d[k],
                self.se[k],
                u8::from(self.flagged[k])
            )?;
        }
        Ok(())
    }
}

/// Monte Carlo estimate of the discrepancy over fresh field realizations.
///
/// The field is simulated band-limited to the scale's window top, so that
/// the pipeline's re-analysis step is exact on the scale grid and the only
/// perturbation measured is the one the mask itself introduces. Modes above
/// the window support never enter the unmasked coefficients. The
/// denominator is the model variance; the numerator averages the squared
/// coefficient perturbation over `replicates` simulations. Deterministic
/// for a fixed master seed regardless of worker count.
pub fn discrepancy(
    spectrum: &PowerSpectrum,
    profile: &FilterProfile,
    j: u32,
    grid: &Arc<CubatureGrid>,
    raster: &MaskRaster,
    replicates: usize,
    master_seed: u64,
) -> Result<DiscrepancyMap> {
    if replicates < 50 {
        return Err(Error::invalid("discrepancy needs at least 50 replicates"));
    }
    if raster.flags.len() != grid.point_count() {
        return Err(Error::invalid("raster does not match grid"));
    }
    let l_sup = profile.max_support_degree(j);
    let truncated;
    let spectrum = if spectrum.l_max() > l_sup {
        truncated = PowerSpectrum::from_values(spectrum.values()[..=l_sup].to_vec())?;
        &truncated
    } else {
        spectrum
    };
    let sigma2 = coeff_variance(spectrum, profile, j, grid)?;
    let n = grid.point_count();
    // fixed replicate chunks keep the fold order worker-independent
    let chunk_size = 16usize;
    let chunks: Vec<(u64, u64)> = (0..replicates as u64)
        .step_by(chunk_size)
        .map(|start| (start, (start + chunk_size as u64).min(replicates as u64)))
        .collect();
    let partials: Vec<Result<(Vec<f64>, Vec<f64>)>> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let mut sum = vec![CompensatedSum::new(); n];
            let mut sum_sq = vec![CompensatedSum::new(); n];
            for r in start..end {
                let alm = sample_alm(spectrum, replicate_seed(master_seed, r));
                let clean = needlet_coeffs(&alm, profile, j, grid)?;
                let field = crate::harmonics::synthesize_on_grid(&alm, grid)?;
                let masked = apply_mask(&field, raster)?;
                let perturbed = masked_needlet_coeffs(&masked, grid, profile, j)?;
                for k in 0..n {
                    let diff = clean.beta()[k] - perturbed.beta()[k];
                    let x = diff * diff;
                    sum[k].add(x);
                    sum_sq[k].add(x * x);
                }
            }
            Ok((
                sum.into_iter().map(|a| a.value()).collect(),
                sum_sq.into_iter().map(|a| a.value()).collect(),
            ))
        })
        .collect();
    let mut total = vec![CompensatedSum::new(); n];
    let mut total_sq = vec![CompensatedSum::new(); n];
    for partial in partials {
        let (s, sq) = partial?;
        for k in 0..n {
            total[k].add(s[k]);
            total_sq[k].add(sq[k]);
        }
    }
    let r = replicates as f64;
    let mut d = Vec::with_capacity(n);
    let mut se = Vec::with_capacity(n);
    let mut flagged = Vec::with_capacity(n);
    for k in 0..n {
        let mean = total[k].value() / r;
        let var = (total_sq[k].value() / r - mean * mean).max(0.0) * r / (r - 1.0);
        let dk = mean / sigma2[k];
        d.push(dk);
        se.push((var / r).sqrt() / sigma2[k]);
        flagged.push(dk > FLAG_THRESHOLD);
    }
    let clearance = clearance_distances(grid, raster)?;
    Ok(DiscrepancyMap {
        scale: j,
        replicates,
        d,
        se,
        flagged,
        clearance,
        mask_fraction: raster.fraction,
    })
}

/// Localization bound on the coefficient perturbation for a point whose
/// epsilon-neighborhood is fully observed:
/// `C_M 4 pi sqrt(2 V*) B^j / (1 + B^j eps)^M`.
pub fn prop8_bound(
    c_m: f64,
    v_star: f64,
    bandwidth: f64,
    j: u32,
    epsilon: f64,
    m_exp: u32,
) -> Result<f64> {
    if !(v_star >= 0.0) {
        return Err(Error::invalid("V* must be nonnegative"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid("clearance radius must be positive"));
    }
    if m_exp < 1 {
        return Err(Error::invalid("decay exponent must satisfy M >= 1"));
    }
    let bj = bandwidth.powi(j as i32);
    Ok(
        c_m * 4.0 * std::f64::consts::PI * (2.0 * v_star).sqrt() * bj
            / (1.0 + bj * epsilon).powi(m_exp as i32),
    )
}

/// The bound relative to the coefficient scale sqrt(E beta^2).
pub fn prop8_relative_bound(
    c_m: f64,
    v_star: f64,
    bandwidth: f64,
    j: u32,
    epsilon: f64,
    m_exp: u32,
    sigma2: f64,
) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateSpectrum(
            "relative bound needs a positive coefficient variance".into(),
        ));
    }
    Ok(prop8_bound(c_m, v_star, bandwidth, j, epsilon, m_exp)? / sigma2.sqrt())
}

/// Smallest constant that makes the localization bound dominate the
/// measured perturbations at every point with clearance at least `eps_min`.
pub fn calibrate_prop8_constant(
    l2_diff: &[f64],
    clearance: &[f64],
    v_star: f64,
    bandwidth: f64,
    j: u32,
    m_exp: u32,
    eps_min: f64,
) -> Result<f64> {
    if l2_diff.len() != clearance.len() {
        return Err(Error::invalid("l2 and clearance lengths differ"));
    }
    let bj = bandwidth.powi(j as i32);
    let base = 4.0 * std::f64::consts::PI * (2.0 * v_star).sqrt() * bj;
    let mut c_m: f64 = 0.0;
    for (l2, eps) in l2_diff.iter().zip(clearance) {
        if !eps.is_finite() || *eps < eps_min {
            continue;
        }
        c_m = c_m.max(l2 * (1.0 + bj * eps).powi(m_exp as i32) / base);
    }
    Ok(c_m)
}

/// Mean discrepancy per clearance-distance bin.
#[derive(Clone, Copy, Debug)]
pub struct ClearanceBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_d: f64,
    pub se: f64,
}

/// Bins the map by clearance distance: bin 0 collects the masked interior
/// (clearance zero), the rest split the observed range evenly.
pub fn binned_by_clearance(map: &DiscrepancyMap, bins: usize) -> Vec<ClearanceBin> {
    let finite_max = map
        .clearance
        .iter()
        .cloned()
        .filter(|c| c.is_finite())
        .fold(0.0f64, f64::max);
    let width = if bins > 0 {
        finite_max / bins as f64
    } else {
        0.0
    };
    let mut out = Vec::new();
    for b in 0..bins.max(1) {
        let lo = b as f64 * width;
        let hi = if b + 1 == bins.max(1) {
            finite_max + 1e-12
        } else {
            (b + 1) as f64 * width
        };
        let mut mean = CompensatedSum::new();
        let mut var = CompensatedSum::new();
        let mut count = 0usize;
        for k in 0..map.d.len() {
            let c = map.clearance[k];
            if !c.is_finite() {
                continue;
            }
            let inside = if b == 0 { c < hi } else { c >= lo && c < hi };
            if inside {
                mean.add(map.d[k]);
                var.add(map.se[k] * map.se[k]);
                count += 1;
            }
        }
        if count > 0 {
            out.push(ClearanceBin {
                lo,
                hi,
                count,
                mean_d: mean.value() / count as f64,
                se: var.value().sqrt() / count as f64,
            });
        }
    }
    out
}
