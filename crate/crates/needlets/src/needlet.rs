//! Needlet functions, coefficients, exact second moments, and the
//! correlation-decay diagnostics.
//!
//! The needlet at scale j centered on cubature point xi_k is
//! `psi_{j,k}(x) = sqrt(lambda_k) sum_l b(l/B^j) (2l+1)/(4 pi) P_l(<x, xi_k>)`.
//! For an isotropic field with spectrum C_l the coefficient covariance is a
//! pure Legendre series in the pair angle, so correlations, variances and
//! cross-scale covariances all reduce to one weighted recurrence pass.

use rayon::prelude::*;
use std::io::Write;
use std::sync::Arc;

use crate::accum::CompensatedSum;
use crate::error::{Error, Result};
use crate::field::{replicate_seed, sample_alm, PowerSpectrum};
use crate::geom::{geodesic_distance_vec, CubatureGrid, SpherePoint};
use crate::harmonics::{synthesize_on_grid, weighted_legendre_sum, HarmonicCoefficients};
use crate::window::FilterProfile;

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Default cap on enumerated point pairs in the diagnostics.
pub const PAIR_CAP: usize = 200_000;

/// Grids at most this large use full pair enumeration for the moment sums.
pub const FULL_ENUMERATION_LIMIT: usize = 4096;

/// Needlet coefficients at one scale, optionally normalized.
#[derive(Clone, Debug)]
pub struct NeedletCoefficients {
    j: u32,
    grid: Arc<CubatureGrid>,
    beta: Vec<f64>,
    sigma2: Option<Vec<f64>>,
    beta_hat: Option<Vec<f64>>,
}

impl NeedletCoefficients {
    /// Rebuilds a coefficient set from stored values, e.g. a parsed dump.
    /// The variances must be positive; beta_hat is derived from them.
    pub fn from_parts(
        j: u32,
        grid: Arc<CubatureGrid>,
        beta: Vec<f64>,
        sigma2: Vec<f64>,
    ) -> Result<Self> {
        if beta.len() != grid.point_count() || sigma2.len() != grid.point_count() {
            return Err(Error::invalid(format!(
                "expected {} coefficients and variances",
                grid.point_count()
            )));
        }
        if sigma2.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::DegenerateSpectrum(
                "coefficient variances must be positive".into(),
            ));
        }
        let beta_hat = beta
            .iter()
            .zip(&sigma2)
            .map(|(b, s)| b / s.sqrt())
            .collect();
        Ok(NeedletCoefficients {
            j,
            grid,
            beta,
            sigma2: Some(sigma2),
            beta_hat: Some(beta_hat),
        })
    }

    pub fn scale(&self) -> u32 {
        self.j
    }

    pub fn grid(&self) -> &Arc<CubatureGrid> {
        &self.grid
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn sigma2(&self) -> Option<&[f64]> {
        self.sigma2.as_deref()
    }

    pub fn beta_hat(&self) -> Option<&[f64]> {
        self.beta_hat.as_deref()
    }

    /// Attaches the model variances and the normalized coefficients
    /// beta_hat = beta / sqrt(E beta^2).
    pub fn normalize(mut self, spectrum: &PowerSpectrum, profile: &FilterProfile) -> Result<Self> {
        let sigma2 = coeff_variance(spectrum, profile, self.j, &self.grid)?;
        let beta_hat = self
            .beta
            .iter()
            .zip(&sigma2)
            .map(|(b, s)| b / s.sqrt())
            .collect();
        self.sigma2 = Some(sigma2);
        self.beta_hat = Some(beta_hat);
        Ok(self)
    }

    /// Tabular dump: j k theta phi beta sigma2 beta_hat.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "# needlet-coefficients v1")?;
        writeln!(w, "# columns: j k theta phi beta sigma2 beta_hat")?;
        for (k, p) in self.grid.points().iter().enumerate() {
            let sigma2 = self.sigma2.as_ref().map_or(f64::NAN, |s| s[k]);
            let hat = self.beta_hat.as_ref().map_or(f64::NAN, |s| s[k]);
            writeln!(
                w,
                "{} {} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}",
                self.j,
                k,
                p.theta(),
                p.phi(),
                self.beta[k],
                sigma2,
                hat
            )?;
        }
        Ok(())
    }
}

/// Evaluates psi_{j,k} at an arbitrary point.
pub fn psi_eval(
    profile: &FilterProfile,
    j: u32,
    grid: &CubatureGrid,
    k: usize,
    x: &SpherePoint,
) -> Result<f64> {
    if k >= grid.point_count() {
        return Err(Error::invalid(format!("point index {k} out of range")));
    }
    let l_sup = profile.max_support_degree(j);
    let w = profile.window_weights(j, l_sup)?;
    let coeffs: Vec<f64> = w
        .iter()
        .enumerate()
        .map(|(l, &b)| b * (2.0 * l as f64 + 1.0) / FOUR_PI)
        .collect();
    let xv = x.unit_vector();
    let cv = grid.unit_vectors()[k];
    let t = (xv[0] * cv[0] + xv[1] * cv[1] + xv[2] * cv[2]).clamp(-1.0, 1.0);
    Ok(grid.weights()[k].sqrt() * weighted_legendre_sum(&coeffs, t))
}

/// Needlet coefficients from harmonic coefficients:
/// beta_k = sqrt(lambda_k) sum_l b(l/B^j) sum_m a_lm Y_lm(xi_k).
///
/// The coefficient degree must reach the upper window support.
pub fn needlet_coeffs(
    coeffs: &HarmonicCoefficients,
    profile: &FilterProfile,
    j: u32,
    grid: &Arc<CubatureGrid>,
) -> Result<NeedletCoefficients> {
    let l_sup = profile.max_support_degree(j);
    if coeffs.l_max() < l_sup {
        return Err(Error::precondition(format!(
            "scale {j} needs harmonic coefficients up to degree {l_sup}, got l_max {}",
            coeffs.l_max()
        )));
    }
    let w = profile.window_weights(j, l_sup)?;
    let mut windowed = HarmonicCoefficients::zeros(l_sup)?;
    for l in 0..=l_sup {
        for m in 0..=l {
            windowed.set(l, m, coeffs.get(l, m as i64) * w[l])?;
        }
    }
    let field = synthesize_on_grid(&windowed, grid)?;
    let beta = field
        .iter()
        .zip(grid.weights())
        .map(|(f, lam)| lam.sqrt() * f)
        .collect();
    Ok(NeedletCoefficients {
        j,
        grid: Arc::clone(grid),
        beta,
        sigma2: None,
        beta_hat: None,
    })
}

/// The scale-j spectral kernel: dense Legendre weights
/// `c_l = b^2(l/B^j) C_l (2l+1)/(4 pi)` and their total
/// `S_j = sum_l c_l = E[beta^2] / lambda`.
#[derive(Clone, Debug)]
pub struct ScaleKernel {
    j: u32,
    bandwidth: f64,
    coeffs: Vec<f64>,
    total: f64,
}

impl ScaleKernel {
    pub fn new(spectrum: &PowerSpectrum, profile: &FilterProfile, j: u32) -> Result<Self> {
        let l_sup = profile.max_support_degree(j);
        if spectrum.l_max() < l_sup {
            return Err(Error::precondition(format!(
                "spectrum must cover the scale-{j} window support (degree {l_sup}), got l_max {}",
                spectrum.l_max()
            )));
        }
        let w = profile.window_weights(j, l_sup)?;
        let mut coeffs = Vec::with_capacity(l_sup + 1);
        let mut total = CompensatedSum::new();
        for l in 0..=l_sup {
            let c = w[l] * w[l] * spectrum.value(l) * (2.0 * l as f64 + 1.0) / FOUR_PI;
            coeffs.push(c);
            total.add(c);
        }
        let total = total.value();
        if !(total > 0.0) {
            return Err(Error::DegenerateSpectrum(format!(
                "spectrum vanishes on the scale-{j} window support"
            )));
        }
        Ok(ScaleKernel {
            j,
            bandwidth: profile.bandwidth(),
            coeffs,
            total,
        })
    }

    pub fn scale(&self) -> u32 {
        self.j
    }

    /// E[beta_{j,k} beta_{j,k'}] / sqrt(lambda_k lambda_k') at pair angle cosine t.
    pub fn covariance(&self, t: f64) -> f64 {
        weighted_legendre_sum(&self.coeffs, t.clamp(-1.0, 1.0))
    }

    /// Cor(beta_{j,k}, beta_{j,k'}) at pair angle cosine t.
    pub fn correlation(&self, t: f64) -> f64 {
        self.covariance(t) / self.total
    }

    /// S_j = sum_l b^2(l/B^j) C_l (2l+1)/(4 pi).
    pub fn variance_scalar(&self) -> f64 {
        self.total
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
}

/// Model variance E[beta_{j,k}^2] = lambda_k S_j per grid point.
pub fn coeff_variance(
    spectrum: &PowerSpectrum,
    profile: &FilterProfile,
    j: u32,
    grid: &CubatureGrid,
) -> Result<Vec<f64>> {
    let kernel = ScaleKernel::new(spectrum, profile, j)?;
    Ok(grid
        .weights()
        .iter()
        .map(|lam| lam * kernel.variance_scalar())
        .collect())
}

/// The model correlation between two coefficients of one scale.
pub fn analytic_correlation(
    spectrum: &PowerSpectrum,
    profile: &FilterProfile,
    j: u32,
    grid: &CubatureGrid,
    k: usize,
    k2: usize,
) -> Result<f64> {
    if k >= grid.point_count() || k2 >= grid.point_count() {
        return Err(Error::invalid("pair index out of range"));
    }
    let kernel = ScaleKernel::new(spectrum, profile, j)?;
    let a = grid.unit_vectors()[k];
    let b = grid.unit_vectors()[k2];
    let t = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    Ok(kernel.correlation(t))
}

/// Model covariance across two scales. Window supports at scales two or
/// more apart are disjoint, so the value is exactly zero there.
pub fn cross_scale_covariance(
    spectrum: &PowerSpectrum,
    profile: &FilterProfile,
    j1: u32,
    grid1: &CubatureGrid,
    k1: usize,
    j2: u32,
    grid2: &CubatureGrid,
    k2: usize,
) -> Result<f64> {
    if k1 >= grid1.point_count() || k2 >= grid2.point_count() {
        return Err(Error::invalid("pair index out of range"));
    }
    if j1.abs_diff(j2) >= 2 {
        return Ok(0.0);
    }
    let lo = *profile
        .support_degrees(j1)
        .start()
        .max(profile.support_degrees(j2).start());
    let hi = *profile
        .support_degrees(j1)
        .end()
        .min(profile.support_degrees(j2).end());
    if lo > hi {
        return Ok(0.0);
    }
    if spectrum.l_max() < hi {
        return Err(Error::precondition(format!(
            "spectrum must cover degree {hi} for scales ({j1}, {j2})"
        )));
    }
    let w1 = profile.window_weights(j1, hi)?;
    let w2 = profile.window_weights(j2, hi)?;
    let coeffs: Vec<f64> = (0..=hi)
        .map(|l| w1[l] * w2[l] * spectrum.value(l) * (2.0 * l as f64 + 1.0) / FOUR_PI)
        .collect();
    let a = grid1.unit_vectors()[k1];
    let b = grid2.unit_vectors()[k2];
    let t = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
    let lam = (grid1.weights()[k1] * grid2.weights()[k2]).sqrt();
    Ok(lam * weighted_legendre_sum(&coeffs, t))
}

/// Deterministic row subsample used by the pair diagnostics: every row when
/// the budget allows, otherwise evenly spaced base points. Each selected row
/// is paired against the whole grid, so all pair distances stay represented.
pub fn diagnostic_rows(point_count: usize, cap: usize) -> Vec<usize> {
    let budget_rows = (cap / point_count.max(1)).max(1);
    if budget_rows >= point_count {
        (0..point_count).collect()
    } else {
        (0..budget_rows)
            .map(|i| i * point_count / budget_rows)
            .collect()
    }
}

/// One diagnostic pair: distance, |correlation|, and the localization
/// product |correlation| * (1 + B^j d)^M.
#[derive(Clone, Copy, Debug)]
pub struct DecayRow {
    pub distance: f64,
    pub abs_correlation: f64,
    pub weighted_product: f64,
}

/// Correlation-decay table for scale j with decay exponent M >= 1.
///
/// The maximum of the third column over the table is the empirical
/// scale-j decay constant for this exponent.
pub fn decay_diagnostic(
    spectrum: &PowerSpectrum,
    profile: &FilterProfile,
    j: u32,
    m_exp: u32,
    grid: &CubatureGrid,
    cap: usize,
) -> Result<Vec<DecayRow>> {
    if m_exp < 1 {
        return Err(Error::invalid("decay exponent must satisfy M >= 1"));
    }
    let kernel = ScaleKernel::new(spectrum, profile, j)?;
    let bj = profile.bandwidth().powi(j as i32);
    let uv = grid.unit_vectors();
    let n = grid.point_count();
    // each sampled base point is paired against the whole grid, so the full
    // distance range stays represented under the cap
    let rows = diagnostic_rows(n, cap);
    let tables: Vec<Vec<DecayRow>> = rows
        .par_iter()
        .map(|&k| {
            let center = uv[k];
            let mut out = Vec::with_capacity(n);
            for v in uv {
                let t = dot3(center, *v);
                let d = geodesic_distance_vec(center, *v);
                let cor = kernel.correlation(t.clamp(-1.0, 1.0)).abs();
                out.push(DecayRow {
                    distance: d,
                    abs_correlation: cor,
                    weighted_product: cor * (1.0 + bj * d).powi(m_exp as i32),
                });
            }
            out
        })
        .collect();
    Ok(tables.concat())
}

/// Max of the weighted product column, the per-scale empirical constant.
pub fn decay_constant(table: &[DecayRow]) -> f64 {
    table
        .iter()
        .map(|r| r.weighted_product)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn write_decay_table(table: &[DecayRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "# decay-diagnostic v1")?;
    writeln!(w, "# columns: d_radians abs_cor weighted_product")?;
    for row in table {
        writeln!(
            w,
            "{:.16e} {:.16e} {:.16e}",
            row.distance, row.abs_correlation, row.weighted_product
        )?;
    }
    Ok(())
}

#[inline]
fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Pair-power sums `sum_{k,k'} gamma^q` for q = 1..=q_max over ordered pairs.
#[derive(Clone, Debug)]
pub struct GammaPowerSums {
    pub point_count: usize,
    /// sums[q - 1] holds the ordered-pair sum of gamma^q.
    pub sums: Vec<f64>,
    pub exact: bool,
}

/// Exact pair-power sums in O(n_rings * n) kernel evaluations.
///
/// The product grid is invariant under rotation by one longitude step, and
/// gamma depends only on the pair angle, so every point of a ring has the
/// same row sum: the full ordered-pair sum is sum over rings of
/// n_phi * (row sum of one representative point).
pub fn gamma_power_sums(
    spectrum: &PowerSpectrum,
    profile: &FilterProfile,
    j: u32,
    grid: &CubatureGrid,
    q_max: usize,
    _cap: usize,
) -> Result<GammaPowerSums> {
    if q_max < 1 {
        return Err(Error::invalid("q_max must be at least 1"));
    }
    let kernel = ScaleKernel::new(spectrum, profile, j)?;
    let n = grid.point_count();
    let uv = grid.unit_vectors();
    let ring_rows: Vec<Vec<f64>> = grid
        .rings()
        .par_iter()
        .map(|ring| {
            let center = uv[ring.offset];
            let mut acc = vec![CompensatedSum::new(); q_max];
            for v in uv {
                let gamma = kernel.correlation(dot3(center, *v).clamp(-1.0, 1.0));
                let mut p = 1.0;
                for a in acc.iter_mut() {
                    p *= gamma;
                    a.add(p);
                }
            }
            acc.into_iter().map(|a| a.value()).collect()
        })
        .collect();
    let n_phi = grid.n_phi() as f64;
    let mut sums = vec![CompensatedSum::new(); q_max];
    for row in &ring_rows {
        for (q, &v) in row.iter().enumerate() {
            sums[q].add(n_phi * v);
        }
    }
    Ok(GammaPowerSums {
        point_count: n,
        sums: sums.into_iter().map(|a| a.value()).collect(),
        exact: true,
    })
}

/// Pooled cross-scale correlation estimate and its standard error.
#[derive(Clone, Copy, Debug)]
pub struct CrossScaleEstimate {
    pub correlation: f64,
    pub se: f64,
    pub replicates: usize,
}

/// Monte Carlo estimate of the cross-scale correlation of normalized
/// coefficients, pooled over all point pairs of the two scale grids.
///
/// Per replicate the pooled pair mean factorizes into the product of the two
/// spatial means, so the estimate is cheap and its error shrinks with the
/// grid sizes as well as the replicate count.
pub fn mc_cross_scale_correlation(
    spectrum: &PowerSpectrum,
    profile: &FilterProfile,
    j1: u32,
    grid1: &Arc<CubatureGrid>,
    j2: u32,
    grid2: &Arc<CubatureGrid>,
    replicates: usize,
    master_seed: u64,
) -> Result<CrossScaleEstimate> {
    if replicates < 2 {
        return Err(Error::invalid("need at least 2 replicates"));
    }
    let l_need = profile
        .max_support_degree(j1)
        .max(profile.max_support_degree(j2));
    if spectrum.l_max() < l_need {
        return Err(Error::precondition(format!(
            "spectrum must cover degree {l_need} for scales ({j1}, {j2})"
        )));
    }
    let s1 = ScaleKernel::new(spectrum, profile, j1)?.variance_scalar();
    let s2 = ScaleKernel::new(spectrum, profile, j2)?.variance_scalar();
    let products: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| -> Result<f64> {
            let alm = sample_alm(spectrum, replicate_seed(master_seed, r));
            let c1 = needlet_coeffs(&alm, profile, j1, grid1)?;
            let c2 = needlet_coeffs(&alm, profile, j2, grid2)?;
            let m1 = spatial_mean_normalized(&c1, s1);
            let m2 = spatial_mean_normalized(&c2, s2);
            Ok(m1 * m2)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, se) = crate::accum::mean_and_se(&products);
    Ok(CrossScaleEstimate {
        correlation: mean,
        se,
        replicates,
    })
}

fn spatial_mean_normalized(coeffs: &NeedletCoefficients, variance_scalar: f64) -> f64 {
    let mut acc = CompensatedSum::new();
    for (b, lam) in coeffs.beta().iter().zip(coeffs.grid().weights()) {
        acc.add(b / (lam * variance_scalar).sqrt());
    }
    acc.value() / coeffs.beta().len() as f64
}
