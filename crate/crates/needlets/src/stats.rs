//! Hermite-polynomial statistics of normalized needlet coefficients, their
//! covariance matrix, the across-scale partial-sum process, and the
//! Kolmogorov–Smirnov-type test against the Brownian supremum law.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::Arc;

use crate::accum::{mean_and_se, moments, CompensatedSum};
use crate::error::{Error, Result};
use crate::field::{replicate_seed, sample_alm, PowerSpectrum};
use crate::geom::CubatureGrid;
use crate::needlet::{
    gamma_power_sums, needlet_coeffs, GammaPowerSums, NeedletCoefficients, PAIR_CAP,
};
use crate::window::FilterProfile;

/// Overflow guard for the Hermite recurrence.
pub const MAX_HERMITE_ORDER: usize = 30;

/// Eigenvalues below this floor mark the covariance matrix as singular.
pub const OMEGA_EIGENVALUE_FLOOR: f64 = 1e-12;

/// Condition numbers above this mark the covariance matrix as singular.
pub const OMEGA_CONDITION_LIMIT: f64 = 1e8;

/// Probabilists' Hermite polynomial H_q(x).
pub fn hermite(q: usize, x: f64) -> Result<f64> {
    if q > MAX_HERMITE_ORDER {
        return Err(Error::invalid(format!(
            "Hermite order {q} exceeds maximum {MAX_HERMITE_ORDER}"
        )));
    }
    let mut h0 = 1.0;
    if q == 0 {
        return Ok(h0);
    }
    let mut h1 = x;
    for k in 1..q {
        let h2 = x * h1 - k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    Ok(h1)
}

fn factorial(q: usize) -> f64 {
    (1..=q).fold(1.0, |acc, i| acc * i as f64)
}

/// Weight matrix w_{uq} defining the statistics
/// h_u = (1/N_j) sum_k sum_q w_{uq} H_q(beta_hat_k).
#[derive(Clone, Debug, PartialEq)]
pub struct HermiteWeights {
    rows: Vec<Vec<f64>>,
}

impl HermiteWeights {
    /// Rows are indexed by statistic, columns by Hermite order starting at
    /// q = 1. Every row must be nonzero and the rows linearly independent.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("weight matrix has no rows"));
        }
        let q = rows.iter().map(|r| r.len()).max().unwrap();
        if q == 0 || q > MAX_HERMITE_ORDER {
            return Err(Error::invalid(format!(
                "Hermite order must lie in 1..={MAX_HERMITE_ORDER}"
            )));
        }
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|mut r| {
                r.resize(q, 0.0);
                r
            })
            .collect();
        for (u, r) in rows.iter().enumerate() {
            if r.iter().all(|&w| w == 0.0) {
                return Err(Error::invalid(format!(
                    "weight row {u} is identically zero"
                )));
            }
        }
        if rank(&rows) < rows.len() {
            return Err(Error::invalid("weight rows must be linearly independent"));
        }
        Ok(HermiteWeights { rows })
    }

    /// The goodness-of-fit triple: H_2, then H_3 + 3 H_1 (plain third
    /// moment), then H_4 + 6 H_2 (fourth moment minus three).
    pub fn gof_presets() -> Self {
        HermiteWeights {
            rows: vec![
                vec![0.0, 1.0, 0.0, 0.0],
                vec![3.0, 0.0, 1.0, 0.0],
                vec![0.0, 6.0, 0.0, 1.0],
            ],
        }
    }

    /// Number of statistics U.
    pub fn count(&self) -> usize {
        self.rows.len()
    }

    /// Highest Hermite order Q.
    pub fn order(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, u: usize) -> &[f64] {
        &self.rows[u]
    }
}

fn rank(rows: &[Vec<f64>]) -> usize {
    let mut m: Vec<Vec<f64>> = rows.to_vec();
    let cols = m[0].len();
    let mut r = 0usize;
    for c in 0..cols {
        if r >= m.len() {
            break;
        }
        let (pivot, mag) = (r..m.len())
            .map(|i| (i, m[i][c].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if mag < 1e-12 {
            continue;
        }
        m.swap(r, pivot);
        for i in (r + 1)..m.len() {
            let f = m[i][c] / m[r][c];
            for k in c..cols {
                m[i][k] -= f * m[r][k];
            }
        }
        r += 1;
    }
    r
}

/// Evaluates H_1..H_Q at x in one recurrence pass.
fn hermite_column(q_max: usize, x: f64, out: &mut [f64]) {
    let mut h0 = 1.0;
    let mut h1 = x;
    out[0] = h1;
    for k in 1..q_max {
        let h2 = x * h1 - k as f64 * h0;
        h0 = h1;
        h1 = h2;
        out[k] = h1;
    }
}

/// One statistic h_u = (1/N_j) sum_k sum_q w_{uq} H_q(beta_hat_k).
///
/// Note the 1/N_j normalization with N_j = sqrt(point count), not the
/// point count itself.
pub fn h_statistic(
    coeffs: &NeedletCoefficients,
    weights: &HermiteWeights,
    u: usize,
) -> Result<f64> {
    if u >= weights.count() {
        return Err(Error::invalid(format!("statistic index {u} out of range")));
    }
    Ok(h_vector(coeffs, weights)?[u])
}

/// All statistics at once.
pub fn h_vector(coeffs: &NeedletCoefficients, weights: &HermiteWeights) -> Result<DVector<f64>> {
    let hat = coeffs.beta_hat().ok_or_else(|| {
        Error::precondition("needlet coefficients must be normalized before computing statistics")
    })?;
    let q = weights.order();
    let mut col = vec![0.0; q];
    let mut acc: Vec<CompensatedSum> = vec![CompensatedSum::new(); weights.count()];
    for &x in hat {
        hermite_column(q, x, &mut col);
        for (u, a) in acc.iter_mut().enumerate() {
            let row = weights.row(u);
            let mut term = 0.0;
            for (w, h) in row.iter().zip(&col) {
                term += w * h;
            }
            a.add(term);
        }
    }
    let n_j = (hat.len() as f64).sqrt();
    Ok(DVector::from_iterator(
        weights.count(),
        acc.into_iter().map(|a| a.value() / n_j),
    ))
}

/// Covariance matrix of the h statistics from the pair-power sums:
/// E[h_u h_v] = (1/n) sum_q q! w_{uq} w_{vq} sum_{k,k'} gamma^q.
pub fn omega_from_power_sums(
    sums: &GammaPowerSums,
    weights: &HermiteWeights,
) -> Result<DMatrix<f64>> {
    if sums.sums.len() < weights.order() {
        return Err(Error::invalid(format!(
            "need gamma power sums up to q = {}, got {}",
            weights.order(),
            sums.sums.len()
        )));
    }
    let u_count = weights.count();
    let n = sums.point_count as f64;
    let omega = DMatrix::from_fn(u_count, u_count, |u, v| {
        let mut total = 0.0;
        for q in 1..=weights.order() {
            let w = weights.row(u)[q - 1] * weights.row(v)[q - 1];
            if w != 0.0 {
                total += factorial(q) * w * sums.sums[q - 1];
            }
        }
        total / n
    });
    Ok(omega)
}

/// Covariance matrix from an explicit correlation matrix (unit diagonal,
/// symmetric). Convenience wrapper over the power-sum rule.
pub fn omega_from_gamma(gamma: &DMatrix<f64>, weights: &HermiteWeights) -> Result<DMatrix<f64>> {
    let n = gamma.nrows();
    if gamma.ncols() != n {
        return Err(Error::invalid("correlation matrix must be square"));
    }
    for i in 0..n {
        if (gamma[(i, i)] - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("correlation matrix must have unit diagonal"));
        }
        for j2 in 0..i {
            if (gamma[(i, j2)] - gamma[(j2, i)]).abs() > 1e-9 {
                return Err(Error::invalid("correlation matrix must be symmetric"));
            }
        }
    }
    let q_max = weights.order();
    let mut sums = vec![CompensatedSum::new(); q_max];
    for i in 0..n {
        for j2 in 0..n {
            let g = gamma[(i, j2)];
            let mut p = 1.0;
            for a in sums.iter_mut() {
                p *= g;
                a.add(p);
            }
        }
    }
    omega_from_power_sums(
        &GammaPowerSums {
            point_count: n,
            sums: sums.into_iter().map(|a| a.value()).collect(),
            exact: true,
        },
        weights,
    )
}

/// Symmetric inverse square root of a covariance matrix.
///
/// Rejects matrices with an eigenvalue under [`OMEGA_EIGENVALUE_FLOOR`] or a
/// condition number over [`OMEGA_CONDITION_LIMIT`] instead of regularizing:
/// a degenerate covariance means the statistic set itself is degenerate.
pub fn omega_inverse_sqrt(omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = nalgebra::SymmetricEigen::new(omega.clone());
    let min = sym
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let max = sym
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if min < OMEGA_EIGENVALUE_FLOOR || max / min > OMEGA_CONDITION_LIMIT {
        return Err(Error::SingularCovariance(format!(
            "eigenvalue range [{min:.3e}, {max:.3e}] outside acceptance bounds"
        )));
    }
    let inv_sqrt = DMatrix::from_diagonal(&sym.eigenvalues.map(|v| 1.0 / v.sqrt()));
    Ok(&sym.eigenvectors * inv_sqrt * sym.eigenvectors.transpose())
}

/// Partial-sum process of standardized per-scale vectors over the even
/// scale ladder.
#[derive(Clone, Debug)]
pub struct WjPath {
    scales: Vec<u32>,
    points: Vec<DVector<f64>>,
}

impl WjPath {
    pub fn scales(&self) -> &[u32] {
        &self.scales
    }

    /// W(r) at r = (i+1)/m for i = 0..m; the path starts at zero before
    /// the first entry.
    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn step_count(&self) -> usize {
        self.points.len()
    }

    /// One scalar component of the path.
    pub fn component(&self, u: usize) -> Vec<f64> {
        self.points.iter().map(|p| p[u]).collect()
    }
}

/// Validates the even ladder: scales step by exactly two.
pub fn validate_ladder(scales: &[u32]) -> Result<()> {
    if scales.is_empty() {
        return Err(Error::invalid("scale ladder is empty"));
    }
    for s in scales {
        if s % 2 != 0 {
            return Err(Error::invalid(format!(
                "scale ladder must use even scales, got {s}"
            )));
        }
    }
    for w in scales.windows(2) {
        if w[1] != w[0] + 2 {
            return Err(Error::invalid(format!(
                "scale ladder has a gap between {} and {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Builds W(i/m) = (1/sqrt(m)) * sum of the first i standardized vectors.
pub fn wj_path(entries: &[(u32, DVector<f64>)]) -> Result<WjPath> {
    let scales: Vec<u32> = entries.iter().map(|(j, _)| *j).collect();
    validate_ladder(&scales)?;
    let dim = entries[0].1.len();
    if entries.iter().any(|(_, v)| v.len() != dim) {
        return Err(Error::invalid("standardized vectors differ in dimension"));
    }
    let m = entries.len() as f64;
    let mut run = DVector::zeros(dim);
    let mut points = Vec::with_capacity(entries.len());
    for (_, v) in entries {
        run += v;
        points.push(&run / m.sqrt());
    }
    Ok(WjPath { scales, points })
}

/// sup_r |W(r)| over the realized path points.
pub fn ks_statistic(path: &[f64]) -> f64 {
    path.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

/// `P(sup |X(r)| > t, 0 <= r <= 1)` for standard Brownian motion X, by the
/// reflection-principle series
/// `1 - sum_k (-1)^k [Phi((2k+1) t) - Phi((2k-1) t)]`, truncated when the
/// terms drop below 1e-12.
pub fn sup_brownian_p_value(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    // symmetric in k, so fold k and -k together
    let mut series = 2.0 * normal.cdf(t) - 1.0;
    let mut k = 1i32;
    loop {
        let term = normal.cdf((2 * k + 1) as f64 * t) - normal.cdf((2 * k - 1) as f64 * t);
        let signed = if k % 2 == 0 { term } else { -term };
        series += 2.0 * signed;
        if term.abs() < 1e-12 || k > 200 {
            break;
        }
        k += 1;
    }
    (1.0 - series).clamp(0.0, 1.0)
}

/// Threshold t with P(sup |X| > t) = level, by bisection.
pub fn sup_brownian_threshold(level: f64) -> Result<f64> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::invalid("significance level must lie in (0, 1)"));
    }
    let mut lo = 1e-9;
    let mut hi = 20.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sup_brownian_p_value(mid) > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Supremum statistic of a path component together with its p-value under
/// the Brownian limit.
pub fn ks_test(path: &[f64]) -> Result<(f64, f64)> {
    if path.is_empty() {
        return Err(Error::invalid("empty path"));
    }
    let stat = ks_statistic(path);
    Ok((stat, sup_brownian_p_value(stat)))
}

/// One-sample Kolmogorov–Smirnov distance and asymptotic p-value against
/// the standard normal law.
pub fn kolmogorov_normal_test(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = normal.cdf(x);
        d = d.max(f - i as f64 / n as f64);
        d = d.max((i + 1) as f64 / n as f64 - f);
    }
    let sqrt_n = (n as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    let mut p = 0.0;
    for k in 1..=100i32 {
        let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * (f64::from(k) * lambda).powi(2)).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

/// Monte Carlo moments of the h statistics at one scale.
#[derive(Clone, Debug)]
pub struct MomentReport {
    pub replicates: usize,
    pub seed: u64,
    pub means: Vec<f64>,
    pub mean_ses: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub covariance_ses: DMatrix<f64>,
    pub skewness: Vec<f64>,
    pub excess_kurtosis: Vec<f64>,
    /// Raw per-replicate statistic vectors, in replicate order.
    pub samples: Vec<DVector<f64>>,
}

/// Simulates `replicates` fields and reports empirical moments of the
/// statistics. Replicates parallelize over counter-derived seeds;
/// aggregation runs in replicate order, so the report is identical for any
/// worker count.
pub fn mc_moment_oracle(
    spectrum: &PowerSpectrum,
    profile: &FilterProfile,
    j: u32,
    grid: &Arc<CubatureGrid>,
    weights: &HermiteWeights,
    replicates: usize,
    master_seed: u64,
) -> Result<MomentReport> {
    if replicates < 100 {
        return Err(Error::invalid(
            "moment oracle needs at least 100 replicates",
        ));
    }
    let samples: Vec<DVector<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| -> Result<DVector<f64>> {
            let alm = sample_alm(spectrum, replicate_seed(master_seed, r));
            let nc = needlet_coeffs(&alm, profile, j, grid)?.normalize(spectrum, profile)?;
            h_vector(&nc, weights)
        })
        .collect::<Result<Vec<_>>>()?;
    let u_count = weights.count();
    let mut means = Vec::with_capacity(u_count);
    let mut mean_ses = Vec::with_capacity(u_count);
    let mut skewness = Vec::with_capacity(u_count);
    let mut excess = Vec::with_capacity(u_count);
    let per_component: Vec<Vec<f64>> = (0..u_count)
        .map(|u| samples.iter().map(|s| s[u]).collect())
        .collect();
    for comp in &per_component {
        let (m, se) = mean_and_se(comp);
        means.push(m);
        mean_ses.push(se);
        let mm = moments(comp);
        skewness.push(mm.skewness);
        excess.push(mm.excess_kurtosis);
    }
    let mut covariance = DMatrix::zeros(u_count, u_count);
    let mut covariance_ses = DMatrix::zeros(u_count, u_count);
    for u in 0..u_count {
        for v in 0..=u {
            let prods: Vec<f64> = samples
                .iter()
                .map(|s| (s[u] - means[u]) * (s[v] - means[v]))
                .collect();
            let (c, se) = mean_and_se(&prods);
            covariance[(u, v)] = c;
            covariance[(v, u)] = c;
            covariance_ses[(u, v)] = se;
            covariance_ses[(v, u)] = se;
        }
    }
    Ok(MomentReport {
        replicates,
        seed: master_seed,
        means,
        mean_ses,
        covariance,
        covariance_ses,
        skewness,
        excess_kurtosis: excess,
        samples,
    })
}

/// Precomputed state for running goodness-of-fit campaigns: scale grids,
/// covariance standardizations, and the test threshold.
pub struct GofMachine {
    profile: Arc<FilterProfile>,
    spectrum: PowerSpectrum,
    weights: HermiteWeights,
    scales: Vec<u32>,
    grids: Vec<Arc<CubatureGrid>>,
    omegas: Vec<DMatrix<f64>>,
    inv_sqrts: Vec<DMatrix<f64>>,
    level: f64,
    threshold: f64,
}

/// Outcome of one campaign: a simulated (or observed) sky pushed through
/// the full pipeline.
#[derive(Clone, Debug)]
pub struct GofCampaign {
    pub seed: u64,
    pub h_raw: Vec<DVector<f64>>,
    pub path: WjPath,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// Rejection-rate summary over repeated null campaigns.
#[derive(Clone, Debug)]
pub struct SizeReport {
    pub campaigns: usize,
    pub rejections: usize,
    pub rows: Vec<(u64, f64, f64, bool)>,
}

impl SizeReport {
    pub fn rate(&self) -> f64 {
        self.rejections as f64 / self.campaigns as f64
    }
}

impl GofMachine {
    pub fn prepare(
        profile: Arc<FilterProfile>,
        spectrum: PowerSpectrum,
        weights: HermiteWeights,
        scales: &[u32],
        level: f64,
    ) -> Result<Self> {
        validate_ladder(scales)?;
        if !(0.0 < level && level < 1.0) {
            return Err(Error::invalid("significance level must lie in (0, 1)"));
        }
        let mut grids = Vec::with_capacity(scales.len());
        let mut omegas = Vec::with_capacity(scales.len());
        let mut inv_sqrts = Vec::with_capacity(scales.len());
        for &j in scales {
            let grid = Arc::new(CubatureGrid::for_scale(j, profile.bandwidth())?);
            let sums = gamma_power_sums(&spectrum, &profile, j, &grid, weights.order(), PAIR_CAP)?;
            let omega = omega_from_power_sums(&sums, &weights)?;
            let inv = omega_inverse_sqrt(&omega)?;
            grids.push(grid);
            omegas.push(omega);
            inv_sqrts.push(inv);
        }
        let threshold = sup_brownian_threshold(level)?;
        Ok(GofMachine {
            profile,
            spectrum,
            weights,
            scales: scales.to_vec(),
            grids,
            omegas,
            inv_sqrts,
            level,
            threshold,
        })
    }

    pub fn scales(&self) -> &[u32] {
        &self.scales
    }

    pub fn omega(&self, idx: usize) -> &DMatrix<f64> {
        &self.omegas[idx]
    }

    pub fn grid(&self, idx: usize) -> &Arc<CubatureGrid> {
        &self.grids[idx]
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    /// Required harmonic degree for a campaign field.
    pub fn required_l_max(&self) -> usize {
        self.scales
            .iter()
            .map(|&j| self.profile.max_support_degree(j))
            .max()
            .unwrap_or(0)
    }

    /// Runs the pipeline on one simulated sky.
    pub fn campaign(&self, seed: u64) -> Result<GofCampaign> {
        let alm = sample_alm(&self.spectrum, seed);
        self.campaign_from_alm(seed, &alm)
    }

    /// Runs the pipeline on externally supplied harmonic coefficients.
    pub fn campaign_from_alm(
        &self,
        seed: u64,
        alm: &crate::harmonics::HarmonicCoefficients,
    ) -> Result<GofCampaign> {
        let mut entries = Vec::with_capacity(self.scales.len());
        let mut h_raw = Vec::with_capacity(self.scales.len());
        for (idx, &j) in self.scales.iter().enumerate() {
            let nc = needlet_coeffs(alm, &self.profile, j, &self.grids[idx])?
                .normalize(&self.spectrum, &self.profile)?;
            let h = h_vector(&nc, &self.weights)?;
            entries.push((j, &self.inv_sqrts[idx] * &h));
            h_raw.push(h);
        }
        let path = wj_path(&entries)?;
        let (statistic, p_value) = ks_test(&path.component(0))?;
        Ok(GofCampaign {
            seed,
            h_raw,
            path,
            statistic,
            p_value,
            reject: p_value < self.level,
        })
    }

    /// Null-size calibration: repeated campaigns on freshly simulated
    /// Gaussian skies.
    pub fn size_calibration(&self, campaigns: usize, master_seed: u64) -> Result<SizeReport> {
        if campaigns == 0 {
            return Err(Error::invalid("need at least one campaign"));
        }
        let results: Vec<GofCampaign> = (0..campaigns as u64)
            .into_par_iter()
            .map(|i| self.campaign(replicate_seed(master_seed, i)))
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<(u64, f64, f64, bool)> = results
            .iter()
            .map(|c| (c.seed, c.statistic, c.p_value, c.reject))
            .collect();
        let rejections = rows.iter().filter(|r| r.3).count();
        Ok(SizeReport {
            campaigns,
            rejections,
            rows,
        })
    }
}
