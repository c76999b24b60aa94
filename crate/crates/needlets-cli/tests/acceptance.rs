//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured quantities (run with --nocapture to see them all).
//!
//! Every tolerance is pinned here. Two criteria are known not to hold for
//! this construction and fail honestly with their measured values printed:
//! criterion 06 (the scale-uniformity of the correlation-decay constant at
//! M = 3 breaks on near-antipodal grid pairs at j = 4, where the window
//! correlation is still pre-asymptotic) and criterion 09 (the quadratic
//! statistic's skewness at j = 4 is 0.36 exactly, driven by the polar-ring
//! correlation blocks of the product grid, far above the 0.15 gate).

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use needlets::accum::{mean_and_se, moments};
use needlets::field::{replicate_seed, sample_alm};
use needlets::harmonics::{
    legendre_kernel, synthesize_on_grid, triangular_index, weighted_legendre_sum,
};
use needlets::mask::{binned_by_clearance, discrepancy, SkyMask};
use needlets::needlet::{
    cross_scale_covariance, decay_constant, decay_diagnostic, gamma_power_sums,
    mc_cross_scale_correlation, needlet_coeffs, psi_eval, PAIR_CAP,
};
use needlets::stats::{
    kolmogorov_normal_test, mc_moment_oracle, omega_from_power_sums, sup_brownian_p_value,
    GofMachine, HermiteWeights,
};
use needlets::{CubatureGrid, FilterProfile, PowerSpectrum};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Master seed for every Monte Carlo criterion in this suite.
const SUITE_SEED: u64 = 20_090_101;

fn profile(b: f64) -> FilterProfile {
    FilterProfile::with_default_resolution(b).unwrap()
}

/// Asserts the criterion's stated runtime budget and reports the measured
/// wall time (tests run concurrently, so each budget holds with margin).
fn gate_runtime(name: &str, started: std::time::Instant, budget_s: f64) {
    let elapsed = started.elapsed().as_secs_f64();
    println!("criterion {name}: elapsed {elapsed:.2} s (budget {budget_s} s)");
    assert!(
        elapsed < budget_s,
        "criterion {name} took {elapsed:.2} s, budget {budget_s} s"
    );
}

#[test]
fn criterion_01_partition_of_unity() {
    let started = std::time::Instant::now();
    let mut worst = 0.0f64;
    for &b in &[1.5, 2.0, 3.0] {
        let p = profile(b);
        for l in 1..=256usize {
            worst = worst.max(p.partition_residual(l as f64).unwrap());
        }
    }
    gate_runtime("01", started, 1.0);
    println!("criterion 01 partition_of_unity: max residual {worst:.3e} (gate 1e-8)");
    assert!(worst < 1e-8);
}

#[test]
fn criterion_02_quadrature_exactness() {
    let started = std::time::Instant::now();
    // Gram matrix of all Y_lm with l <= 16 on the degree-32 grid
    let grid = CubatureGrid::build(32).unwrap();
    let l_max = 16usize;
    let dim = triangular_index(l_max, l_max) + 1;
    // rows: basis functions (m >= 0); conjugate pairs follow by symmetry
    let values: Vec<Vec<Complex64>> = (0..=l_max)
        .flat_map(|l| (0..=l).map(move |m| (l, m)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(l, m)| {
            grid.points()
                .iter()
                .map(|p| needlets::harmonics::ylm(l, m as i64, p).unwrap())
                .collect()
        })
        .collect();
    let mut worst = 0.0f64;
    for a in 0..dim {
        for b in 0..=a {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, &w) in grid.weights().iter().enumerate() {
                acc += w * values[a][k] * values[b][k].conj();
            }
            let expect = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((acc - expect).norm());
        }
    }
    gate_runtime("02", started, 10.0);
    println!("criterion 02 quadrature_exactness: max Gram deviation {worst:.3e} (gate 1e-9)");
    assert!(worst < 1e-9);
}

#[test]
fn criterion_03_reproducing_and_factorization() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SUITE_SEED);
    let grid = CubatureGrid::build(20).unwrap();
    let uv = grid.unit_vectors();
    let mut worst_repro = 0.0f64;
    for _ in 0..20 {
        let x = random_unit(&mut rng);
        let y = random_unit(&mut rng);
        for l in 0..=10usize {
            for l2 in 0..=10usize {
                let mut acc = 0.0;
                for (k, &w) in grid.weights().iter().enumerate() {
                    let tx = dot(x, uv[k]).clamp(-1.0, 1.0);
                    let ty = dot(uv[k], y).clamp(-1.0, 1.0);
                    acc += w * legendre_kernel(l, tx).unwrap() * legendre_kernel(l2, ty).unwrap();
                }
                let expect = if l == l2 {
                    legendre_kernel(l, dot(x, y).clamp(-1.0, 1.0)).unwrap()
                } else {
                    0.0
                };
                worst_repro = worst_repro.max((acc - expect).abs());
            }
        }
    }

    // kernel factorization at scale 2
    let p = profile(2.0);
    let sgrid = CubatureGrid::for_scale(2, 2.0).unwrap();
    let l_sup = p.max_support_degree(2);
    let w = p.window_weights(2, l_sup).unwrap();
    let two_l: Vec<f64> = (0..=l_sup)
        .map(|l| (2.0 * l as f64 + 1.0) / (4.0 * std::f64::consts::PI))
        .collect();
    let b2: Vec<f64> = (0..=l_sup).map(|l| w[l] * w[l] * two_l[l]).collect();
    let b1: Vec<f64> = (0..=l_sup).map(|l| w[l] * two_l[l]).collect();
    let mut worst_fact = 0.0f64;
    for _ in 0..20 {
        let x = random_unit(&mut rng);
        let y = random_unit(&mut rng);
        let lhs = weighted_legendre_sum(&b2, dot(x, y).clamp(-1.0, 1.0));
        let mut acc = 0.0;
        for (k, &lam) in sgrid.weights().iter().enumerate() {
            let z = sgrid.unit_vectors()[k];
            acc += lam
                * weighted_legendre_sum(&b1, dot(x, z).clamp(-1.0, 1.0))
                * weighted_legendre_sum(&b1, dot(z, y).clamp(-1.0, 1.0));
        }
        worst_fact = worst_fact.max((lhs - acc).abs());
    }
    println!(
        "criterion 03 reproducing_and_factorization: reproducing {worst_repro:.3e}, factorization {worst_fact:.3e} (gate 1e-8)"
    );
    gate_runtime("03", started, 10.0);
    assert!(worst_repro < 1e-8);
    assert!(worst_fact < 1e-8);
}

#[test]
fn criterion_04_transform_consistency() {
    let started = std::time::Instant::now();
    // harmonic-route coefficients equal the cubature inner product with the
    // needlet, for 50 random band-limited fields across scales up to 5;
    // each field is band-limited to its scale's window top so the product
    // with the needlet stays within the grid's exactness degree
    let p = profile(2.0);
    let mut worst = 0.0f64;
    for j in 2..=5u32 {
        let spectrum = PowerSpectrum::power_law(3.0, 1.0, p.max_support_degree(j)).unwrap();
        let grid = Arc::new(CubatureGrid::for_scale(j, 2.0).unwrap());
        let n = grid.point_count();
        let probes: Vec<usize> = (0..5).map(|i| i * n / 5 + n / 11).collect();
        let errs: Vec<f64> = (0..50u64)
            .into_par_iter()
            .map(|f| {
                let alm = sample_alm(&spectrum, replicate_seed(SUITE_SEED ^ 0x04, f));
                let nc = needlet_coeffs(&alm, &p, j, &grid).unwrap();
                let field = synthesize_on_grid(&alm, &grid).unwrap();
                let scale = nc.beta().iter().fold(0.0f64, |a, b| a.max(b.abs()));
                let mut worst_local = 0.0f64;
                for &k in &probes {
                    let mut acc = needlets::accum::CompensatedSum::new();
                    for (idx, pt) in grid.points().iter().enumerate() {
                        acc.add(
                            grid.weights()[idx]
                                * field[idx]
                                * psi_eval(&p, j, &grid, k, pt).unwrap(),
                        );
                    }
                    worst_local = worst_local.max((acc.value() - nc.beta()[k]).abs() / scale);
                }
                worst_local
            })
            .collect();
        worst = worst.max(errs.into_iter().fold(0.0, f64::max));
    }
    gate_runtime("04", started, 30.0);
    println!("criterion 04 transform_consistency: max relative deviation {worst:.3e} (gate 1e-8)");
    assert!(worst < 1e-8);
}

#[test]
fn criterion_05_coefficient_variance() {
    let started = std::time::Instant::now();
    let p = profile(2.0);
    let mut worst_z = 0.0f64;
    for j in [3u32, 4] {
        let grid = Arc::new(CubatureGrid::for_scale(j, 2.0).unwrap());
        let l_sup = p.max_support_degree(j);
        let spectrum = PowerSpectrum::power_law(3.0, 1.0, l_sup).unwrap();
        let sigma2 = needlets::coeff_variance(&spectrum, &p, j, &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(SUITE_SEED ^ 0x05 ^ j as u64);
        let points: Vec<usize> = (0..20)
            .map(|_| rng.random_range(0..grid.point_count()))
            .collect();
        let draws: Vec<Vec<f64>> = (0..2000u64)
            .into_par_iter()
            .map(|r| {
                let alm = sample_alm(&spectrum, replicate_seed(SUITE_SEED ^ 0x05, r));
                let nc = needlet_coeffs(&alm, &p, j, &grid).unwrap();
                points
                    .iter()
                    .map(|&k| nc.beta()[k] * nc.beta()[k])
                    .collect()
            })
            .collect();
        for (i, &k) in points.iter().enumerate() {
            let sq: Vec<f64> = draws.iter().map(|d| d[i]).collect();
            let (mc, se) = mean_and_se(&sq);
            let z = (mc - sigma2[k]).abs() / se;
            worst_z = worst_z.max(z);
            assert!(
                z < 3.0,
                "j={j} point {k}: MC {mc} vs model {} ({z:.2} SE)",
                sigma2[k]
            );
        }
    }
    gate_runtime("05", started, 180.0);
    println!("criterion 05 coefficient_variance: worst |z| {worst_z:.2} over 40 point checks (gate 3 SE)");
}

#[test]
fn criterion_06_decay_constant_uniformity() {
    let started = std::time::Instant::now();
    let p = profile(2.0);
    let mut constants = Vec::new();
    for j in 3..=6u32 {
        let grid = CubatureGrid::for_scale(j, 2.0).unwrap();
        let spectrum = PowerSpectrum::power_law(3.0, 1.0, p.max_support_degree(j)).unwrap();
        let table = decay_diagnostic(&spectrum, &p, j, 3, &grid, PAIR_CAP).unwrap();
        constants.push((j, decay_constant(&table)));
    }
    let hi = constants.iter().map(|c| c.1).fold(f64::MIN, f64::max);
    let lo = constants.iter().map(|c| c.1).fold(f64::MAX, f64::min);
    gate_runtime("06", started, 120.0);
    println!(
        "criterion 06 decay_constant_uniformity: constants {:?}, spread {:.2}x (gate < 2x)",
        constants
            .iter()
            .map(|(j, c)| format!("j{j}={c:.2}"))
            .collect::<Vec<_>>(),
        hi / lo
    );
    assert!(
        hi / lo < 2.0,
        "empirical decay constants vary {:.2}x across scales: {constants:?}",
        hi / lo
    );
}

#[test]
fn criterion_07_cross_scale_decorrelation() {
    let started = std::time::Instant::now();
    let p = profile(2.0);
    let spectrum = PowerSpectrum::power_law(3.0, 1.0, 63).unwrap();
    let g3 = Arc::new(CubatureGrid::for_scale(3, 2.0).unwrap());
    let g5 = Arc::new(CubatureGrid::for_scale(5, 2.0).unwrap());
    // formula level: exactly zero for every probed pair
    for (k1, k2) in [(0usize, 0usize), (100, 7), (42, 4000)] {
        let v = cross_scale_covariance(&spectrum, &p, 3, &g3, k1, 5, &g5, k2).unwrap();
        assert_eq!(v, 0.0);
    }
    let est =
        mc_cross_scale_correlation(&spectrum, &p, 3, &g3, 5, &g5, 100, SUITE_SEED ^ 0x07).unwrap();
    println!(
        "criterion 07 cross_scale_decorrelation: formula 0 exactly, MC correlation {:+.5} (gate |corr| < 0.01)",
        est.correlation
    );
    assert!(est.correlation.abs() < 0.01);
    gate_runtime("07", started, 180.0);
}

#[test]
fn criterion_08_omega_closed_forms() {
    let started = std::time::Instant::now();
    let j = 3u32;
    let p = profile(2.0);
    let grid = Arc::new(CubatureGrid::for_scale(j, 2.0).unwrap());
    let spectrum = PowerSpectrum::power_law(3.0, 1.0, p.max_support_degree(j)).unwrap();
    let weights = HermiteWeights::gof_presets();
    let sums = gamma_power_sums(&spectrum, &p, j, &grid, 4, PAIR_CAP).unwrap();
    let omega = omega_from_power_sums(&sums, &weights).unwrap();
    assert_eq!(omega[(0, 1)], 0.0);
    assert_eq!(omega[(1, 2)], 0.0);
    // closed-form cross term
    let n = grid.point_count() as f64;
    assert!((omega[(0, 2)] - 12.0 * sums.sums[1] / n).abs() < 1e-12 * omega[(0, 2)].abs());
    let report =
        mc_moment_oracle(&spectrum, &p, j, &grid, &weights, 2000, SUITE_SEED ^ 0x08).unwrap();
    let mut worst_z = 0.0f64;
    for u in 0..3 {
        for v in 0..=u {
            let z =
                (report.covariance[(u, v)] - omega[(u, v)]).abs() / report.covariance_ses[(u, v)];
            worst_z = worst_z.max(z);
            assert!(
                z < 3.0,
                "omega[{u},{v}]: MC {} vs model {} ({z:.2} SE)",
                report.covariance[(u, v)],
                omega[(u, v)]
            );
        }
    }
    gate_runtime("08", started, 300.0);
    println!(
        "criterion 08 omega_closed_forms: worst |z| {worst_z:.2} over 6 entries; omega12 = omega23 = 0 exact (gate 3 SE)"
    );
}

#[test]
fn criterion_09_clt_desk_scale() {
    let started = std::time::Instant::now();
    let j = 4u32;
    let p = profile(2.0);
    let grid = Arc::new(CubatureGrid::for_scale(j, 2.0).unwrap());
    let spectrum = PowerSpectrum::power_law(3.0, 1.0, p.max_support_degree(j)).unwrap();
    let weights = HermiteWeights::gof_presets();
    let sums = gamma_power_sums(&spectrum, &p, j, &grid, 4, PAIR_CAP).unwrap();
    let omega = omega_from_power_sums(&sums, &weights).unwrap();
    let report =
        mc_moment_oracle(&spectrum, &p, j, &grid, &weights, 2000, SUITE_SEED ^ 0x09).unwrap();
    let std_h1: Vec<f64> = report
        .samples
        .iter()
        .map(|h| h[0] / omega[(0, 0)].sqrt())
        .collect();
    let m = moments(&std_h1);
    let (_, ks_p) = kolmogorov_normal_test(&std_h1);
    gate_runtime("09", started, 300.0);
    println!(
        "criterion 09 clt_desk_scale: skewness {:+.3} (gate 0.15), excess kurtosis {:+.3} (gate 0.3), KS p {:.4} (gate > 0.01)",
        m.skewness, m.excess_kurtosis, ks_p
    );
    assert!(
        m.skewness.abs() < 0.15,
        "standardized h1 skewness {:.3} exceeds 0.15",
        m.skewness
    );
    assert!(
        m.excess_kurtosis.abs() < 0.3,
        "standardized h1 excess kurtosis {:.3} exceeds 0.3",
        m.excess_kurtosis
    );
    assert!(
        ks_p > 0.01,
        "normality KS p-value {ks_p:.4} at or below 0.01"
    );
}

#[test]
fn criterion_10_functional_clt_and_ks() {
    let started = std::time::Instant::now();
    // (a) reflection-series p-value against a discretized Brownian oracle
    let t = 2.2414f64;
    let series_p = sup_brownian_p_value(t);
    let paths = 100_000u64;
    let steps = 8192usize;
    let hits: u64 = (0..paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(SUITE_SEED ^ 0x0a);
            rng.set_stream(i);
            let mut s = 0.0f64;
            let mut hit = 0u64;
            let scale = 1.0 / (steps as f64).sqrt();
            for _ in 0..steps {
                s += rng.sample::<f64, _>(StandardNormal);
                if (s * scale).abs() > t {
                    hit = 1;
                    break;
                }
            }
            hit
        })
        .sum();
    let mc_p = hits as f64 / paths as f64;
    assert!(
        (series_p - 0.05).abs() < 2e-3,
        "series p({t}) = {series_p} not within 0.002 of 0.05"
    );
    assert!(
        (series_p - mc_p).abs() < 2e-3,
        "series {series_p} vs Brownian MC {mc_p}"
    );

    // (b) null rejection rate of the gof command at level 0.05
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg");
    fs::write(
        &cfg,
        format!(
            "b = 2.0\nl_max = 128\nscales = 2,4,6\nreplicates = 200\nlevel = 0.05\nseed = {SUITE_SEED}\n"
        ),
    )
    .unwrap();
    let out_dir = tmp.path().join("out");
    let out = Command::new(env!("CARGO_BIN_EXE_needlets"))
        .args(["gof", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = fs::read_to_string(out_dir.join("gof_report.txt")).unwrap();
    let rate: f64 = report
        .lines()
        .find_map(|l| l.strip_prefix("rate = "))
        .expect("rate line in gof report")
        .trim()
        .parse()
        .unwrap();
    println!(
        "criterion 10 functional_clt_and_ks: series p {series_p:.5} vs MC {mc_p:.5} (gate 0.002); cmd_gof null size {rate:.4} over 200 campaigns (gate [0.02, 0.09])"
    );
    assert!(
        (0.02..=0.09).contains(&rate),
        "null rejection rate {rate} outside [0.02, 0.09]"
    );
    gate_runtime("10", started, 900.0);
}

#[test]
fn criterion_11_mask_robustness() {
    let started = std::time::Instant::now();
    let j = 5u32;
    let p = profile(2.0);
    let grid = Arc::new(CubatureGrid::for_scale(j, 2.0).unwrap());
    let l_sup = p.max_support_degree(j);
    let spectrum = PowerSpectrum::power_law(3.0, 1.0, l_sup).unwrap();

    // empty mask: discrepancy at rounding level
    let empty = SkyMask::empty().rasterize(&grid);
    let map = discrepancy(&spectrum, &p, j, &grid, &empty, 60, SUITE_SEED ^ 0x11).unwrap();
    let max_empty = map.d.iter().cloned().fold(0.0f64, f64::max);
    assert!(max_empty < 1e-6, "empty mask max D {max_empty}");

    // full mask: D = 1 within 3 SE (chi-square floor on the SE)
    let full = SkyMask::full().rasterize(&grid);
    let reps = 300usize;
    let map = discrepancy(&spectrum, &p, j, &grid, &full, reps, SUITE_SEED ^ 0x12).unwrap();
    let floor = (2.0 / reps as f64).sqrt();
    let mut worst_full = 0.0f64;
    for k in (0..map.d.len()).step_by(419) {
        let se = map.se[k].max(floor);
        let z = (map.d[k] - 1.0).abs() / se;
        worst_full = worst_full.max(z);
        assert!(z < 3.0, "full mask D[{k}] = {} ({z:.2} SE)", map.d[k]);
    }

    // band mask: monotone binned means, flagged points near the mask
    let mut band = SkyMask::empty();
    band.add_band(
        std::f64::consts::FRAC_PI_2 - 0.2,
        std::f64::consts::FRAC_PI_2 + 0.2,
    )
    .unwrap();
    let raster = band.rasterize(&grid);
    let map = discrepancy(&spectrum, &p, j, &grid, &raster, 200, SUITE_SEED ^ 0x13).unwrap();
    let bins = binned_by_clearance(&map, 8);
    let mut inversions = 0usize;
    for w in bins.windows(2) {
        if w[1].mean_d > w[0].mean_d + w[0].se.max(w[1].se) {
            inversions += 1;
        }
    }
    assert!(
        inversions <= 1,
        "binned mean D has {inversions} significant inversions: {:?}",
        bins.iter().map(|b| b.mean_d).collect::<Vec<_>>()
    );
    // flagged points concentrate within two needlet widths (pi / B^j) of
    // the mask set
    let two_widths = 2.0 * std::f64::consts::PI / 2.0f64.powi(j as i32);
    let flagged: Vec<usize> = (0..map.d.len()).filter(|&k| map.flagged[k]).collect();
    let near = flagged
        .iter()
        .filter(|&&k| map.clearance[k] <= two_widths)
        .count();
    let concentration = near as f64 / flagged.len() as f64;
    println!(
        "criterion 11 mask_robustness: empty max D {max_empty:.2e} (gate 1e-6); full-mask worst |z| {worst_full:.2}; band bins {:?} with {inversions} inversion(s) (gate <= 1); {:.1}% of {} flagged points within 2 needlet widths (gate >= 90%)",
        bins.iter().map(|b| format!("{:.3}", b.mean_d)).collect::<Vec<_>>(),
        100.0 * concentration,
        flagged.len()
    );
    assert!(
        concentration >= 0.9,
        "only {:.1}% of flagged points within 2 needlet widths",
        100.0 * concentration
    );
    gate_runtime("11", started, 600.0);
}

#[test]
fn criterion_12_determinism_across_workers() {
    let render = || -> String {
        let p = profile(2.0);
        let grid = Arc::new(CubatureGrid::for_scale(3, 2.0).unwrap());
        let spectrum = PowerSpectrum::power_law(3.0, 1.0, 128).unwrap();
        let narrow = PowerSpectrum::power_law(3.0, 1.0, p.max_support_degree(3)).unwrap();
        let weights = HermiteWeights::gof_presets();
        let mut out = String::new();
        // moment oracle
        let report =
            mc_moment_oracle(&narrow, &p, 3, &grid, &weights, 200, SUITE_SEED ^ 0x21).unwrap();
        for s in &report.samples {
            for v in s.iter() {
                out.push_str(&format!("{v:.17e} "));
            }
        }
        // mask discrepancy
        let mut band = SkyMask::empty();
        band.add_band(1.4, 1.8).unwrap();
        let raster = band.rasterize(&grid);
        let map = discrepancy(&narrow, &p, 3, &grid, &raster, 60, SUITE_SEED ^ 0x22).unwrap();
        for v in &map.d {
            out.push_str(&format!("{v:.17e} "));
        }
        // gof campaigns
        let machine =
            GofMachine::prepare(Arc::new(profile(2.0)), spectrum, weights, &[2, 4], 0.05).unwrap();
        let size = machine.size_calibration(50, SUITE_SEED ^ 0x23).unwrap();
        for (seed, stat, pv, reject) in &size.rows {
            out.push_str(&format!("{seed} {stat:.17e} {pv:.17e} {reject} "));
        }
        out
    };
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(render);
    let eight = rayon::ThreadPoolBuilder::new()
        .num_threads(8)
        .build()
        .unwrap()
        .install(render);
    assert_eq!(single.len(), eight.len());
    let identical = single == eight;
    println!(
        "criterion 12 determinism_across_workers: {} bytes compared, identical: {identical}",
        single.len()
    );
    assert!(identical);
}

// ---- helpers ----

fn random_unit(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let n2: f64 = v.iter().map(|x| x * x).sum();
        if n2 > 1e-4 && n2 <= 1.0 {
            let n = n2.sqrt();
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// The CLI-level reproducibility contract behind criterion 12: identical
/// configuration and seed give byte-identical outputs (manifest excluded).
#[test]
fn criterion_12b_cli_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg");
    fs::write(
        &cfg,
        "b = 2.0\nl_max = 64\nscales = 3,5\nreplicates = 100\nseed = 20090101\n",
    )
    .unwrap();
    let run = |name: &str, workers: &str| -> Vec<(String, Vec<u8>)> {
        let out_dir = tmp.path().join(name);
        let out = Command::new(env!("CARGO_BIN_EXE_needlets"))
            .args(["corr", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .args(["--workers", workers])
            .output()
            .unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        collect_outputs(&out_dir)
    };
    let a = run("w1", "1");
    let b = run("w8", "8");
    println!(
        "criterion 12b cli_reproducibility: {} files byte-identical across 1 and 8 workers",
        a.len()
    );
    assert_eq!(a, b);
}

fn collect_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "manifest.txt")
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

/// Transform-route dual check used by criterion 04's setup: the windowed
/// synthesis route must agree with direct evaluation from the definition for
/// a couple of coefficients. Kept cheap; the full identity is criterion 04.
#[test]
fn transform_definition_spot_check() {
    let p = profile(2.0);
    let grid = Arc::new(CubatureGrid::for_scale(2, 2.0).unwrap());
    let spectrum = PowerSpectrum::power_law(3.0, 1.0, p.max_support_degree(2)).unwrap();
    let alm = sample_alm(&spectrum, SUITE_SEED);
    let nc = needlet_coeffs(&alm, &p, 2, &grid).unwrap();
    let l_sup = p.max_support_degree(2);
    let w = p.window_weights(2, l_sup).unwrap();
    for &k in &[0usize, 77] {
        let xi = grid.points()[k];
        let mut total = Complex64::new(0.0, 0.0);
        for l in 0..=l_sup {
            let mut t_l = Complex64::new(0.0, 0.0);
            for m in -(l as i64)..=(l as i64) {
                t_l += alm.get(l, m) * needlets::harmonics::ylm(l, m, &xi).unwrap();
            }
            total += w[l] * t_l;
        }
        let expect = grid.weights()[k].sqrt() * total.re;
        assert!(total.im.abs() < 1e-10);
        assert!(
            (nc.beta()[k] - expect).abs() < 1e-10 * expect.abs().max(1e-6),
            "beta[{k}] {} vs definition {expect}",
            nc.beta()[k]
        );
    }
}

/// The row-sum localization diagnostic stays exposed and bounded away from
/// degeneracy at equatorial rows; the polar maxima are covered by the unit
/// tests with frozen values.
#[test]
fn kernel_row_sum_exposure() {
    let grid = CubatureGrid::for_scale(4, 2.0).unwrap();
    let s = grid
        .kernel_row_sum(grid.point_count() / 2, 3, 2.0, 4)
        .unwrap();
    assert!((1.0..10.0).contains(&s), "equatorial row sum {s}");
}

/// Extended, non-default run at B = 1.5, scale 11 (window degrees 58..129):
/// the full masked experiment at the finest feasible resolution. Ignored by
/// default; run with `cargo test -- --ignored extended`.
#[test]
#[ignore]
fn extended_fine_scale_mask_experiment() {
    let p = Arc::new(FilterProfile::with_default_resolution(1.5).unwrap());
    assert_eq!(p.support_degrees(11), 58..=129);
    let grid = Arc::new(CubatureGrid::for_scale(11, 1.5).unwrap());
    let spectrum = PowerSpectrum::power_law(3.0, 1.0, p.max_support_degree(11)).unwrap();
    let mut mask = SkyMask::empty();
    mask.add_band(
        std::f64::consts::FRAC_PI_2 - 0.35,
        std::f64::consts::FRAC_PI_2 + 0.35,
    )
    .unwrap();
    let raster = mask.rasterize(&grid);
    let map = discrepancy(&spectrum, &p, 11, &grid, &raster, 100, SUITE_SEED ^ 0x41).unwrap();
    let flagged_fraction = map.flagged_count() as f64 / grid.point_count() as f64;
    println!(
        "extended B=1.5 j=11: {} points, masked fraction {:.3}, flagged fraction {:.3}",
        grid.point_count(),
        map.mask_fraction,
        flagged_fraction
    );
    // flagged directions cluster around the mask; beyond it the map is quiet
    let far_flagged = (0..map.d.len())
        .filter(|&k| map.flagged[k] && map.clearance[k] > 0.3)
        .count();
    assert!(
        far_flagged == 0,
        "{far_flagged} flagged points far from the mask"
    );
}

#[test]
fn wj_path_component_distribution() {
    // the path endpoint over the even ladder is close to standard normal
    let p = Arc::new(profile(2.0));
    let spectrum = PowerSpectrum::power_law(3.0, 1.0, 31).unwrap();
    let machine = GofMachine::prepare(
        Arc::clone(&p),
        spectrum,
        HermiteWeights::gof_presets(),
        &[2, 4],
        0.05,
    )
    .unwrap();
    let endpoints: Vec<f64> = (0..2000u64)
        .into_par_iter()
        .map(|r| {
            let c = machine
                .campaign(replicate_seed(SUITE_SEED ^ 0x31, r))
                .unwrap();
            c.path.points().last().unwrap()[0]
        })
        .collect();
    let (_, pv) = kolmogorov_normal_test(&endpoints);
    assert!(pv > 0.01, "W(1) normality KS p {pv}");
}
