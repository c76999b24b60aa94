//! The six subcommands. Each writes a manifest plus its report files into
//! the output directory; rerunning with the same configuration reproduces
//! every output byte-for-byte (wall time lives only in the manifest).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use needlets::mask::{binned_by_clearance, calibrate_prop8_constant, prop8_bound};
use needlets::needlet::{
    cross_scale_covariance, decay_constant, decay_diagnostic, mc_cross_scale_correlation,
    needlet_coeffs, write_decay_table,
};
use needlets::stats::{GofMachine, HermiteWeights};
use needlets::{sample_alm, synthesize_on_grid, CubatureGrid, Error, FilterProfile, Result};

use crate::config::CampaignConfig;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_manifest(out: &Path, command: &str, cfg: &CampaignConfig, started: Instant) -> Result<()> {
    let mut w = create(&out.join("manifest.txt"))?;
    writeln!(w, "# needlets-manifest v1")?;
    writeln!(w, "command = {command}")?;
    writeln!(w, "version = {}", env!("CARGO_PKG_VERSION"))?;
    for (k, v) in cfg.echo() {
        writeln!(w, "{k} = {v}")?;
    }
    writeln!(w, "wall_time_s = {:.3}", started.elapsed().as_secs_f64())?;
    Ok(())
}

fn build_profile(cfg: &CampaignConfig) -> Result<FilterProfile> {
    FilterProfile::build(cfg.bandwidth, cfg.resolution)
}

pub fn cmd_filter(cfg: &CampaignConfig, out: &Path) -> Result<()> {
    let started = Instant::now();
    let profile = build_profile(cfg)?;
    profile.write_to(create(&out.join("profile.txt"))?)?;

    for &j in &cfg.scales {
        let weights = profile.window_weights(j, cfg.l_max)?;
        let mut w = create(&out.join(format!("weights_j{j}.txt")))?;
        writeln!(w, "# window-weights v1")?;
        writeln!(w, "# bandwidth {} scale {j}", cfg.bandwidth)?;
        writeln!(w, "# columns: l b")?;
        for (l, b) in weights.iter().enumerate() {
            writeln!(w, "{l} {b:.16e}")?;
        }
    }

    let mut max_residual = 0.0f64;
    for l in 1..=cfg.l_max {
        max_residual = max_residual.max(profile.partition_residual(l as f64)?);
    }
    println!(
        "partition-of-unity max deviation over l = 1..={}: {max_residual:.3e}",
        cfg.l_max
    );
    if max_residual >= 1e-8 {
        return Err(Error::Inconsistent(format!(
            "partition of unity violated: max deviation {max_residual:.3e}"
        )));
    }
    write_manifest(out, "filter", cfg, started)
}

pub fn cmd_simulate(cfg: &CampaignConfig, out: &Path) -> Result<()> {
    let started = Instant::now();
    let spectrum = cfg.load_spectrum()?;
    let grid = CubatureGrid::build(2 * cfg.l_max)?;
    let alm = sample_alm(&spectrum, cfg.seed);
    let field = synthesize_on_grid(&alm, &grid)?;

    spectrum.write_to(create(&out.join("spectrum.txt"))?)?;
    grid.write_to(create(&out.join("grid.txt"))?)?;
    alm.write_to(create(&out.join("alm.txt"))?)?;
    let mut w = create(&out.join("field.txt"))?;
    writeln!(w, "# field-samples v1")?;
    writeln!(w, "# columns: theta phi value")?;
    for (p, v) in grid.points().iter().zip(&field) {
        writeln!(w, "{:.16e} {:.16e} {:.16e}", p.theta(), p.phi(), v)?;
    }
    println!(
        "simulated field: l_max {} on {} points, seed {}",
        spectrum.l_max(),
        grid.point_count(),
        cfg.seed
    );
    write_manifest(out, "simulate", cfg, started)
}

pub fn cmd_transform(cfg: &CampaignConfig, out: &Path) -> Result<()> {
    let started = Instant::now();
    let spectrum = cfg.load_spectrum()?;
    let profile = build_profile(cfg)?;
    let alm = sample_alm(&spectrum, cfg.seed);
    for &j in &cfg.scales {
        let grid = Arc::new(CubatureGrid::for_scale(j, cfg.bandwidth)?);
        let coeffs = needlet_coeffs(&alm, &profile, j, &grid)?.normalize(&spectrum, &profile)?;
        coeffs.write_to(create(&out.join(format!("coeffs_j{j}.txt")))?)?;
        println!(
            "scale {j}: {} coefficients on a degree-{} grid",
            grid.point_count(),
            grid.degree()
        );
    }
    write_manifest(out, "transform", cfg, started)
}

pub fn cmd_corr(cfg: &CampaignConfig, out: &Path) -> Result<()> {
    let started = Instant::now();
    let spectrum = cfg.load_spectrum()?;
    let profile = build_profile(cfg)?;

    let mut grids = Vec::new();
    for &j in &cfg.scales {
        let grid = Arc::new(CubatureGrid::for_scale(j, cfg.bandwidth)?);
        let table = decay_diagnostic(
            &spectrum,
            &profile,
            j,
            cfg.decay_exponent,
            &grid,
            cfg.pair_cap,
        )?;
        write_decay_table(&table, create(&out.join(format!("decay_j{j}.txt")))?)?;
        println!(
            "scale {j}: decay constant (M = {}) {:.4}",
            cfg.decay_exponent,
            decay_constant(&table)
        );
        grids.push(grid);
    }

    let mut w = create(&out.join("cross_scale.txt"))?;
    writeln!(w, "# cross-scale-correlation v1")?;
    writeln!(w, "# columns: j j2 formula_cov mc_corr mc_se replicates")?;
    for (a, &j1) in cfg.scales.iter().enumerate() {
        for (b, &j2) in cfg.scales.iter().enumerate().skip(a + 1) {
            if j1.abs_diff(j2) < 2 {
                continue;
            }
            let formula =
                cross_scale_covariance(&spectrum, &profile, j1, &grids[a], 0, j2, &grids[b], 0)?;
            let est = mc_cross_scale_correlation(
                &spectrum,
                &profile,
                j1,
                &grids[a],
                j2,
                &grids[b],
                cfg.replicates,
                cfg.seed,
            )?;
            writeln!(
                w,
                "{j1} {j2} {formula:.16e} {:.16e} {:.16e} {}",
                est.correlation, est.se, est.replicates
            )?;
            println!(
                "scales ({j1}, {j2}): formula covariance {formula:.1e}, MC correlation {:+.5} +- {:.5}",
                est.correlation, est.se
            );
        }
    }
    write_manifest(out, "corr", cfg, started)
}

pub fn cmd_gof(cfg: &CampaignConfig, out: &Path) -> Result<()> {
    let started = Instant::now();
    let spectrum = cfg.load_spectrum()?;
    let profile = Arc::new(build_profile(cfg)?);
    let weights = HermiteWeights::gof_presets();
    let machine = GofMachine::prepare(
        Arc::clone(&profile),
        spectrum,
        weights,
        &cfg.scales,
        cfg.level,
    )?;

    let primary = machine.campaign(cfg.seed)?;
    println!(
        "statistic {:.4}  threshold {:.4}  p-value {:.4}  decision {}",
        primary.statistic,
        machine.threshold(),
        primary.p_value,
        if primary.reject { "reject" } else { "accept" }
    );

    let mut w = create(&out.join("gof_report.txt"))?;
    writeln!(w, "# gof-report v1")?;
    writeln!(w, "level = {}", machine.level())?;
    writeln!(w, "threshold = {:.16e}", machine.threshold())?;
    writeln!(
        w,
        "scales = {}",
        cfg.scales
            .iter()
            .map(|j| j.to_string())
            .collect::<Vec<_>>()
            .join(",")
    )?;
    writeln!(w, "statistic = {:.16e}", primary.statistic)?;
    writeln!(w, "p_value = {:.16e}", primary.p_value)?;
    writeln!(
        w,
        "decision = {}",
        if primary.reject { "reject" } else { "accept" }
    )?;
    for (idx, &j) in cfg.scales.iter().enumerate() {
        writeln!(w, "[scale {j}]")?;
        writeln!(w, "points = {}", machine.grid(idx).point_count())?;
        let omega = machine.omega(idx);
        for u in 0..omega.nrows() {
            let row: Vec<String> = (0..omega.ncols())
                .map(|v| format!("{:.16e}", omega[(u, v)]))
                .collect();
            writeln!(w, "omega_row_{u} = {}", row.join(" "))?;
        }
        let h: Vec<String> = primary.h_raw[idx]
            .iter()
            .map(|x| format!("{x:.16e}"))
            .collect();
        writeln!(w, "h = {}", h.join(" "))?;
    }

    if cfg.replicates > 1 {
        let size = machine.size_calibration(cfg.replicates, cfg.seed)?;
        writeln!(w, "[size calibration]")?;
        writeln!(w, "campaigns = {}", size.campaigns)?;
        writeln!(w, "rejections = {}", size.rejections)?;
        writeln!(w, "rate = {:.6}", size.rate())?;
        println!(
            "size calibration: {} rejections / {} campaigns (rate {:.4} at level {})",
            size.rejections,
            size.campaigns,
            size.rate(),
            machine.level()
        );
        let mut t = create(&out.join("gof_campaigns.txt"))?;
        writeln!(t, "# gof-campaigns v1")?;
        writeln!(t, "# columns: seed statistic p_value reject")?;
        for (seed, stat, p, reject) in &size.rows {
            writeln!(t, "{seed} {stat:.16e} {p:.16e} {}", u8::from(*reject))?;
        }
    }
    write_manifest(out, "gof", cfg, started)
}

pub fn cmd_mask(cfg: &CampaignConfig, out: &Path) -> Result<()> {
    let started = Instant::now();
    cfg.check_scale_support(cfg.scale)?;
    let spectrum = cfg.load_spectrum()?;
    let profile = build_profile(cfg)?;
    let mask = cfg.load_mask()?;
    let j = cfg.scale;
    let grid = Arc::new(CubatureGrid::for_scale(j, cfg.bandwidth)?);
    let raster = mask.rasterize(&grid);
    let map = needlets::discrepancy(
        &spectrum,
        &profile,
        j,
        &grid,
        &raster,
        cfg.replicates,
        cfg.seed,
    )?;
    map.write_to(&grid, create(&out.join(format!("dmap_j{j}.txt")))?)?;

    let mut w = create(&out.join("mask_summary.txt"))?;
    writeln!(w, "# mask-summary v1")?;
    writeln!(w, "scale = {j}")?;
    writeln!(w, "replicates = {}", map.replicates)?;
    writeln!(w, "masked_fraction = {:.16e}", map.mask_fraction)?;
    writeln!(w, "flagged = {}", map.flagged_count())?;
    writeln!(w, "points = {}", grid.point_count())?;
    let v_star = spectrum.field_variance();
    writeln!(w, "v_star_model = {v_star:.16e}")?;
    if !mask.is_empty() && raster.masked_count() > 0 {
        let l2: Vec<f64> = map
            .d
            .iter()
            .zip(needlets::coeff_variance(&spectrum, &profile, j, &grid)?)
            .map(|(d, s2)| (d.max(0.0) * s2).sqrt())
            .collect();
        let c_m = calibrate_prop8_constant(
            &l2,
            &map.clearance,
            v_star,
            cfg.bandwidth,
            j,
            cfg.decay_exponent,
            1e-6,
        )?;
        writeln!(w, "calibrated_c_m = {c_m:.16e}")?;
        writeln!(
            w,
            "bound_at_eps_0.5 = {:.16e}",
            prop8_bound(c_m, v_star, cfg.bandwidth, j, 0.5, cfg.decay_exponent)?
        )?;
        writeln!(w, "[clearance bins]")?;
        writeln!(w, "# columns: lo hi count mean_d se")?;
        for bin in binned_by_clearance(&map, 8) {
            writeln!(
                w,
                "{:.6e} {:.6e} {} {:.6e} {:.6e}",
                bin.lo, bin.hi, bin.count, bin.mean_d, bin.se
            )?;
        }
    }
    println!(
        "mask: fraction {:.4}, flagged {} of {} points (D > {})",
        map.mask_fraction,
        map.flagged_count(),
        grid.point_count(),
        needlets::mask::FLAG_THRESHOLD
    );
    write_manifest(out, "mask", cfg, started)
}
