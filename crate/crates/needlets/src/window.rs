//! Littlewood–Paley window pair (phi, b) built from an integrated C-infinity
//! bump, plus the per-scale spectral weights b(l / B^j).
//!
//! The profile is fully determined by the bandwidth parameter `B > 1` and a
//! sampled transition table: the bump `f(t) = exp(-1/(1-t^2))` is integrated
//! and normalized into a nondecreasing ramp on [-1, 1], and `phi` joins its
//! plateau at `|xi| <= 1/B` to its zero region at `|xi| >= 1` by evaluating
//! that ramp under a linear reparametrization. The squared window
//! `b^2(xi) = phi(xi/B) - phi(xi)` then sums to one across scales for every
//! `|xi| >= 1`, which is what makes the needlet frame tight.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

/// Default number of samples in the transition table.
pub const DEFAULT_TABLE_RESOLUTION: usize = 4096;

/// Minimum accepted table resolution.
pub const MIN_TABLE_RESOLUTION: usize = 16;

/// Differences `phi(xi/B) - phi(xi)` more negative than this indicate a
/// corrupt table rather than rounding noise.
pub const NEGATIVE_WINDOW_TOLERANCE: f64 = 1e-12;

fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

/// Integrated, normalized bump sampled on a uniform grid over [-1, 1].
///
/// Entry `i` holds `psi(u_i)` with `u_i = -1 + 2 i / (resolution - 1)`; the
/// cumulative integral uses composite Simpson with one midpoint per table
/// interval, so the table is exactly nondecreasing and ends at 1.
pub fn build_bump_table(resolution: usize) -> Result<Vec<f64>> {
    if resolution < MIN_TABLE_RESOLUTION {
        return Err(Error::invalid(format!(
            "bump table resolution {resolution} below minimum {MIN_TABLE_RESOLUTION}"
        )));
    }
    let n = resolution;
    let h = 2.0 / (n - 1) as f64;
    let mut table = Vec::with_capacity(n);
    table.push(0.0);
    let mut cum = 0.0;
    for i in 0..n - 1 {
        let a = -1.0 + h * i as f64;
        let b = a + h;
        let mid = 0.5 * (a + b);
        cum += h / 6.0 * (bump(a) + 4.0 * bump(mid) + bump(b));
        table.push(cum);
    }
    let total = *table.last().expect("nonempty table");
    for v in &mut table {
        *v /= total;
    }
    Ok(table)
}

/// Fritsch–Carlson tangents for a monotone cubic interpolant on a uniform grid.
fn monotone_tangents(table: &[f64], h: f64) -> Vec<f64> {
    let n = table.len();
    let secants: Vec<f64> = (0..n - 1).map(|i| (table[i + 1] - table[i]) / h).collect();
    let mut m = vec![0.0; n];
    m[0] = secants[0];
    m[n - 1] = secants[n - 2];
    for i in 1..n - 1 {
        if secants[i - 1] * secants[i] <= 0.0 {
            m[i] = 0.0;
        } else {
            m[i] = 0.5 * (secants[i - 1] + secants[i]);
        }
    }
    for i in 0..n - 1 {
        if secants[i] == 0.0 {
            m[i] = 0.0;
            m[i + 1] = 0.0;
        } else {
            let alpha = m[i] / secants[i];
            let beta = m[i + 1] / secants[i];
            let s = alpha * alpha + beta * beta;
            if s > 9.0 {
                let tau = 3.0 / s.sqrt();
                m[i] = tau * alpha * secants[i];
                m[i + 1] = tau * beta * secants[i];
            }
        }
    }
    m
}

/// The window pair for one bandwidth parameter.
///
/// Immutable after construction; the per-scale weight cache is internally
/// synchronized, so shared references can be used from any number of threads.
#[derive(Debug)]
pub struct FilterProfile {
    bandwidth: f64,
    resolution: usize,
    table: Vec<f64>,
    tangents: Vec<f64>,
    weight_cache: Mutex<HashMap<(u32, usize), Arc<Vec<f64>>>>,
}

impl Clone for FilterProfile {
    fn clone(&self) -> Self {
        FilterProfile {
            bandwidth: self.bandwidth,
            resolution: self.resolution,
            table: self.table.clone(),
            tangents: self.tangents.clone(),
            weight_cache: Mutex::new(HashMap::new()),
        }
    }
}

impl FilterProfile {
    /// Builds the profile for bandwidth `B > 1` with the given table resolution.
    pub fn build(bandwidth: f64, resolution: usize) -> Result<Self> {
        if !(bandwidth > 1.0) || !bandwidth.is_finite() {
            return Err(Error::invalid(format!(
                "bandwidth must satisfy B > 1, got {bandwidth}"
            )));
        }
        let table = build_bump_table(resolution)?;
        Ok(Self::from_table(bandwidth, table))
    }

    /// Builds the profile with [`DEFAULT_TABLE_RESOLUTION`].
    pub fn with_default_resolution(bandwidth: f64) -> Result<Self> {
        Self::build(bandwidth, DEFAULT_TABLE_RESOLUTION)
    }

    fn from_table(bandwidth: f64, table: Vec<f64>) -> Self {
        let h = 2.0 / (table.len() - 1) as f64;
        let tangents = monotone_tangents(&table, h);
        FilterProfile {
            bandwidth,
            resolution: table.len(),
            table,
            tangents,
            weight_cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// Evaluates the integrated bump `psi` on [-1, 1] by monotone cubic
    /// interpolation of the table.
    pub fn psi(&self, u: f64) -> f64 {
        if u <= -1.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return 1.0;
        }
        let n = self.table.len();
        let h = 2.0 / (n - 1) as f64;
        let pos = (u + 1.0) / h;
        let i = (pos.floor() as usize).min(n - 2);
        let t = pos - i as f64;
        let y0 = self.table[i];
        let y1 = self.table[i + 1];
        let m0 = self.tangents[i] * h;
        let m1 = self.tangents[i + 1] * h;
        let t2 = t * t;
        let t3 = t2 * t;
        y0 * (2.0 * t3 - 3.0 * t2 + 1.0)
            + m0 * (t3 - 2.0 * t2 + t)
            + y1 * (-2.0 * t3 + 3.0 * t2)
            + m1 * (t3 - t2)
    }

    /// The low-pass window: 1 on `|xi| <= 1/B`, 0 on `|xi| >= 1`,
    /// a rescaled `psi` ramp in between.
    pub fn phi(&self, xi: f64) -> f64 {
        let x = xi.abs();
        let inv_b = 1.0 / self.bandwidth;
        if x <= inv_b {
            1.0
        } else if x >= 1.0 {
            0.0
        } else {
            self.psi(1.0 - 2.0 * (x - inv_b) / (1.0 - inv_b))
        }
    }

    /// `b^2(xi) = phi(xi/B) - phi(xi)`, clamped at zero for rounding-level
    /// negatives.
    pub fn b_squared(&self, xi: f64) -> Result<f64> {
        let diff = self.phi(xi / self.bandwidth) - self.phi(xi);
        if diff < -NEGATIVE_WINDOW_TOLERANCE {
            return Err(Error::Inconsistent(format!(
                "window b^2({xi}) = {diff} negative beyond tolerance; transition table corrupt"
            )));
        }
        Ok(diff.max(0.0))
    }

    /// The band-pass window `b(xi)`, supported on `(1/B, B)`.
    pub fn eval_b(&self, xi: f64) -> Result<f64> {
        Ok(self.b_squared(xi)?.sqrt())
    }

    /// Open support `(B^{j-1}, B^{j+1})` of `b(xi / B^j)` in the degree variable.
    pub fn support_bounds(&self, j: u32) -> (f64, f64) {
        let b = self.bandwidth;
        (b.powi(j as i32 - 1), b.powi(j as i32 + 1))
    }

    /// Integer degrees at which the scale-`j` window can be nonzero.
    /// Empty iff no integer lies strictly inside the support.
    pub fn support_degrees(&self, j: u32) -> std::ops::RangeInclusive<usize> {
        let (lo, hi) = self.support_bounds(j);
        let first = (lo.floor() as usize) + 1;
        let mut last = hi.ceil() as usize;
        // open interval: an integer endpoint is outside the support
        if last as f64 >= hi {
            last = last.saturating_sub(1);
        }
        first..=last
    }

    /// Largest degree the scale-`j` window touches.
    pub fn max_support_degree(&self, j: u32) -> usize {
        *self.support_degrees(j).end()
    }

    /// Window weights `b(l / B^j)` for `l = 0..=l_max`, cached per `(j, l_max)`.
    pub fn window_weights(&self, j: u32, l_max: usize) -> Result<Arc<Vec<f64>>> {
        if l_max < 1 {
            return Err(Error::invalid("window_weights requires l_max >= 1"));
        }
        let key = (j, l_max);
        if let Some(hit) = self.weight_cache.lock().unwrap().get(&key) {
            return Ok(Arc::clone(hit));
        }
        let scale = self.bandwidth.powi(j as i32);
        let mut w = Vec::with_capacity(l_max + 1);
        for l in 0..=l_max {
            w.push(self.eval_b(l as f64 / scale)?);
        }
        let arc = Arc::new(w);
        self.weight_cache
            .lock()
            .unwrap()
            .insert(key, Arc::clone(&arc));
        Ok(arc)
    }

    /// Partition-of-unity residual `|sum_j b^2(xi/B^j) - 1|` for `|xi| >= 1`.
    /// The sum runs until the rescaled argument falls inside the plateau.
    pub fn partition_residual(&self, xi: f64) -> Result<f64> {
        let x = xi.abs();
        if x < 1.0 {
            return Err(Error::invalid(
                "partition of unity is asserted for |xi| >= 1 only",
            ));
        }
        let mut total = 0.0;
        let mut arg = x;
        loop {
            total += self.b_squared(arg)?;
            arg /= self.bandwidth;
            if arg <= 1.0 / self.bandwidth {
                break;
            }
        }
        Ok((total - 1.0).abs())
    }

    /// Writes the profile as structured text: a version line, the bandwidth
    /// and resolution, then one table sample per line with 17 significant
    /// digits so the decimal representation round-trips exactly.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "needlet-profile v1")?;
        writeln!(w, "bandwidth {:.16e}", self.bandwidth)?;
        writeln!(w, "resolution {}", self.resolution)?;
        for v in &self.table {
            writeln!(w, "{v:.16e}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty profile file".into()))??;
        if header.trim() != "needlet-profile v1" {
            return Err(Error::Parse(format!("unexpected header: {header}")));
        }
        let bw_line = lines
            .next()
            .ok_or_else(|| Error::Parse("missing bandwidth line".into()))??;
        let bandwidth = parse_keyed_f64(&bw_line, "bandwidth")?;
        let res_line = lines
            .next()
            .ok_or_else(|| Error::Parse("missing resolution line".into()))??;
        let resolution = parse_keyed_usize(&res_line, "resolution")?;
        let mut table = Vec::with_capacity(resolution);
        for line in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            table.push(
                t.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad table value {t:?}: {e}")))?,
            );
        }
        if table.len() != resolution {
            return Err(Error::Parse(format!(
                "expected {resolution} table samples, found {}",
                table.len()
            )));
        }
        if !(bandwidth > 1.0) {
            return Err(Error::invalid(format!(
                "bandwidth must satisfy B > 1, got {bandwidth}"
            )));
        }
        if table.len() < MIN_TABLE_RESOLUTION {
            return Err(Error::invalid("profile table below minimum resolution"));
        }
        Ok(Self::from_table(bandwidth, table))
    }
}

fn parse_keyed_f64(line: &str, key: &str) -> Result<f64> {
    let rest = line
        .trim()
        .strip_prefix(key)
        .ok_or_else(|| Error::Parse(format!("expected `{key} <value>`, got {line:?}")))?;
    rest.trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("bad {key} value: {e}")))
}

fn parse_keyed_usize(line: &str, key: &str) -> Result<usize> {
    let rest = line
        .trim()
        .strip_prefix(key)
        .ok_or_else(|| Error::Parse(format!("expected `{key} <value>`, got {line:?}")))?;
    rest.trim()
        .parse::<usize>()
        .map_err(|e| Error::Parse(format!("bad {key} value: {e}")))
}
