//! Sphere geometry: points, geodesic distance, and cubature grids with
//! positive weights that integrate band-limited functions exactly.
//!
//! The grid family is a Gauss–Legendre × equiangular product: for degree `L`,
//! `ceil((L+1)/2)` rings at Gauss–Legendre colatitudes crossed with `L + 1`
//! equispaced longitudes. The longitude sum annihilates every azimuthal
//! order `0 < |m| <= L`, and the ring rule integrates the remaining
//! polynomial in cos(theta) exactly, so every spherical polynomial of degree
//! at most `L` is integrated exactly with positive weights.

use std::io::Write;

use crate::error::{Error, Result};

/// Largest cubature degree the library will construct.
pub const MAX_GRID_DEGREE: usize = 1024;

/// A point on the unit sphere in colatitude/longitude radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpherePoint {
    theta: f64,
    phi: f64,
}

impl SpherePoint {
    /// Colatitude must lie in [0, pi]; longitude is wrapped into [0, 2*pi).
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !theta.is_finite() || !(0.0..=std::f64::consts::PI).contains(&theta) {
            return Err(Error::invalid(format!(
                "colatitude {theta} outside [0, pi]"
            )));
        }
        if !phi.is_finite() {
            return Err(Error::invalid("longitude must be finite"));
        }
        let tau = 2.0 * std::f64::consts::PI;
        let mut phi = phi.rem_euclid(tau);
        if phi >= tau {
            phi = 0.0;
        }
        Ok(SpherePoint { theta, phi })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn north_pole() -> Self {
        SpherePoint {
            theta: 0.0,
            phi: 0.0,
        }
    }

    pub fn south_pole() -> Self {
        SpherePoint {
            theta: std::f64::consts::PI,
            phi: 0.0,
        }
    }

    pub fn unit_vector(&self) -> [f64; 3] {
        let (st, ct) = (self.theta.sin(), self.theta.cos());
        let (sp, cp) = (self.phi.sin(), self.phi.cos());
        [st * cp, st * sp, ct]
    }

    pub fn from_unit_vector(v: [f64; 3]) -> Self {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let theta = (v[2] / norm).clamp(-1.0, 1.0).acos();
        let phi = v[1].atan2(v[0]).rem_euclid(2.0 * std::f64::consts::PI);
        SpherePoint { theta, phi }
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Geodesic distance between unit vectors, stable near 0 and pi.
pub fn geodesic_distance_vec(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm(cross(a, b)).atan2(dot(a, b))
}

/// Great-circle distance in radians, in [0, pi].
///
/// Uses the two-argument arctangent of |p x q| and p.q; the bare arccos of
/// the dot product loses half the significant digits near 0 and pi, which
/// matters for the (1 + B^j d)^-M decay diagnostics.
pub fn geodesic_distance(p: &SpherePoint, q: &SpherePoint) -> f64 {
    geodesic_distance_vec(p.unit_vector(), q.unit_vector())
}

/// Gauss–Legendre nodes (ascending) and weights on [-1, 1].
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Newton iteration from the Chebyshev-based initial guess.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = z;
            for l in 2..=n {
                let lf = l as f64;
                let p2 = ((2.0 * lf - 1.0) * z * p1 - (lf - 1.0) * p0) / lf;
                p0 = p1;
                p1 = p2;
            }
            // derivative of P_n from P_n and P_{n-1}
            pp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                // one more pass to polish
                let mut q0 = 1.0;
                let mut q1 = z;
                for l in 2..=n {
                    let lf = l as f64;
                    let q2 = ((2.0 * lf - 1.0) * z * q1 - (lf - 1.0) * q0) / lf;
                    q0 = q1;
                    q1 = q2;
                }
                pp = n as f64 * (z * q1 - q0) / (z * z - 1.0);
                z -= q1 / pp;
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// One colatitude ring of a product grid.
#[derive(Clone, Copy, Debug)]
pub struct Ring {
    pub theta: f64,
    pub cos_theta: f64,
    pub sin_theta: f64,
    /// Gauss weight of the ring (before the longitude factor).
    pub weight: f64,
    /// Index of the ring's first point in the grid arrays.
    pub offset: usize,
}

/// Cubature points and positive weights, exact for spherical polynomials of
/// degree at most `degree`.
#[derive(Clone, Debug)]
pub struct CubatureGrid {
    degree: usize,
    scale: Option<u32>,
    points: Vec<SpherePoint>,
    weights: Vec<f64>,
    unit_vectors: Vec<[f64; 3]>,
    rings: Vec<Ring>,
    n_phi: usize,
}

impl CubatureGrid {
    /// Builds the product grid exact for degree <= `degree`.
    pub fn build(degree: usize) -> Result<Self> {
        if degree > MAX_GRID_DEGREE {
            return Err(Error::ResourceLimit(format!(
                "cubature degree {degree} exceeds maximum {MAX_GRID_DEGREE}"
            )));
        }
        let n_rings = (degree + 1).div_ceil(2).max(1);
        let n_phi = degree + 1;
        let (nodes, gauss_weights) = gauss_legendre(n_rings);
        let phi_weight = 2.0 * std::f64::consts::PI / n_phi as f64;
        let mut points = Vec::with_capacity(n_rings * n_phi);
        let mut weights = Vec::with_capacity(n_rings * n_phi);
        let mut unit_vectors = Vec::with_capacity(n_rings * n_phi);
        let mut rings = Vec::with_capacity(n_rings);
        // descending x = cos(theta) so points run north to south
        for (r, (&x, &gw)) in nodes
            .iter()
            .rev()
            .zip(gauss_weights.iter().rev())
            .enumerate()
        {
            let theta = x.clamp(-1.0, 1.0).acos();
            let sin_theta = (1.0 - x * x).max(0.0).sqrt();
            rings.push(Ring {
                theta,
                cos_theta: x,
                sin_theta,
                weight: gw,
                offset: r * n_phi,
            });
            for i in 0..n_phi {
                let phi = 2.0 * std::f64::consts::PI * i as f64 / n_phi as f64;
                let p = SpherePoint { theta, phi };
                unit_vectors.push([sin_theta * phi.cos(), sin_theta * phi.sin(), x]);
                points.push(p);
                weights.push(gw * phi_weight);
            }
        }
        Ok(CubatureGrid {
            degree,
            scale: None,
            points,
            weights,
            unit_vectors,
            rings,
            n_phi,
        })
    }

    /// Grid for the scale-`j` coefficient set: degree `ceil(2 B^{j+1})`, which
    /// integrates products of two scale-`j` needlet kernels exactly.
    pub fn for_scale(j: u32, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 1.0) {
            return Err(Error::invalid(format!(
                "bandwidth must satisfy B > 1, got {bandwidth}"
            )));
        }
        let degree = (2.0 * bandwidth.powi(j as i32 + 1)).ceil() as usize;
        if degree > MAX_GRID_DEGREE {
            return Err(Error::ResourceLimit(format!(
                "scale {j} needs cubature degree {degree} > maximum {MAX_GRID_DEGREE}"
            )));
        }
        let mut grid = Self::build(degree)?;
        grid.scale = Some(j);
        Ok(grid)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn scale(&self) -> Option<u32> {
        self.scale
    }

    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    /// The normalizer N_j = sqrt(#points) used by the scale statistics.
    pub fn n_j(&self) -> f64 {
        (self.points.len() as f64).sqrt()
    }

    pub fn points(&self) -> &[SpherePoint] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn unit_vectors(&self) -> &[[f64; 3]] {
        &self.unit_vectors
    }

    pub fn rings(&self) -> &[Ring] {
        &self.rings
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    /// Empirical constant `#points / B^{2j}` for scale-tagged grids.
    pub fn scale_constant(&self, bandwidth: f64) -> Option<f64> {
        self.scale
            .map(|j| self.points.len() as f64 / bandwidth.powi(2 * j as i32))
    }

    /// Cubature of sampled values: sum of weight * value.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.points.len() {
            return Err(Error::invalid(format!(
                "expected {} samples, got {}",
                self.points.len(),
                values.len()
            )));
        }
        let mut acc = crate::accum::CompensatedSum::new();
        for (w, v) in self.weights.iter().zip(values) {
            acc.add(w * v);
        }
        Ok(acc.value())
    }

    /// Row sum `sum_{k'} (1 + B^j d(xi_k, xi_{k'}))^{-M}` over all grid points.
    ///
    /// The exponent must satisfy `M >= 3` for the row sums to be bounded
    /// uniformly in the scale; smaller exponents are rejected.
    pub fn kernel_row_sum(&self, k: usize, m_exp: u32, bandwidth: f64, j: u32) -> Result<f64> {
        if m_exp < 3 {
            return Err(Error::invalid(format!(
                "kernel row sum requires M >= 3, got {m_exp}"
            )));
        }
        if k >= self.points.len() {
            return Err(Error::invalid(format!("point index {k} out of range")));
        }
        let bj = bandwidth.powi(j as i32);
        let center = self.unit_vectors[k];
        let mut acc = crate::accum::CompensatedSum::new();
        for v in &self.unit_vectors {
            let d = geodesic_distance_vec(center, *v);
            acc.add((1.0 + bj * d).powi(-(m_exp as i32)));
        }
        Ok(acc.value())
    }

    /// Writes one row per point: theta, phi, weight with 17 significant digits.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "# cubature-grid v1")?;
        writeln!(
            w,
            "# degree {} scale {} points {}",
            self.degree,
            self.scale.map_or("none".to_string(), |j| j.to_string()),
            self.points.len()
        )?;
        writeln!(w, "# columns: theta phi weight")?;
        for (p, wt) in self.points.iter().zip(&self.weights) {
            writeln!(w, "{:.16e} {:.16e} {:.16e}", p.theta, p.phi, wt)?;
        }
        Ok(())
    }
}
