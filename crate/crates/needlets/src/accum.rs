//! Compensated summation used by the Monte Carlo aggregators so that
//! results do not depend on how replicates were partitioned across workers.

/// Neumaier variant of Kahan summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sums a slice in index order with compensation.
pub fn compensated_total(values: &[f64]) -> f64 {
    let mut acc = CompensatedSum::new();
    for &v in values {
        acc.add(v);
    }
    acc.value()
}

/// Sample mean with compensated accumulation.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    compensated_total(values) / values.len() as f64
}

/// Mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n < 2 {
        return (mean(values), f64::INFINITY);
    }
    let m = mean(values);
    let mut acc = CompensatedSum::new();
    for &v in values {
        let d = v - m;
        acc.add(d * d);
    }
    let var = acc.value() / (n as f64 - 1.0);
    (m, (var / n as f64).sqrt())
}

/// Central sample moments up to order four, computed in two passes.
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn moments(values: &[f64]) -> Moments {
    let n = values.len();
    let m = mean(values);
    let mut m2 = CompensatedSum::new();
    let mut m3 = CompensatedSum::new();
    let mut m4 = CompensatedSum::new();
    for &v in values {
        let d = v - m;
        let d2 = d * d;
        m2.add(d2);
        m3.add(d2 * d);
        m4.add(d2 * d2);
    }
    let nf = n as f64;
    let var = if n > 1 { m2.value() / (nf - 1.0) } else { 0.0 };
    let c2 = m2.value() / nf;
    let c3 = m3.value() / nf;
    let c4 = m4.value() / nf;
    let skew = if c2 > 0.0 { c3 / c2.powf(1.5) } else { 0.0 };
    let kurt = if c2 > 0.0 { c4 / (c2 * c2) - 3.0 } else { 0.0 };
    Moments {
        n,
        mean: m,
        variance: var,
        skewness: skew,
        excess_kurtosis: kurt,
    }
}
