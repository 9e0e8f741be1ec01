//! Compressed one-dimensional samples.
//!
//! EM posteriors depend on an observation only through its value, so a
//! feature column is stored as sorted distinct values with multiplicities.
//! Count data rarely has more than a few dozen distinct values, which makes
//! every E- and M-step proportional to that number instead of `n`. The
//! representation is independent of the original sample order.

use crate::special::ln_gamma;

#[derive(Debug, Clone)]
pub struct Sample {
    values: Vec<f64>,
    weights: Vec<f64>,
    /// `ln Γ(x+1)` per distinct value; only filled for count data.
    log_factorials: Vec<f64>,
    n: usize,
    integral: bool,
}

impl Sample {
    /// Build from raw observations (unit weights).
    pub fn new(xs: &[f64]) -> Self {
        let ws = vec![1.0; xs.len()];
        Self::from_weighted(xs, &ws)
    }

    /// Build from observations with nonnegative weights; weights of equal
    /// values are summed.
    pub fn from_weighted(xs: &[f64], ws: &[f64]) -> Self {
        debug_assert_eq!(xs.len(), ws.len());
        let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ws.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut values: Vec<f64> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        // Group first, then sum each group in sorted order so the result does
        // not depend on the input order.
        let mut i = 0;
        while i < pairs.len() {
            let v = pairs[i].0;
            let mut j = i;
            let mut group: Vec<f64> = Vec::new();
            while j < pairs.len() && pairs[j].0 == v {
                group.push(pairs[j].1);
                j += 1;
            }
            group.sort_by(f64::total_cmp);
            values.push(v);
            weights.push(group.iter().sum());
            i = j;
        }
        let integral = values.iter().all(|v| *v >= 0.0 && v.fract() == 0.0);
        let log_factorials = if integral {
            values.iter().map(|v| ln_gamma(v + 1.0)).collect()
        } else {
            Vec::new()
        };
        Self {
            values,
            weights,
            log_factorials,
            n: xs.len(),
            integral,
        }
    }

    /// Distinct values, ascending.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Multiplicity (or summed weight) of each distinct value.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn log_factorials(&self) -> &[f64] {
        &self.log_factorials
    }

    /// Number of original observations.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of distinct values.
    pub fn n_distinct(&self) -> usize {
        self.values.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// All values are nonnegative integers.
    pub fn is_integral(&self) -> bool {
        self.integral
    }

    /// At most one distinct value carries positive weight.
    pub fn is_constant(&self) -> bool {
        self.weights.iter().filter(|w| **w > 0.0).count() <= 1
    }

    pub fn max_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// Type-7 (linear interpolation) quantile of the unweighted sample.
    pub fn quantile(&self, q: f64) -> f64 {
        if self.values.is_empty() {
            return f64::NAN;
        }
        let q = q.clamp(0.0, 1.0);
        let h = (self.n as f64 - 1.0) * q;
        let lo = h.floor() as usize;
        let frac = h - lo as f64;
        let a = self.order_stat(lo);
        if frac == 0.0 {
            return a;
        }
        let b = self.order_stat((lo + 1).min(self.n - 1));
        a + frac * (b - a)
    }

    /// `k`-th order statistic (0-based), treating weights as multiplicities.
    fn order_stat(&self, k: usize) -> f64 {
        let mut cum = 0.0;
        for (v, w) in self.values.iter().zip(&self.weights) {
            cum += w;
            if (k as f64) < cum - 1e-9 {
                return *v;
            }
        }
        self.max_value()
    }
}
