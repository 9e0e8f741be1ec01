//! Parametric density families: Poisson, negative binomial and normal.
//!
//! Parameter layouts:
//! - Poisson: `[λ]`
//! - negative binomial: `[μ, r]` (mean and size)
//! - normal: `[μ, σ²]`

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, DiscreteCDF};

use crate::error::{Error, Result};
use crate::sample::Sample;
use crate::special::{digamma, ln_gamma, trigamma};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Counts at or below this value use exact finite sums for the
/// negative-binomial `ψ(x+r) − ψ(r)` style differences.
const NB_FINITE_SUM_MAX: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Poisson,
    #[serde(rename = "negbin")]
    NegBin,
    Normal,
}

impl FamilyKind {
    pub fn dim(self) -> usize {
        match self {
            FamilyKind::Poisson => 1,
            FamilyKind::NegBin | FamilyKind::Normal => 2,
        }
    }

    pub fn is_count(self) -> bool {
        !matches!(self, FamilyKind::Normal)
    }

    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Poisson => "poisson",
            FamilyKind::NegBin => "negbin",
            FamilyKind::Normal => "normal",
        }
    }
}

impl std::str::FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "poisson" => Ok(FamilyKind::Poisson),
            "negbin" | "nb" | "negative-binomial" => Ok(FamilyKind::NegBin),
            "normal" | "gaussian" => Ok(FamilyKind::Normal),
            other => Err(Error::InvalidConfig(format!("unknown family '{other}'"))),
        }
    }
}

/// Parameter vector of length 1 or 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theta {
    values: [f64; 2],
    dim: usize,
}

impl Theta {
    pub fn new(values: &[f64]) -> Self {
        assert!(values.len() == 1 || values.len() == 2, "theta must have 1 or 2 entries");
        let mut v = [0.0; 2];
        v[..values.len()].copy_from_slice(values);
        Self {
            values: v,
            dim: values.len(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.dim]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl std::ops::Index<usize> for Theta {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.as_slice()[i]
    }
}

/// First- and scaled second-order density-derivative ratios at a point.
///
/// `b1[h] = (∂f/∂θ_h)/f`; `b2` holds `(∂²f/∂θ_h²)/(2f)` for every `h`
/// followed by `(∂²f/∂θ_h∂θ_l)/f` for `h < l` (vech order).
#[derive(Debug, Clone, PartialEq)]
pub struct DerivBundle {
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
}

impl DerivBundle {
    /// `(b1, b2)` concatenated.
    pub fn stacked(&self) -> Vec<f64> {
        self.b1.iter().chain(&self.b2).copied().collect()
    }
}

/// Result of a (weighted) maximum-likelihood fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleFit {
    pub theta: Theta,
    /// Some coordinate sits on the parameter box.
    pub at_boundary: bool,
    /// All weighted mass sits on a single value.
    pub degenerate: bool,
}

/// A density family together with its parameter box Θ.
#[derive(Debug, Clone, PartialEq)]
pub struct Family {
    kind: FamilyKind,
    bounds: [(f64, f64); 2],
}

impl Family {
    pub fn new(kind: FamilyKind) -> Self {
        let bounds = match kind {
            FamilyKind::Poisson => [(1e-6, 1e6), (0.0, 0.0)],
            FamilyKind::NegBin => [(1e-6, 1e6), (1e-3, 1e4)],
            FamilyKind::Normal => [(-1e6, 1e6), (1e-8, 1e6)],
        };
        Self { kind, bounds }
    }

    pub fn poisson() -> Self {
        Self::new(FamilyKind::Poisson)
    }

    pub fn negbin() -> Self {
        Self::new(FamilyKind::NegBin)
    }

    pub fn normal() -> Self {
        Self::new(FamilyKind::Normal)
    }

    /// Family with a custom parameter box.
    pub fn with_bounds(kind: FamilyKind, bounds: &[(f64, f64)]) -> Result<Self> {
        if bounds.len() != kind.dim() {
            return Err(Error::DimensionMismatch {
                expected: kind.dim(),
                actual: bounds.len(),
            });
        }
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidConfig(format!(
                    "bound {i} must be finite with lo < hi, got [{lo}, {hi}]"
                )));
            }
            let must_be_positive = match kind {
                FamilyKind::Poisson | FamilyKind::NegBin => true,
                FamilyKind::Normal => i == 1,
            };
            if must_be_positive && lo <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "bound {i} of {} must be strictly positive",
                    kind.name()
                )));
            }
        }
        let mut b = [(0.0, 0.0); 2];
        b[..bounds.len()].copy_from_slice(bounds);
        Ok(Self { kind, bounds: b })
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    /// Parameter dimension `d`.
    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    /// `d(d+1)/2`, the length of `b2`.
    pub fn n_second_order(&self) -> usize {
        let d = self.dim();
        d * (d + 1) / 2
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds[..self.dim()]
    }

    pub fn check_x(&self, x: f64) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::Domain(format!("observation {x} is not finite")));
        }
        if self.kind.is_count() && (x < 0.0 || x.fract() != 0.0) {
            return Err(Error::Domain(format!(
                "observation {x} is not a nonnegative integer ({} family)",
                self.kind.name()
            )));
        }
        Ok(())
    }

    pub fn check_theta(&self, theta: &Theta) -> Result<()> {
        if theta.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: theta.dim(),
            });
        }
        for (v, (lo, hi)) in theta.as_slice().iter().zip(self.bounds()) {
            if !(v >= lo && v <= hi) {
                return Err(Error::Domain(format!("parameter {v} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Clamp every coordinate into the box; reports whether any coordinate
    /// was moved or lies on a bound.
    pub fn clamp(&self, values: &[f64]) -> (Theta, bool) {
        let mut out = [0.0; 2];
        let mut hit = false;
        for (i, (&v, &(lo, hi))) in values.iter().zip(self.bounds()).enumerate() {
            let c = if v.is_nan() { lo } else { v.clamp(lo, hi) };
            if c <= lo || c >= hi {
                hit = true;
            }
            out[i] = c;
        }
        (Theta::new(&out[..self.dim()]), hit)
    }

    /// `log f(x; θ)`.
    pub fn log_pdf(&self, theta: &Theta, x: f64) -> Result<f64> {
        self.check_x(x)?;
        self.check_theta(theta)?;
        Ok(self.log_pdf_unchecked(theta, x))
    }

    pub(crate) fn log_pdf_unchecked(&self, theta: &Theta, x: f64) -> f64 {
        let lf = if self.kind.is_count() { ln_gamma(x + 1.0) } else { 0.0 };
        ComponentDensity::new(self.kind, theta).log_pdf(x, lf)
    }

    /// Closed-form density-derivative ratios at `theta0`.
    pub fn deriv_bundle(&self, theta0: &Theta, x: f64) -> Result<DerivBundle> {
        self.check_x(x)?;
        self.check_theta(theta0)?;
        Ok(self.deriv_bundle_unchecked(theta0, x))
    }

    pub(crate) fn deriv_bundle_unchecked(&self, theta: &Theta, x: f64) -> DerivBundle {
        match self.kind {
            FamilyKind::Poisson => {
                let lam = theta[0];
                let y = x / lam - 1.0;
                let z = 0.5 * (y * y - x / (lam * lam));
                DerivBundle {
                    b1: vec![y],
                    b2: vec![z],
                }
            }
            FamilyKind::NegBin => {
                let (mu, r) = (theta[0], theta[1]);
                let rm = r + mu;
                let (dig, trig) = if x <= NB_FINITE_SUM_MAX {
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for k in 0..x as u64 {
                        let t = 1.0 / (r + k as f64);
                        s1 += t;
                        s2 += t * t;
                    }
                    (s1, -s2)
                } else {
                    (digamma(x + r) - digamma(r), trigamma(x + r) - trigamma(r))
                };
                let l_mu = x / mu - (r + x) / rm;
                let l_r = dig + (r / rm).ln() + 1.0 - (r + x) / rm;
                let l_mumu = -x / (mu * mu) + (r + x) / (rm * rm);
                let l_rr = trig + 1.0 / r - 1.0 / rm - (mu - x) / (rm * rm);
                let l_mur = (x - mu) / (rm * rm);
                second_order_bundle(&[l_mu, l_r], &[l_mumu, l_rr], l_mur)
            }
            FamilyKind::Normal => {
                let (mu, v) = (theta[0], theta[1]);
                let e = x - mu;
                let l_mu = e / v;
                let l_v = -0.5 / v + 0.5 * e * e / (v * v);
                let l_mumu = -1.0 / v;
                let l_vv = 0.5 / (v * v) - e * e / (v * v * v);
                let l_muv = -e / (v * v);
                second_order_bundle(&[l_mu, l_v], &[l_mumu, l_vv], l_muv)
            }
        }
    }

    /// Cumulative distribution function at `x`.
    pub fn cdf(&self, theta: &Theta, x: f64) -> f64 {
        match self.kind {
            FamilyKind::Poisson => {
                if x < 0.0 {
                    return 0.0;
                }
                statrs::distribution::Poisson::new(theta[0])
                    .map(|d| d.cdf(x.floor() as u64))
                    .unwrap_or(f64::NAN)
            }
            FamilyKind::NegBin => {
                if x < 0.0 {
                    return 0.0;
                }
                let (mu, r) = (theta[0], theta[1]);
                statrs::distribution::NegativeBinomial::new(r, r / (r + mu))
                    .map(|d| d.cdf(x.floor() as u64))
                    .unwrap_or(f64::NAN)
            }
            FamilyKind::Normal => statrs::distribution::Normal::new(theta[0], theta[1].sqrt())
                .map(|d| d.cdf(x))
                .unwrap_or(f64::NAN),
        }
    }

    /// Weighted maximum-likelihood estimate, clamped to the parameter box.
    ///
    /// Poisson and normal use closed forms. The negative binomial profiles
    /// `μ` at the weighted mean and maximizes over `log r` with Brent's
    /// method, followed by a few Newton steps on the profile score.
    pub fn weighted_mle(&self, xs: &[f64], ws: &[f64]) -> Result<MleFit> {
        if xs.len() != ws.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                actual: ws.len(),
            });
        }
        for &x in xs {
            self.check_x(x)?;
        }
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Domain("weights must be finite and nonnegative".into()));
        }
        let total: f64 = ws.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Domain("weights must have a positive sum".into()));
        }
        let sample = Sample::from_weighted(xs, ws);
        Ok(self.fit_sample(&sample, sample.weights()))
    }

    /// Unweighted maximum-likelihood estimate under the homogeneous model.
    pub fn homogeneous_mle(&self, xs: &[f64]) -> Result<MleFit> {
        self.weighted_mle(xs, &vec![1.0; xs.len()])
    }

    /// Weighted MLE on the distinct values of `sample`. `weights` is aligned
    /// with `sample.values()` and already includes multiplicities.
    pub(crate) fn fit_sample(&self, sample: &Sample, weights: &[f64]) -> MleFit {
        let values = sample.values();
        let total: f64 = weights.iter().sum();
        let support = weights.iter().filter(|w| **w > 0.0).count();
        let degenerate = support <= 1;
        if !(total > 0.0) {
            let (theta, _) = self.clamp(&self.default_values());
            return MleFit {
                theta,
                at_boundary: true,
                degenerate: true,
            };
        }
        let sum_x: f64 = values.iter().zip(weights).map(|(x, w)| x * w).sum();
        let mean = sum_x / total;
        match self.kind {
            FamilyKind::Poisson => {
                let (theta, hit) = self.clamp(&[mean]);
                MleFit {
                    theta,
                    at_boundary: hit,
                    degenerate,
                }
            }
            FamilyKind::Normal => {
                let var = values
                    .iter()
                    .zip(weights)
                    .map(|(x, w)| w * (x - mean) * (x - mean))
                    .sum::<f64>()
                    / total;
                let (theta, hit) = self.clamp(&[mean, var]);
                MleFit {
                    theta,
                    at_boundary: hit,
                    degenerate,
                }
            }
            FamilyKind::NegBin => {
                let (mu_lo, mu_hi) = self.bounds[0];
                let mu = mean.clamp(mu_lo, mu_hi);
                let mu_hit = mu <= mu_lo || mu >= mu_hi;
                let profile = NbProfile::new(sample, weights, mu);
                let (r, r_hit) = profile.maximize(self.bounds[1]);
                MleFit {
                    theta: Theta::new(&[mu, r]),
                    at_boundary: mu_hit || r_hit,
                    degenerate,
                }
            }
        }
    }

    /// Weighted log-likelihood `Σ w log f(x; θ)` over a compressed sample.
    pub(crate) fn weighted_loglik(&self, sample: &Sample, weights: &[f64], theta: &Theta) -> f64 {
        let dens = ComponentDensity::new(self.kind, theta);
        let lfs = sample.log_factorials();
        sample
            .values()
            .iter()
            .enumerate()
            .zip(weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|((u, &x), &w)| w * dens.log_pdf(x, lfs.get(u).copied().unwrap_or(0.0)))
            .sum()
    }

    fn default_values(&self) -> Vec<f64> {
        match self.kind {
            FamilyKind::Poisson => vec![1.0],
            FamilyKind::NegBin => vec![1.0, 1.0],
            FamilyKind::Normal => vec![0.0, 1.0],
        }
    }
}

fn second_order_bundle(l1: &[f64; 2], l2: &[f64; 2], l12: f64) -> DerivBundle {
    DerivBundle {
        b1: l1.to_vec(),
        b2: vec![
            0.5 * (l2[0] + l1[0] * l1[0]),
            0.5 * (l2[1] + l1[1] * l1[1]),
            l12 + l1[0] * l1[1],
        ],
    }
}

/// Per-component constants so repeated density evaluations avoid
/// recomputing parameter-only terms.
#[derive(Debug, Clone, Copy)]
pub(crate) enum ComponentDensity {
    Poisson { ln_lam: f64, lam: f64 },
    NegBin { r: f64, c0: f64, c1: f64 },
    Normal { mu: f64, inv_two_var: f64, c0: f64 },
}

impl ComponentDensity {
    pub(crate) fn new(kind: FamilyKind, theta: &Theta) -> Self {
        match kind {
            FamilyKind::Poisson => ComponentDensity::Poisson {
                ln_lam: theta[0].ln(),
                lam: theta[0],
            },
            FamilyKind::NegBin => {
                let (mu, r) = (theta[0], theta[1]);
                let rm = r + mu;
                ComponentDensity::NegBin {
                    r,
                    c0: r * (r / rm).ln() - ln_gamma(r),
                    c1: (mu / rm).ln(),
                }
            }
            FamilyKind::Normal => ComponentDensity::Normal {
                mu: theta[0],
                inv_two_var: 0.5 / theta[1],
                c0: -0.5 * (LN_2PI + theta[1].ln()),
            },
        }
    }

    /// `log f(x)`; `ln_fact` is `ln Γ(x+1)` for count families.
    #[inline]
    pub(crate) fn log_pdf(&self, x: f64, ln_fact: f64) -> f64 {
        match *self {
            ComponentDensity::Poisson { ln_lam, lam } => {
                if x == 0.0 {
                    -lam
                } else {
                    x * ln_lam - lam - ln_fact
                }
            }
            ComponentDensity::NegBin { r, c0, c1 } => {
                if x == 0.0 {
                    c0 + ln_gamma(r)
                } else {
                    ln_gamma(x + r) + c0 + x * c1 - ln_fact
                }
            }
            ComponentDensity::Normal { mu, inv_two_var, c0 } => {
                let e = x - mu;
                c0 - e * e * inv_two_var
            }
        }
    }
}

/// Negative-binomial log-likelihood in `r` at fixed `μ`, dropping terms
/// that do not depend on `r`.
struct NbProfile {
    mu: f64,
    total: f64,
    sum_x: f64,
    /// `tail[k] = Σ_{x > k} w(x)`, so `Σ w [lnΓ(x+r) − lnΓ(r)] = Σ_k tail[k] ln(r+k)`.
    tail: Option<Vec<f64>>,
    /// Fallback for large counts: `(x, w)` pairs with positive weight.
    pairs: Vec<(f64, f64)>,
}

impl NbProfile {
    fn new(sample: &Sample, weights: &[f64], mu: f64) -> Self {
        let values = sample.values();
        let total: f64 = weights.iter().sum();
        let sum_x: f64 = values.iter().zip(weights).map(|(x, w)| x * w).sum();
        let pairs: Vec<(f64, f64)> = values
            .iter()
            .copied()
            .zip(weights.iter().copied())
            .filter(|(x, w)| *w > 0.0 && *x > 0.0)
            .collect();
        let max_x = pairs.last().map(|p| p.0).unwrap_or(0.0);
        let tail = if max_x <= (4 * pairs.len() + 64) as f64 {
            let m = max_x as usize;
            let mut tail = vec![0.0; m];
            // Accumulate from the largest value down.
            let mut acc = 0.0;
            let mut idx = pairs.len();
            for k in (0..m).rev() {
                while idx > 0 && pairs[idx - 1].0 > k as f64 {
                    idx -= 1;
                    acc += pairs[idx].1;
                }
                tail[k] = acc;
            }
            Some(tail)
        } else {
            None
        };
        Self {
            mu,
            total,
            sum_x,
            tail,
            pairs,
        }
    }

    fn value(&self, r: f64) -> f64 {
        let gamma_part = match &self.tail {
            Some(tail) => tail
                .iter()
                .enumerate()
                .map(|(k, t)| t * (r + k as f64).ln())
                .sum::<f64>(),
            None => {
                let lg_r = ln_gamma(r);
                self.pairs.iter().map(|(x, w)| w * (ln_gamma(x + r) - lg_r)).sum()
            }
        };
        let rm = r + self.mu;
        gamma_part + self.total * r * r.ln() - (self.total * r + self.sum_x) * rm.ln()
    }

    /// First and second derivatives in `r`.
    fn derivatives(&self, r: f64) -> (f64, f64) {
        let (s1, s2) = match &self.tail {
            Some(tail) => tail.iter().enumerate().fold((0.0, 0.0), |(a, b), (k, t)| {
                let inv = 1.0 / (r + k as f64);
                (a + t * inv, b - t * inv * inv)
            }),
            None => {
                let (dg, tg) = (digamma(r), trigamma(r));
                self.pairs.iter().fold((0.0, 0.0), |(a, b), (x, w)| {
                    (a + w * (digamma(x + r) - dg), b + w * (trigamma(x + r) - tg))
                })
            }
        };
        let w = self.total;
        let rm = r + self.mu;
        let d1 = s1 + w * (r / rm).ln() + w - (w * r + self.sum_x) / rm;
        let d2 = s2 + w / r - w / rm - (w * self.mu - self.sum_x) / (rm * rm);
        (d1, d2)
    }

    /// Maximize over `r` in `bounds`; returns `(r, at_boundary)`.
    fn maximize(&self, bounds: (f64, f64)) -> (f64, bool) {
        let (lo, hi) = (bounds.0.ln(), bounds.1.ln());
        let obj = |s: f64| -self.value(s.exp());
        let (mut s, mut fs) = brent_minimize(obj, lo, hi, 1e-8, 200);

        // Newton polish on the score in log r.
        for _ in 0..6 {
            let r = s.exp();
            let (d1, d2) = self.derivatives(r);
            let g = r * d1;
            let h = r * d1 + r * r * d2;
            if !(h < 0.0) || !g.is_finite() {
                break;
            }
            let step = -g / h;
            let cand = (s + step).clamp(lo, hi);
            let fc = obj(cand);
            if fc > fs + 1e-12 * fs.abs() {
                break;
            }
            let moved = (cand - s).abs();
            s = cand;
            fs = fc;
            if moved <= 1e-14 * (1.0 + s.abs()) {
                break;
            }
        }

        for edge in [lo, hi] {
            let fe = obj(edge);
            if fe <= fs {
                s = edge;
                fs = fe;
            }
        }
        let r = if s <= lo {
            bounds.0
        } else if s >= hi {
            bounds.1
        } else {
            s.exp()
        };
        let hit = s <= lo || s >= hi;
        (r, hit)
    }
}

/// Brent's derivative-free minimizer on `[a, b]`. Returns `(x, f(x))`.
pub(crate) fn brent_minimize<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64, max_iter: usize) -> (f64, f64) {
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = (a, b);
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..max_iter {
        let m = 0.5 * (a + b);
        let tol1 = 1e-10 * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut use_golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}
