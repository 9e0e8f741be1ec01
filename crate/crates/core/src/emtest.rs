//! Penalized EM and the EM-test homogeneity statistic for a single feature.
//!
//! For a sample `x_1..x_n` and a family `f(x; θ)`, the penalized mixture
//! log-likelihood is
//!
//! ```text
//! pl(ξ, α) = Σ_i log Σ_g α_g f(x_i; θ_g) + λ (Σ_g log α_g + G log G)
//! ```
//!
//! From each initial mixing vector `α_t` the statistic runs an
//! `α`-frozen EM to pick `ξ⁽⁰⁾`, then up to `K` full EM updates, and reports
//! `max_t 2 {pl(ξ⁽ᴷ⁾, α⁽ᴷ⁾) − pl(θ̂₀, …, θ̂₀; α₀)}`.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::families::{ComponentDensity, Family, FamilyKind, MleFit, Theta};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sample::Sample;
use crate::special::log_sum_exp;

/// Iteration cap of the `α`-frozen EM used to choose `ξ⁽⁰⁾`.
const INIT_MAX_ITER: usize = 50;

/// Floor applied to random initial mixing proportions before renormalizing.
const INITIAL_ALPHA_FLOOR: f64 = 0.05;

/// Component parameters `ξ = (θ_1..θ_G)` and mixing proportions `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureState {
    pub xi: Vec<Theta>,
    pub alpha: Vec<f64>,
}

impl MixtureState {
    pub fn new(xi: Vec<Theta>, alpha: Vec<f64>) -> Result<Self> {
        let state = Self { xi, alpha };
        state.check_simplex()?;
        Ok(state)
    }

    /// All components equal to `theta`, proportions `alpha`.
    pub fn homogeneous(theta: Theta, alpha: Vec<f64>) -> Self {
        Self {
            xi: vec![theta; alpha.len()],
            alpha,
        }
    }

    pub fn n_components(&self) -> usize {
        self.alpha.len()
    }

    fn check_simplex(&self) -> Result<()> {
        if self.xi.len() != self.alpha.len() {
            return Err(Error::DimensionMismatch {
                expected: self.alpha.len(),
                actual: self.xi.len(),
            });
        }
        check_simplex(&self.alpha)
    }

    pub fn validate(&self, family: &Family) -> Result<()> {
        self.check_simplex()?;
        for th in &self.xi {
            family.check_theta(th)?;
        }
        Ok(())
    }
}

fn check_simplex(alpha: &[f64]) -> Result<()> {
    if alpha.is_empty() {
        return Err(Error::InvalidConfig("empty mixing vector".into()));
    }
    if alpha.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
        return Err(Error::Domain(format!("mixing proportions must be positive: {alpha:?}")));
    }
    let s: f64 = alpha.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("mixing proportions sum to {s}, not 1")));
    }
    Ok(())
}

/// EM-test configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    /// Number of mixture components `G`.
    pub g: usize,
    /// Maximum number of EM updates `K`.
    pub k: usize,
    /// Penalty weight `λ`.
    pub lambda: f64,
    /// Initial mixing vectors; the first is always uniform.
    pub initials: Vec<Vec<f64>>,
    /// Candidate starts for the `α`-frozen initialization.
    pub inner_starts: usize,
    /// Relative penalized log-likelihood improvement below which EM stops.
    pub tol: f64,
    pub seed: u64,
}

impl EmConfig {
    /// Defaults: `K = 100`, `λ = 1e-5`, three initials, three inner starts,
    /// `tol = 1e-8`.
    pub fn new(g: usize, seed: u64) -> Self {
        Self::with_initials(g, 3, seed)
    }

    /// Defaults with `n_initials` mixing vectors: the uniform vector plus
    /// `n_initials − 1` seeded Dirichlet(1, …, 1) draws.
    pub fn with_initials(g: usize, n_initials: usize, seed: u64) -> Self {
        Self {
            g,
            k: 100,
            lambda: 1e-5,
            initials: default_initials(g, n_initials, seed),
            inner_starts: 3,
            tol: 1e-8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.g < 2 {
            return Err(Error::InvalidConfig("G must be at least 2".into()));
        }
        if self.k < 1 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig("lambda must be positive".into()));
        }
        if self.inner_starts < 1 {
            return Err(Error::InvalidConfig("inner_starts must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidConfig("tol must be nonnegative".into()));
        }
        if self.initials.is_empty() {
            return Err(Error::InvalidConfig("at least one initial is required".into()));
        }
        let uniform = vec![1.0 / self.g as f64; self.g];
        let mut has_uniform = false;
        for a in &self.initials {
            if a.len() != self.g {
                return Err(Error::DimensionMismatch {
                    expected: self.g,
                    actual: a.len(),
                });
            }
            check_simplex(a)?;
            if a.iter().any(|v| *v < 1e-4) {
                return Err(Error::InvalidConfig(format!("initial {a:?} has an entry below 1e-4")));
            }
            if a.iter().zip(&uniform).all(|(x, u)| (x - u).abs() < 1e-12) {
                has_uniform = true;
            }
        }
        if !has_uniform {
            return Err(Error::InvalidConfig(
                "the uniform mixing vector must be among the initials".into(),
            ));
        }
        Ok(())
    }

    /// Uniform mixing vector `α₀`.
    pub fn alpha0(&self) -> Vec<f64> {
        vec![1.0 / self.g as f64; self.g]
    }
}

/// The uniform vector followed by `count − 1` Dirichlet(1, …, 1) draws,
/// each floored at 0.05 and renormalized.
pub fn default_initials(g: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut out = vec![vec![1.0 / g as f64; g]];
    let mut rng = rng_from_seed(derive_seed(seed, 0x1a17_1a15));
    let unit = Gamma::new(1.0, 1.0).expect("valid gamma");
    for _ in 1..count.max(1) {
        let draws: Vec<f64> = (0..g).map(|_| unit.sample(&mut rng)).collect();
        let s: f64 = draws.iter().sum();
        let floored: Vec<f64> = draws.iter().map(|d| (d / s).max(INITIAL_ALPHA_FLOOR)).collect();
        let s2: f64 = floored.iter().sum();
        out.push(floored.iter().map(|v| v / s2).collect());
    }
    out
}

/// Per-feature EM-test output.
#[derive(Debug, Clone, PartialEq)]
pub struct EmTestResult {
    /// `EM_n^(K)`.
    pub statistic: f64,
    /// Homogeneous fit `θ̂₀`.
    pub theta0_hat: Theta,
    /// Mixture fit attaining the statistic.
    pub best_state: MixtureState,
    /// `M_n^(K)(α_t)` per initial.
    pub per_initial_stats: Vec<f64>,
    /// Full EM updates performed per initial.
    pub iterations_used: Vec<usize>,
    /// Some fit touched the parameter box, or the column is constant.
    pub boundary_flag: bool,
    /// Constant column; the statistic is 0 by convention.
    pub degenerate: bool,
}

/// Penalty `λ (Σ log α_g + G log G)`; 0 at the uniform vector and `−∞`
/// when some proportion is exactly 0.
pub fn penalty(alpha: &[f64], lambda: f64) -> Result<f64> {
    if alpha.iter().any(|a| !(*a >= 0.0)) {
        return Err(Error::Domain(format!(
            "mixing proportions must be nonnegative: {alpha:?}"
        )));
    }
    if alpha.contains(&0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(penalty_unchecked(alpha, lambda))
}

fn penalty_unchecked(alpha: &[f64], lambda: f64) -> f64 {
    let g = alpha.len() as f64;
    lambda * (alpha.iter().map(|a| a.ln()).sum::<f64>() + g * g.ln())
}

fn validated_sample(family: &Family, xs: &[f64]) -> Result<Sample> {
    for &x in xs {
        family.check_x(x)?;
    }
    Ok(Sample::new(xs))
}

/// `Σ_i log Σ_g α_g f(x_i; θ_g) + p(α)`.
pub fn penalized_loglik(family: &Family, xs: &[f64], state: &MixtureState, lambda: f64) -> Result<f64> {
    state.validate(family)?;
    let sample = validated_sample(family, xs)?;
    Ok(Engine::new(family, &sample, lambda).penalized_loglik(state))
}

/// Posterior membership probabilities, `n × G`.
pub fn e_step(family: &Family, xs: &[f64], state: &MixtureState) -> Result<DMatrix<f64>> {
    state.validate(family)?;
    for &x in xs {
        family.check_x(x)?;
    }
    let g = state.n_components();
    let dens: Vec<ComponentDensity> = state
        .xi
        .iter()
        .map(|th| ComponentDensity::new(family.kind(), th))
        .collect();
    let log_alpha: Vec<f64> = state.alpha.iter().map(|a| a.ln()).collect();
    let mut out = DMatrix::zeros(xs.len(), g);
    let mut row = vec![0.0; g];
    for (i, &x) in xs.iter().enumerate() {
        let lf = if family.kind().is_count() {
            crate::special::ln_gamma(x + 1.0)
        } else {
            0.0
        };
        for c in 0..g {
            row[c] = log_alpha[c] + dens[c].log_pdf(x, lf);
        }
        let lse = log_sum_exp(&row);
        for c in 0..g {
            out[(i, c)] = (row[c] - lse).exp();
        }
    }
    Ok(out)
}

/// Closed-form penalized update `α_g = (Σ_i w_gi + λ) / (n + Gλ)`.
pub fn m_step_alpha(weights: &DMatrix<f64>, lambda: f64) -> Vec<f64> {
    let n = weights.nrows() as f64;
    let col_sums: Vec<f64> = weights.column_iter().map(|c| c.sum()).collect();
    alpha_update(&col_sums, n, lambda)
}

fn alpha_update(col_sums: &[f64], n: f64, lambda: f64) -> Vec<f64> {
    let g = col_sums.len() as f64;
    let denom = n + g * lambda;
    col_sums.iter().map(|s| (s + lambda) / denom).collect()
}

/// Per-component weighted MLE from the columns of `weights`.
pub fn m_step_theta(family: &Family, xs: &[f64], weights: &DMatrix<f64>) -> Result<Vec<MleFit>> {
    if weights.nrows() != xs.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            actual: weights.nrows(),
        });
    }
    weights
        .column_iter()
        .map(|col| {
            let ws: Vec<f64> = col.iter().copied().collect();
            family.weighted_mle(xs, &ws)
        })
        .collect()
}

/// Outcome of an EM run.
#[derive(Debug, Clone, PartialEq)]
pub struct EmRun {
    pub state: MixtureState,
    /// Penalized log-likelihood before the first update and after each one.
    pub trace: Vec<f64>,
    /// Number of updates performed.
    pub iterations: usize,
    pub boundary_flag: bool,
}

impl EmRun {
    pub fn final_loglik(&self) -> f64 {
        *self.trace.last().expect("trace is never empty")
    }
}

/// Run up to `max_iter` EM updates from `state`. With `update_alpha = false`
/// the mixing proportions stay fixed.
pub fn run_em(
    family: &Family,
    xs: &[f64],
    state: &MixtureState,
    lambda: f64,
    max_iter: usize,
    tol: f64,
    update_alpha: bool,
) -> Result<EmRun> {
    state.validate(family)?;
    let sample = validated_sample(family, xs)?;
    Ok(Engine::new(family, &sample, lambda).run(state.clone(), max_iter, tol, update_alpha))
}

/// `ξ⁽⁰⁾` for a fixed `alpha0`: the best of the homogeneous candidate and
/// `cfg.inner_starts` quantile-seeded candidates, each refined by an
/// `α`-frozen EM.
pub fn em_init(family: &Family, xs: &[f64], alpha0: &[f64], cfg: &EmConfig) -> Result<EmRun> {
    check_simplex(alpha0)?;
    if alpha0.len() != cfg.g {
        return Err(Error::DimensionMismatch {
            expected: cfg.g,
            actual: alpha0.len(),
        });
    }
    let sample = validated_sample(family, xs)?;
    if sample.n() == 0 {
        return Err(Error::InvalidConfig("empty sample".into()));
    }
    let engine = Engine::new(family, &sample, cfg.lambda);
    let theta0 = family.fit_sample(&sample, sample.weights());
    Ok(engine.initialize(alpha0, &theta0, cfg, cfg.seed))
}

/// EM-test statistic with the jitter stream derived from `cfg.seed` alone.
pub fn em_test_statistic(family: &Family, xs: &[f64], cfg: &EmConfig) -> Result<EmTestResult> {
    em_test_statistic_stream(family, xs, cfg, 0)
}

/// EM-test statistic for feature stream `stream` (typically the feature
/// index), so that features of one run use independent jitter.
pub fn em_test_statistic_stream(family: &Family, xs: &[f64], cfg: &EmConfig, stream: u64) -> Result<EmTestResult> {
    cfg.validate()?;
    if xs.len() < 2 * cfg.g {
        return Err(Error::InvalidConfig(format!(
            "sample size {} is below 2G = {}",
            xs.len(),
            2 * cfg.g
        )));
    }
    let sample = validated_sample(family, xs)?;
    Ok(em_test_on_sample(family, &sample, cfg, stream))
}

pub(crate) fn em_test_on_sample(family: &Family, sample: &Sample, cfg: &EmConfig, stream: u64) -> EmTestResult {
    let theta0 = family.fit_sample(sample, sample.weights());
    let alpha0 = cfg.alpha0();
    let t = cfg.initials.len();
    if sample.is_constant() {
        return EmTestResult {
            statistic: 0.0,
            theta0_hat: theta0.theta,
            best_state: MixtureState::homogeneous(theta0.theta, alpha0),
            per_initial_stats: vec![0.0; t],
            iterations_used: vec![0; t],
            boundary_flag: true,
            degenerate: true,
        };
    }
    let engine = Engine::new(family, sample, cfg.lambda);
    let null_pl = engine.penalized_loglik(&MixtureState::homogeneous(theta0.theta, alpha0));
    let feature_seed = derive_seed(cfg.seed, stream);

    let mut per_initial = Vec::with_capacity(t);
    let mut iterations = Vec::with_capacity(t);
    let mut boundary = theta0.at_boundary;
    let mut best: Option<(f64, MixtureState)> = None;
    for (ti, alpha_t) in cfg.initials.iter().enumerate() {
        let init = engine.initialize(alpha_t, &theta0, cfg, derive_seed(feature_seed, ti as u64));
        let run = engine.run(init.state, cfg.k, cfg.tol, true);
        let m = 2.0 * (run.final_loglik() - null_pl);
        boundary |= run.boundary_flag;
        iterations.push(run.iterations);
        per_initial.push(m);
        if best.as_ref().is_none_or(|(b, _)| m > *b) {
            best = Some((m, run.state));
        }
    }
    let (statistic, best_state) = best.expect("at least one initial");
    EmTestResult {
        statistic,
        theta0_hat: theta0.theta,
        best_state,
        per_initial_stats: per_initial,
        iterations_used: iterations,
        boundary_flag: boundary,
        degenerate: false,
    }
}

/// EM machinery over a compressed sample.
pub(crate) struct Engine<'a> {
    family: &'a Family,
    sample: &'a Sample,
    lambda: f64,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(family: &'a Family, sample: &'a Sample, lambda: f64) -> Self {
        Self { family, sample, lambda }
    }

    /// Fills `joint` (distinct values × G, row-major) with
    /// `log α_g + log f(x_u; θ_g)` and returns the penalized log-likelihood.
    fn log_joint(&self, state: &MixtureState, joint: &mut Vec<f64>) -> f64 {
        let g = state.n_components();
        let values = self.sample.values();
        let counts = self.sample.weights();
        let lfs = self.sample.log_factorials();
        joint.clear();
        joint.resize(values.len() * g, 0.0);
        for (c, (th, a)) in state.xi.iter().zip(&state.alpha).enumerate() {
            let dens = ComponentDensity::new(self.family.kind(), th);
            let la = a.ln();
            for (u, &x) in values.iter().enumerate() {
                let lf = lfs.get(u).copied().unwrap_or(0.0);
                joint[u * g + c] = la + dens.log_pdf(x, lf);
            }
        }
        let loglik: f64 = joint
            .chunks_exact(g)
            .zip(counts)
            .map(|(row, w)| w * log_sum_exp(row))
            .sum();
        loglik + penalty_unchecked(&state.alpha, self.lambda)
    }

    pub(crate) fn penalized_loglik(&self, state: &MixtureState) -> f64 {
        let mut buf = Vec::new();
        self.log_joint(state, &mut buf)
    }

    /// One EM update given the log-joint matrix of the current state.
    fn update(&self, state: &MixtureState, joint: &[f64], update_alpha: bool) -> (MixtureState, bool) {
        let g = state.n_components();
        let counts = self.sample.weights();
        let n_distinct = counts.len();
        // Column-major posterior weights scaled by multiplicity.
        let mut w = vec![0.0; n_distinct * g];
        for (u, row) in joint.chunks_exact(g).enumerate() {
            let lse = log_sum_exp(row);
            for c in 0..g {
                w[c * n_distinct + u] = counts[u] * (row[c] - lse).exp();
            }
        }
        let alpha = if update_alpha {
            let col_sums: Vec<f64> = w.chunks_exact(n_distinct).map(|c| c.iter().sum()).collect();
            alpha_update(&col_sums, self.sample.n() as f64, self.lambda)
        } else {
            state.alpha.clone()
        };
        let mut boundary = false;
        let xi = state
            .xi
            .iter()
            .zip(w.chunks_exact(n_distinct))
            .map(|(old, wc)| {
                let fit = self.family.fit_sample(self.sample, wc);
                // The negative-binomial size is found numerically; never accept
                // a candidate that lowers the component's expected
                // log-likelihood.
                if self.family.kind() == FamilyKind::NegBin {
                    let q_new = self.family.weighted_loglik(self.sample, wc, &fit.theta);
                    let q_old = self.family.weighted_loglik(self.sample, wc, old);
                    if q_new < q_old {
                        return *old;
                    }
                }
                boundary |= fit.at_boundary && !fit.degenerate;
                fit.theta
            })
            .collect();
        (MixtureState { xi, alpha }, boundary)
    }

    pub(crate) fn run(&self, mut state: MixtureState, max_iter: usize, tol: f64, update_alpha: bool) -> EmRun {
        let mut joint = Vec::new();
        let mut pl = self.log_joint(&state, &mut joint);
        let mut trace = vec![pl];
        let mut boundary = false;
        let mut iterations = 0;
        while iterations < max_iter {
            let (next, hit) = self.update(&state, &joint, update_alpha);
            boundary |= hit;
            let next_pl = self.log_joint(&next, &mut joint);
            iterations += 1;
            state = next;
            trace.push(next_pl);
            let improvement = (next_pl - pl) / pl.abs().max(f64::MIN_POSITIVE);
            pl = next_pl;
            if improvement < tol {
                break;
            }
        }
        EmRun {
            state,
            trace,
            iterations,
            boundary_flag: boundary,
        }
    }

    /// Best `α`-frozen EM candidate for `alpha0`. Candidate 0 is the
    /// homogeneous fit (a fixed point of the frozen EM); candidates
    /// `1..=inner_starts` seed component locations at the quantiles
    /// `g/(G+1)`, jittered from the second seeded start on.
    pub(crate) fn initialize(&self, alpha0: &[f64], theta0: &MleFit, cfg: &EmConfig, seed: u64) -> EmRun {
        let g = alpha0.len();
        let homogeneous = MixtureState::homogeneous(theta0.theta, alpha0.to_vec());
        let pl0 = self.penalized_loglik(&homogeneous);
        let mut best = EmRun {
            state: homogeneous,
            trace: vec![pl0],
            iterations: 0,
            boundary_flag: theta0.at_boundary,
        };
        let mut rng = rng_from_seed(seed);
        let mean = {
            let w = self.sample.weights();
            self.sample.values().iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / self.sample.total_weight()
        };
        for start in 1..=cfg.inner_starts {
            // Draw the jitter unconditionally so the stream does not depend
            // on the data.
            let jitter: Vec<f64> = (0..g).map(|_| rng.random::<f64>() - 0.5).collect();
            let xi: Vec<Theta> = (0..g)
                .map(|c| {
                    let shift = if start == 1 { 0.0 } else { jitter[c] };
                    let q = ((c as f64 + 1.0 + shift) / (g as f64 + 1.0)).clamp(0.0, 1.0);
                    self.seed_component(self.sample.quantile(q), mean, &theta0.theta)
                })
                .collect();
            let state = MixtureState {
                xi,
                alpha: alpha0.to_vec(),
            };
            let run = self.run(state, INIT_MAX_ITER, cfg.tol, false);
            if run.final_loglik() > best.final_loglik() {
                best = run;
            }
        }
        best
    }

    fn seed_component(&self, location: f64, mean: f64, theta0: &Theta) -> Theta {
        let values = match self.family.kind() {
            FamilyKind::Poisson => vec![location.max(0.1 * mean)],
            FamilyKind::NegBin => vec![location.max(0.1 * mean), theta0[1]],
            FamilyKind::Normal => vec![location, theta0[1]],
        };
        self.family.clamp(&values).0
    }
}
