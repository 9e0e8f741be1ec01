//! Benchmark data generators: six negative-binomial scenarios (signal ×
//! noise) and two normal scenarios, with ground-truth labels.
//!
//! Draw order for one dataset, all from a single ChaCha8 stream seeded with
//! the scenario seed:
//! 1. labels `g_1..g_n`;
//! 2. per feature, in index order: the dispersion (`r_j` or `σ_j`), `u_j`,
//!    and `D_j` for relevant features only;
//! 3. matrix entries, row-major (sample by sample).

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, Normal, Poisson, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{FamilyKind, Theta};
use crate::rng::{rng_from_seed, Rng};
use crate::screening::{DataKind, DataMatrix};

/// Number of relevant features in every shipped scenario.
pub const DEFAULT_RELEVANT: usize = 20;
/// Number of clusters in every shipped scenario.
pub const DEFAULT_G: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseId {
    NegBin { signal: Signal, noise: Noise },
    NormalBalanced,
    NormalUnbalanced,
}

impl CaseId {
    /// NB scenarios numbered 1–6: (high, low), (high, high), (medium, low),
    /// (medium, high), (low, low), (low, high) as (signal, noise).
    pub fn nb_case(number: usize) -> Option<CaseId> {
        let (signal, noise) = match number {
            1 => (Signal::High, Noise::Low),
            2 => (Signal::High, Noise::High),
            3 => (Signal::Medium, Noise::Low),
            4 => (Signal::Medium, Noise::High),
            5 => (Signal::Low, Noise::Low),
            6 => (Signal::Low, Noise::High),
            _ => return None,
        };
        Some(CaseId::NegBin { signal, noise })
    }

    pub fn family_kind(self) -> FamilyKind {
        match self {
            CaseId::NegBin { .. } => FamilyKind::NegBin,
            _ => FamilyKind::Normal,
        }
    }

    /// Canonical name, e.g. `nb-med-high` or `normal-balanced`.
    pub fn name(self) -> String {
        match self {
            CaseId::NegBin { signal, noise } => {
                let s = match signal {
                    Signal::Low => "low",
                    Signal::Medium => "med",
                    Signal::High => "high",
                };
                let r = match noise {
                    Noise::Low => "low",
                    Noise::High => "high",
                };
                format!("nb-{s}-{r}")
            }
            CaseId::NormalBalanced => "normal-balanced".into(),
            CaseId::NormalUnbalanced => "normal-unbalanced".into(),
        }
    }

    pub fn all() -> Vec<CaseId> {
        let mut v: Vec<CaseId> = (1..=6).filter_map(CaseId::nb_case).collect();
        v.push(CaseId::NormalBalanced);
        v.push(CaseId::NormalUnbalanced);
        v
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for CaseId {
    type Err = Error;

    /// Accepts canonical names, `case1`..`case6` and `1`..`6`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let digits = t.strip_prefix("case").unwrap_or(&t);
        if let Ok(k) = digits.parse::<usize>() {
            if let Some(c) = CaseId::nb_case(k) {
                return Ok(c);
            }
        }
        CaseId::all()
            .into_iter()
            .find(|c| c.name() == t || c.name().replace("-med-", "-medium-") == t)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown case '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub case: CaseId,
    pub p: usize,
    pub n: usize,
    /// Number of relevant features (the first `s`).
    pub s: usize,
    pub g: usize,
    pub alpha_true: Vec<f64>,
    pub seed: u64,
}

impl SimScenario {
    /// Scenario with the standard `G = 5`, `s = 20` and mixing proportions
    /// (uniform for the balanced normal case, `(0.5, 0.125 × 4)` otherwise).
    pub fn new(case: CaseId, p: usize, n: usize, seed: u64) -> Self {
        let alpha_true = match case {
            CaseId::NormalBalanced => vec![0.2; 5],
            _ => vec![0.5, 0.125, 0.125, 0.125, 0.125],
        };
        Self {
            case,
            p,
            n,
            s: DEFAULT_RELEVANT,
            g: DEFAULT_G,
            alpha_true,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidConfig("n and p must be positive".into()));
        }
        if self.s > self.p {
            return Err(Error::InvalidConfig(format!(
                "relevant count {} exceeds p = {}",
                self.s, self.p
            )));
        }
        if self.alpha_true.len() != self.g {
            return Err(Error::DimensionMismatch {
                expected: self.g,
                actual: self.alpha_true.len(),
            });
        }
        if self.g < 2 || self.s.div_ceil(5) > self.g - 1 {
            return Err(Error::InvalidConfig(format!(
                "{} relevant features need at least {} clusters",
                self.s,
                self.s.div_ceil(5) + 1
            )));
        }
        Ok(())
    }
}

/// Drawn parameters of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthParams {
    /// `means[g][j]` is the mean of feature `j` in cluster `g + 1`.
    pub means: Vec<Vec<f64>>,
    /// `r_j` for negative-binomial scenarios, `σ_j` for normal ones.
    pub dispersion: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub scenario: SimScenario,
    pub data: DataMatrix,
    /// Cluster labels in `1..=G`.
    pub labels: Vec<usize>,
    /// 0-based indices of relevant features, ascending.
    pub relevant: Vec<usize>,
    pub truth: TruthParams,
}

/// 1-based cluster elevated by relevant feature `j` (0-based), i.e. features
/// `5k..5k+4` elevate cluster `k + 2`.
pub fn elevated_cluster(j: usize) -> usize {
    j / 5 + 2
}

fn draw_labels(rng: &mut Rng, alpha: &[f64], n: usize) -> Result<Vec<usize>> {
    let dist =
        WeightedIndex::new(alpha).map_err(|e| Error::InvalidConfig(format!("invalid mixing proportions: {e}")))?;
    Ok((0..n).map(|_| dist.sample(rng) + 1).collect())
}

fn uniform(lo: f64, hi: f64) -> Uniform<f64> {
    Uniform::new(lo, hi).expect("valid uniform range")
}

/// Generate a dataset for any scenario.
pub fn generate(scenario: &SimScenario) -> Result<SimDataset> {
    match scenario.case {
        CaseId::NegBin { .. } => gen_nb_case(scenario),
        _ => gen_normal_case(scenario),
    }
}

/// Negative-binomial scenario: `x_ij ~ NB(μ_{g_i j}, r_j)` drawn as a
/// Gamma–Poisson mixture.
pub fn gen_nb_case(scenario: &SimScenario) -> Result<SimDataset> {
    let CaseId::NegBin { signal, noise } = scenario.case else {
        return Err(Error::InvalidConfig(format!(
            "{} is not a negative-binomial case",
            scenario.case
        )));
    };
    scenario.validate()?;
    let (g, p, n) = (scenario.g, scenario.p, scenario.n);
    let mut rng = rng_from_seed(scenario.seed);
    let labels = draw_labels(&mut rng, &scenario.alpha_true, n)?;

    let r_dist = match noise {
        Noise::Low => uniform(10.0, 11.0),
        Noise::High => uniform(5.0, 6.0),
    };
    let d_dist = match signal {
        Signal::Low => uniform(5.0, 6.0),
        Signal::Medium => uniform(7.0, 8.0),
        Signal::High => uniform(9.0, 10.0),
    };
    let u_dist = uniform(2f64.ln(), 5f64.ln());
    let mut means = vec![vec![0.0; p]; g];
    let mut dispersion = Vec::with_capacity(p);
    for j in 0..p {
        let r = r_dist.sample(&mut rng);
        let base = u_dist.sample(&mut rng).exp();
        dispersion.push(r);
        for row in means.iter_mut() {
            row[j] = base;
        }
        if j < scenario.s {
            let d = d_dist.sample(&mut rng);
            means[elevated_cluster(j) - 1][j] = base + d;
        }
    }

    let gammas: Vec<Vec<Gamma<f64>>> = (0..g)
        .map(|c| {
            (0..p)
                .map(|j| Gamma::new(dispersion[j], means[c][j] / dispersion[j]).expect("positive shape and scale"))
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(n);
    for &label in &labels {
        let row: Vec<f64> = (0..p)
            .map(|j| {
                let lambda = gammas[label - 1][j].sample(&mut rng);
                if lambda > 0.0 {
                    Poisson::new(lambda).expect("positive rate").sample(&mut rng)
                } else {
                    0.0
                }
            })
            .collect();
        rows.push(row);
    }
    Ok(SimDataset {
        scenario: scenario.clone(),
        data: DataMatrix::from_rows(&rows, None, DataKind::Count)?,
        labels,
        relevant: (0..scenario.s).collect(),
        truth: TruthParams { means, dispersion },
    })
}

/// Normal scenario: `x_ij ~ N(μ_{g_i j}, σ_j²)` with `μ = u_j` or
/// `u_j + D_j` on the same block layout as the count scenarios.
pub fn gen_normal_case(scenario: &SimScenario) -> Result<SimDataset> {
    let (sigma_dist, d_dist) = match scenario.case {
        CaseId::NormalBalanced => (uniform(1.0, 1.5), uniform(10.0, 11.0)),
        CaseId::NormalUnbalanced => (uniform(1.0, 2.0), uniform(3.0, 4.0)),
        CaseId::NegBin { .. } => {
            return Err(Error::InvalidConfig(format!("{} is not a normal case", scenario.case)));
        }
    };
    scenario.validate()?;
    let (g, p, n) = (scenario.g, scenario.p, scenario.n);
    let mut rng = rng_from_seed(scenario.seed);
    let labels = draw_labels(&mut rng, &scenario.alpha_true, n)?;
    let u_dist = uniform(-5.0, 5.0);
    let mut means = vec![vec![0.0; p]; g];
    let mut dispersion = Vec::with_capacity(p);
    for j in 0..p {
        let sigma = sigma_dist.sample(&mut rng);
        let base = u_dist.sample(&mut rng);
        dispersion.push(sigma);
        for row in means.iter_mut() {
            row[j] = base;
        }
        if j < scenario.s {
            let d = d_dist.sample(&mut rng);
            means[elevated_cluster(j) - 1][j] = base + d;
        }
    }
    let mut rows = Vec::with_capacity(n);
    for &label in &labels {
        let row: Vec<f64> = (0..p)
            .map(|j| {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                means[label - 1][j] + dispersion[j] * z
            })
            .collect();
        rows.push(row);
    }
    Ok(SimDataset {
        scenario: scenario.clone(),
        data: DataMatrix::from_rows(&rows, None, DataKind::Continuous)?,
        labels,
        relevant: (0..scenario.s).collect(),
        truth: TruthParams { means, dispersion },
    })
}

/// `n × p` matrix of i.i.d. draws from one member of `kind` at `theta`
/// (used for null calibration). Entries are drawn row-major.
pub fn gen_homogeneous(kind: FamilyKind, theta: &Theta, n: usize, p: usize, seed: u64) -> Result<DataMatrix> {
    let mut rng = rng_from_seed(seed);
    let mut rows = Vec::with_capacity(n);
    match kind {
        FamilyKind::Poisson => {
            let d = Poisson::new(theta[0]).map_err(|e| Error::Domain(e.to_string()))?;
            for _ in 0..n {
                rows.push((0..p).map(|_| d.sample(&mut rng)).collect());
            }
        }
        FamilyKind::NegBin => {
            let (mu, r) = (theta[0], theta[1]);
            let gamma = Gamma::new(r, mu / r).map_err(|e| Error::Domain(e.to_string()))?;
            for _ in 0..n {
                rows.push(
                    (0..p)
                        .map(|_| {
                            let lambda = gamma.sample(&mut rng);
                            if lambda > 0.0 {
                                Poisson::new(lambda).expect("positive rate").sample(&mut rng)
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                );
            }
        }
        FamilyKind::Normal => {
            let d = Normal::new(theta[0], theta[1].sqrt()).map_err(|e| Error::Domain(e.to_string()))?;
            for _ in 0..n {
                rows.push((0..p).map(|_| d.sample(&mut rng)).collect());
            }
        }
    }
    let data_kind = if kind.is_count() {
        DataKind::Count
    } else {
        DataKind::Continuous
    };
    DataMatrix::from_rows(&rows, None, data_kind)
}
