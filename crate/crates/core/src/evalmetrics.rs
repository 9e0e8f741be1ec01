//! Screening and clustering quality: minimum model size, retained/false
//! counts, Lloyd's k-means, the Adjusted Rand Index, and the replication
//! harness that ties them to the simulators.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::emtest::EmConfig;
use crate::error::{Error, Result};
use crate::families::Family;
use crate::rng::{derive_seed, rng_from_seed};
use crate::screening::{chisq_gof_screen, screen, DataMatrix, PValueMethod};
use crate::simulate::{generate, SimScenario};

/// Features ordered by decreasing statistic, ties by ascending index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureRanking {
    pub order: Vec<usize>,
}

impl FeatureRanking {
    /// NaN statistics rank last.
    pub fn from_statistics(stats: &[f64]) -> Self {
        let key = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
        let mut order: Vec<usize> = (0..stats.len()).collect();
        order.sort_by(|&a, &b| key(stats[b]).total_cmp(&key(stats[a])).then(a.cmp(&b)));
        Self { order }
    }
}

/// Length of the shortest prefix of `ranking` that contains every relevant
/// feature.
pub fn min_model_size(ranking: &FeatureRanking, relevant: &[usize]) -> Result<usize> {
    if relevant.is_empty() {
        return Err(Error::InvalidConfig("relevant set is empty".into()));
    }
    let mut pos = vec![usize::MAX; ranking.order.len()];
    for (rank, &j) in ranking.order.iter().enumerate() {
        pos[j] = rank;
    }
    relevant
        .iter()
        .map(|&j| {
            pos.get(j)
                .copied()
                .filter(|p| *p != usize::MAX)
                .map(|p| p + 1)
                .ok_or_else(|| Error::InvalidConfig(format!("relevant index {j} is not ranked")))
        })
        .try_fold(0, |acc, r| r.map(|v| acc.max(v)))
}

/// `(|selected ∩ relevant|, |selected \ relevant|)`.
pub fn retained_counts(selected: &[usize], relevant: &[usize]) -> (usize, usize) {
    let r = selected.iter().filter(|j| relevant.contains(j)).count();
    (r, selected.len() - r)
}

/// A hard partition with labels in `1..=G`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOptions {
    pub g: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    /// Scale every column to unit variance before clustering.
    pub standardize: bool,
}

impl KMeansOptions {
    pub fn new(g: usize, seed: u64) -> Self {
        Self {
            g,
            seed,
            restarts: 10,
            max_iter: 100,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub clustering: Clustering,
    /// Within-cluster sum of squares of the returned partition.
    pub objective: f64,
    /// Objective after each assignment step of the winning restart.
    pub trace: Vec<f64>,
}

/// Lloyd's k-means with k-means++ seeding; best of `restarts` by objective.
pub fn kmeans(points: &[Vec<f64>], g: usize, seed: u64, restarts: usize) -> Result<Clustering> {
    let opts = KMeansOptions {
        restarts,
        ..KMeansOptions::new(g, seed)
    };
    kmeans_with(points, &opts).map(|r| r.clustering)
}

pub fn kmeans_with(points: &[Vec<f64>], opts: &KMeansOptions) -> Result<KMeansResult> {
    let n = points.len();
    let q = points.first().map_or(0, Vec::len);
    if q == 0 {
        return Err(Error::InvalidConfig("k-means needs at least one column".into()));
    }
    if opts.g == 0 || n < opts.g {
        return Err(Error::InvalidConfig(format!(
            "k-means needs 1 ≤ G ≤ n, got G = {} with n = {n}",
            opts.g
        )));
    }
    if points.iter().any(|p| p.len() != q) {
        return Err(Error::DimensionMismatch {
            expected: q,
            actual: points.iter().map(Vec::len).find(|l| *l != q).unwrap_or(q),
        });
    }
    let mut flat: Vec<f64> = points.iter().flatten().copied().collect();
    if opts.standardize {
        for c in 0..q {
            let mean = (0..n).map(|i| flat[i * q + c]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (flat[i * q + c] - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for i in 0..n {
                flat[i * q + c] = (flat[i * q + c] - mean) / sd;
            }
        }
    }
    let data = Points { flat, n, q };
    let mut best: Option<KMeansResult> = None;
    for restart in 0..opts.restarts.max(1) {
        let res = lloyd(&data, opts.g, derive_seed(opts.seed, restart as u64), opts.max_iter);
        if best.as_ref().is_none_or(|b| res.objective < b.objective) {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one restart"))
}

struct Points {
    flat: Vec<f64>,
    n: usize,
    q: usize,
}

impl Points {
    fn row(&self, i: usize) -> &[f64] {
        &self.flat[i * self.q..(i + 1) * self.q]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lloyd(data: &Points, g: usize, seed: u64, max_iter: usize) -> KMeansResult {
    let (n, q) = (data.n, data.q);
    let mut rng = rng_from_seed(seed);

    // k-means++ seeding.
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(g);
    centers.push(data.row(rng.random_range(0..n)).to_vec());
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), &centers[0])).collect();
    while centers.len() < g {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(data.row(pick).to_vec());
        let c = centers.last().expect("just pushed");
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), c));
        }
    }

    let mut assign = vec![usize::MAX; n];
    let mut dist = vec![0.0; n];
    let mut trace = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for i in 0..n {
            let row = data.row(i);
            let (mut bk, mut bd) = (0, f64::INFINITY);
            for (k, c) in centers.iter().enumerate() {
                let d = sq_dist(row, c);
                if d < bd {
                    bk = k;
                    bd = d;
                }
            }
            if assign[i] != bk {
                changed = true;
                assign[i] = bk;
            }
            dist[i] = bd;
        }
        // Re-seed empty clusters at the point farthest from its center.
        let mut sizes = vec![0usize; g];
        for &a in &assign {
            sizes[a] += 1;
        }
        for k in 0..g {
            if sizes[k] == 0 {
                let far = (0..n)
                    .filter(|&i| sizes[assign[i]] > 1)
                    .fold(None, |acc: Option<usize>, i| match acc {
                        Some(b) if dist[b] >= dist[i] => Some(b),
                        _ => Some(i),
                    });
                if let Some(i) = far {
                    sizes[assign[i]] -= 1;
                    assign[i] = k;
                    sizes[k] = 1;
                    dist[i] = 0.0;
                    centers[k] = data.row(i).to_vec();
                    changed = true;
                }
            }
        }
        trace.push(dist.iter().sum());
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; q]; g];
        for i in 0..n {
            for (s, v) in sums[assign[i]].iter_mut().zip(data.row(i)) {
                *s += v;
            }
        }
        for k in 0..g {
            if sizes[k] > 0 {
                for s in sums[k].iter_mut() {
                    *s /= sizes[k] as f64;
                }
                centers[k] = std::mem::take(&mut sums[k]);
            }
        }
    }
    let objective = (0..n).map(|i| sq_dist(data.row(i), &centers[assign[i]])).sum();
    KMeansResult {
        clustering: Clustering {
            labels: assign.into_iter().map(|a| a + 1).collect(),
        },
        objective,
        trace,
    }
}

fn choose2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Hubert–Arabie Adjusted Rand Index. The denominator only vanishes when both
/// partitions are the same trivial one (one cluster, or all singletons), which scores 1.
pub fn ari(a: &Clustering, b: &Clustering) -> Result<f64> {
    if a.labels.len() != b.labels.len() {
        return Err(Error::DimensionMismatch {
            expected: a.labels.len(),
            actual: b.labels.len(),
        });
    }
    let n = a.labels.len() as f64;
    let mut table: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, f64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.labels.iter().zip(&b.labels) {
        *table.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    let expected = if total > 0.0 { sum_a * sum_b / total } else { 0.0 };
    let max = 0.5 * (sum_a + sum_b);
    let denom = max - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

/// Options for [`bench_case`].
#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub vartheta: f64,
    pub fdr: f64,
    pub reps: usize,
    pub pvalue_method: PValueMethod,
    pub kmeans_restarts: usize,
    pub standardize: bool,
    /// Also run the chi-square goodness-of-fit baseline.
    pub chisq_baseline: bool,
}

impl BenchOptions {
    pub fn new(reps: usize) -> Self {
        Self {
            vartheta: 0.35,
            fdr: 0.01,
            reps,
            pvalue_method: PValueMethod::ChiSq,
            kmeans_restarts: 10,
            standardize: false,
            chisq_baseline: true,
        }
    }
}

/// Scores of one method in one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodScore {
    pub method: String,
    /// Correctly retained; absent for methods without a selection step.
    pub r: Option<usize>,
    pub f: Option<usize>,
    pub ari: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepResult {
    pub rep: usize,
    pub seed: u64,
    /// Minimum model size of the EM-test ranking.
    pub s: usize,
    pub methods: Vec<MethodScore>,
}

/// One summary cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub metric: String,
    pub method: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSummary {
    pub case: String,
    pub n: usize,
    pub p: usize,
    pub reps: usize,
    pub per_rep: Vec<RepResult>,
    pub rows: Vec<SummaryRow>,
}

impl BenchSummary {
    /// Mean of `metric` for `method`, if present.
    pub fn mean(&self, metric: &str, method: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.method == method)
            .map(|r| r.mean)
    }
}

pub const METHOD_NO_SCREENING: &str = "No-Screening";
pub const METHOD_ORACLE: &str = "Oracle";
pub const METHOD_EM_ADJUST: &str = "EM-adjust";
pub const METHOD_CHISQ: &str = "Chi-square";

/// Name of the threshold rule, e.g. `EM-0.35`.
pub fn em_threshold_method(vartheta: f64) -> String {
    format!("EM-{vartheta}")
}

fn cluster_ari(
    data: &DataMatrix,
    cols: &[usize],
    truth: &Clustering,
    g: usize,
    seed: u64,
    opts: &BenchOptions,
) -> Result<f64> {
    if cols.is_empty() {
        return ari(
            &Clustering {
                labels: vec![1; truth.labels.len()],
            },
            truth,
        );
    }
    let points = data.select_columns(cols).to_rows();
    let km = kmeans_with(
        &points,
        &KMeansOptions {
            restarts: opts.kmeans_restarts,
            standardize: opts.standardize,
            ..KMeansOptions::new(g, seed)
        },
    )?;
    ari(&km.clustering, truth)
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Run `opts.reps` replications of `scenario`: simulate, screen, score the
/// rankings and selections, and cluster on each selection.
///
/// Replication `k` uses seed `derive_seed(scenario.seed, k)` for the data,
/// the EM jitter and k-means, so the summary is deterministic.
pub fn bench_case(scenario: &SimScenario, cfg: &EmConfig, opts: &BenchOptions) -> Result<BenchSummary> {
    if opts.reps == 0 {
        return Err(Error::InvalidConfig("reps must be at least 1".into()));
    }
    let family = Family::new(scenario.case.family_kind());
    let em_rule = em_threshold_method(opts.vartheta);
    let per_rep: Vec<RepResult> = (0..opts.reps)
        .into_par_iter()
        .map(|rep| -> Result<RepResult> {
            let seed = derive_seed(scenario.seed, rep as u64);
            let sc = SimScenario {
                seed,
                ..scenario.clone()
            };
            let ds = generate(&sc)?;
            let rep_cfg = EmConfig { seed, ..cfg.clone() };
            let report = screen(&ds.data, &family, &rep_cfg, opts.vartheta, opts.fdr, opts.pvalue_method)?;
            let ranking = FeatureRanking::from_statistics(&report.statistics());
            let s = min_model_size(&ranking, &ds.relevant)?;
            let truth = Clustering {
                labels: ds.labels.clone(),
            };
            let all: Vec<usize> = (0..ds.data.p()).collect();
            let mut selections: Vec<(String, Option<Vec<usize>>, Vec<usize>)> = vec![
                (METHOD_NO_SCREENING.into(), None, all),
                (METHOD_ORACLE.into(), None, ds.relevant.clone()),
                (
                    em_rule.clone(),
                    Some(report.selected_threshold.clone()),
                    report.selected_threshold.clone(),
                ),
                (
                    METHOD_EM_ADJUST.into(),
                    Some(report.selected_fdr.clone()),
                    report.selected_fdr.clone(),
                ),
            ];
            if opts.chisq_baseline {
                let gof = chisq_gof_screen(&ds.data, &family, opts.fdr)?;
                selections.push((METHOD_CHISQ.into(), Some(gof.selected_fdr.clone()), gof.selected_fdr));
            }
            let methods = selections
                .into_iter()
                .enumerate()
                .map(|(k, (method, selected, cols))| {
                    let a = cluster_ari(
                        &ds.data,
                        &cols,
                        &truth,
                        sc.g,
                        derive_seed(seed, 0x6b6d_0000 + k as u64),
                        opts,
                    )?;
                    let (r, f) = match selected {
                        Some(sel) => {
                            let (r, f) = retained_counts(&sel, &ds.relevant);
                            (Some(r), Some(f))
                        }
                        None => (None, None),
                    };
                    Ok(MethodScore { method, r, f, ari: a })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RepResult { rep, seed, s, methods })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let s_vals: Vec<f64> = per_rep.iter().map(|r| r.s as f64).collect();
    let (m, sd) = mean_sd(&s_vals);
    rows.push(SummaryRow {
        metric: "S".into(),
        method: "EM".into(),
        mean: m,
        sd,
    });
    let names: Vec<String> = per_rep[0].methods.iter().map(|m| m.method.clone()).collect();
    for metric in ["R", "F", "ARI"] {
        for (k, name) in names.iter().enumerate() {
            let vals: Option<Vec<f64>> = per_rep
                .iter()
                .map(|r| {
                    let ms = &r.methods[k];
                    match metric {
                        "R" => ms.r.map(|v| v as f64),
                        "F" => ms.f.map(|v| v as f64),
                        _ => Some(ms.ari),
                    }
                })
                .collect();
            if let Some(vals) = vals {
                let (mean, sd) = mean_sd(&vals);
                rows.push(SummaryRow {
                    metric: metric.into(),
                    method: name.clone(),
                    mean,
                    sd,
                });
            }
        }
    }
    Ok(BenchSummary {
        case: scenario.case.name(),
        n: scenario.n,
        p: scenario.p,
        reps: opts.reps,
        per_rep,
        rows,
    })
}
