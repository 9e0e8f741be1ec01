//! Feature screening over an `n × p` data matrix.
//!
//! Every feature is tested independently with the EM-test; features are then
//! selected by the hard threshold `statistic ≥ n^ϑ` and, separately, by
//! BH-adjusted p-values below an FDR level. A Pearson chi-square
//! goodness-of-fit screen is provided as a baseline.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{b_matrices_on_sample, pvalue_chisq, pvalue_montecarlo, sample_limit_dist};
use crate::emtest::{em_test_on_sample, EmConfig};
use crate::error::{Error, Result};
use crate::families::{Family, FamilyKind};
use crate::rng::{derive_seed, stream_rng};
use crate::sample::Sample;

/// Stream tag for the per-feature limiting-law sample.
const MC_STREAM: u64 = 0x6d63_5f6c_696d_6974;

/// Whether the matrix holds counts or real values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Count,
    Continuous,
}

/// Samples-by-features matrix, stored column-major so that each feature is
/// a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Vec<f64>,
    n: usize,
    p: usize,
    feature_names: Option<Vec<String>>,
    kind: DataKind,
}

impl DataMatrix {
    /// Build from feature columns, each of length `n`.
    pub fn from_columns(columns: Vec<Vec<f64>>, feature_names: Option<Vec<String>>, kind: DataKind) -> Result<Self> {
        let p = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n * p);
        for col in &columns {
            if col.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: col.len(),
                });
            }
            values.extend_from_slice(col);
        }
        Self::from_parts(values, n, p, feature_names, kind)
    }

    /// Build from sample rows, each of length `p`.
    pub fn from_rows(rows: &[Vec<f64>], feature_names: Option<Vec<String>>, kind: DataKind) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        for row in rows {
            if row.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    actual: row.len(),
                });
            }
        }
        let mut values = vec![0.0; n * p];
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                values[j * n + i] = *v;
            }
        }
        Self::from_parts(values, n, p, feature_names, kind)
    }

    fn from_parts(
        values: Vec<f64>,
        n: usize,
        p: usize,
        feature_names: Option<Vec<String>>,
        kind: DataKind,
    ) -> Result<Self> {
        if let Some(names) = &feature_names {
            if names.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    actual: names.len(),
                });
            }
        }
        let m = Self {
            values,
            n,
            p,
            feature_names,
            kind,
        };
        for j in 0..p {
            for (i, &x) in m.column(j).iter().enumerate() {
                let bad = match kind {
                    DataKind::Count => !(x >= 0.0 && x.is_finite() && x.fract() == 0.0),
                    DataKind::Continuous => !x.is_finite(),
                };
                if bad {
                    return Err(m.cell_error(i, j, format!("{x} is not a valid {kind:?} value").to_lowercase()));
                }
            }
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn kind(&self) -> DataKind {
        self.kind
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.n..(j + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.n + i]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.p).map(|j| self.get(i, j)).collect()
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Name of feature `j`, defaulting to `f{j+1}`.
    pub fn feature_name(&self, j: usize) -> String {
        match &self.feature_names {
            Some(names) => names[j].clone(),
            None => format!("f{}", j + 1),
        }
    }

    /// Sub-matrix with the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> DataMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.p);
        for j in 0..self.p {
            let col = self.column(j);
            values.extend(rows.iter().map(|&i| col[i]));
        }
        DataMatrix {
            values,
            n: rows.len(),
            p: self.p,
            feature_names: self.feature_names.clone(),
            kind: self.kind,
        }
    }

    /// Sub-matrix with the given features, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> DataMatrix {
        let mut values = Vec::with_capacity(self.n * cols.len());
        for &j in cols {
            values.extend_from_slice(self.column(j));
        }
        DataMatrix {
            values,
            n: self.n,
            p: cols.len(),
            feature_names: self
                .feature_names
                .as_ref()
                .map(|names| cols.iter().map(|&j| names[j].clone()).collect()),
            kind: self.kind,
        }
    }

    /// Row-major copy of the values.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i)).collect()
    }

    /// Check every cell against the family's support.
    pub fn validate_for(&self, family: &Family) -> Result<()> {
        for j in 0..self.p {
            for (i, &x) in self.column(j).iter().enumerate() {
                if let Err(e) = family.check_x(x) {
                    return Err(self.cell_error(i, j, e.to_string()));
                }
            }
        }
        Ok(())
    }

    fn cell_error(&self, i: usize, j: usize, msg: String) -> Error {
        Error::InvalidCell {
            row: i + 1,
            column: self.feature_name(j),
            msg,
        }
    }
}

/// How per-feature p-values are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PValueMethod {
    /// χ²(d(d+1)/2) bound.
    ChiSq,
    /// Monte-Carlo sample of the limiting law with `n_mc` draws per feature.
    MonteCarlo { n_mc: usize },
}

/// Which screen produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScreenMethod {
    EmTest,
    ChiSquareGof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureResult {
    /// 0-based feature index.
    pub index: usize,
    pub name: String,
    pub statistic: f64,
    pub pvalue: f64,
    pub pvalue_adjusted: f64,
    /// Some fit touched the parameter box, or the column was degenerate.
    pub boundary_flag: bool,
    pub degenerate: bool,
}

/// EM settings echoed into a report.
#[derive(Debug, Clone, PartialEq)]
pub struct EmSettings {
    pub g: usize,
    pub k: usize,
    pub lambda: f64,
    pub n_initials: usize,
    pub inner_starts: usize,
    pub tol: f64,
    pub vartheta: f64,
    pub pvalue_method: PValueMethod,
    pub seed: u64,
    pub n_batches: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenReport {
    pub method: ScreenMethod,
    pub family: FamilyKind,
    pub fdr: f64,
    /// `t_n = n^ϑ`; absent for the goodness-of-fit screen.
    pub threshold: Option<f64>,
    pub em: Option<EmSettings>,
    pub features: Vec<FeatureResult>,
    /// Indices with `statistic ≥ t_n`, ascending.
    pub selected_threshold: Vec<usize>,
    /// Indices with `pvalue_adjusted < fdr`, ascending.
    pub selected_fdr: Vec<usize>,
}

impl ScreenReport {
    pub fn statistics(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.statistic).collect()
    }
}

/// `n^ϑ`.
pub fn threshold(n: usize, vartheta: f64) -> f64 {
    (n as f64).powf(vartheta)
}

fn check_levels(vartheta: Option<f64>, fdr: f64) -> Result<()> {
    if let Some(v) = vartheta {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::InvalidConfig(format!("vartheta must lie in (0, 1), got {v}")));
        }
    }
    if !(fdr > 0.0 && fdr < 1.0) {
        return Err(Error::InvalidConfig(format!("fdr must lie in (0, 1), got {fdr}")));
    }
    Ok(())
}

fn check_method(family: &Family, method: PValueMethod) -> Result<()> {
    if let PValueMethod::MonteCarlo { n_mc } = method {
        if family.kind() == FamilyKind::Normal {
            return Err(Error::InvalidConfig(
                "the Monte-Carlo p-value is not available for the normal family; use chisq".into(),
            ));
        }
        if n_mc < 1000 {
            return Err(Error::InvalidConfig(format!("n_mc must be at least 1000, got {n_mc}")));
        }
    }
    Ok(())
}

struct FeatureTest {
    statistic: f64,
    pvalue: f64,
    boundary: bool,
    degenerate: bool,
}

fn test_feature(family: &Family, xs: &[f64], cfg: &EmConfig, method: PValueMethod, stream: u64) -> FeatureTest {
    let sample = Sample::new(xs);
    let res = em_test_on_sample(family, &sample, cfg, stream);
    if res.degenerate {
        return FeatureTest {
            statistic: 0.0,
            pvalue: 1.0,
            boundary: true,
            degenerate: true,
        };
    }
    let stat = res.statistic.max(0.0);
    let d = family.dim();
    let pvalue = match method {
        PValueMethod::ChiSq => pvalue_chisq(stat, d * (d + 1) / 2),
        PValueMethod::MonteCarlo { n_mc } => {
            let b = b_matrices_on_sample(family, &res.theta0_hat, &sample);
            let r = (cfg.g - 1).min(d);
            let seed = derive_seed(derive_seed(cfg.seed, stream), MC_STREAM);
            match sample_limit_dist(&b.b22_tilde, r, n_mc, seed) {
                Ok(limit) => pvalue_montecarlo(stat, &limit),
                Err(_) => pvalue_chisq(stat, d * (d + 1) / 2),
            }
        }
    };
    FeatureTest {
        statistic: stat,
        pvalue,
        boundary: res.boundary_flag,
        degenerate: false,
    }
}

/// EM-test screen of every feature.
///
/// Features are processed in parallel on the current rayon pool; each uses
/// an RNG stream derived from `(cfg.seed, feature index)`, so results do not
/// depend on scheduling or thread count. Constant columns get statistic 0,
/// p-value 1 and both flags set.
pub fn screen(
    data: &DataMatrix,
    family: &Family,
    cfg: &EmConfig,
    vartheta: f64,
    fdr: f64,
    method: PValueMethod,
) -> Result<ScreenReport> {
    let all: Vec<usize> = vec![0; data.n()];
    screen_batched(data, &all, family, cfg, vartheta, fdr, method)
}

/// EM-test screen where samples belong to batches (`batch[i]` is any label).
///
/// Each feature is tested within every batch. The reported statistic is the
/// largest per-batch statistic and is compared with `t_n` for the smallest
/// batch size; p-values are Bonferroni-combined across batches
/// ([`combine_batches`]) before BH adjustment. With one batch this is the
/// plain screen.
pub fn screen_batched(
    data: &DataMatrix,
    batch: &[usize],
    family: &Family,
    cfg: &EmConfig,
    vartheta: f64,
    fdr: f64,
    method: PValueMethod,
) -> Result<ScreenReport> {
    check_levels(Some(vartheta), fdr)?;
    cfg.validate()?;
    check_method(family, method)?;
    if batch.len() != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            actual: batch.len(),
        });
    }
    let mut labels: Vec<usize> = batch.to_vec();
    labels.sort_unstable();
    labels.dedup();
    let groups: Vec<Vec<usize>> = labels
        .iter()
        .map(|l| (0..data.n()).filter(|&i| batch[i] == *l).collect())
        .collect();
    let n_min = groups.iter().map(Vec::len).min().unwrap_or(0);
    if n_min < 2 * cfg.g {
        return Err(Error::InvalidConfig(format!(
            "sample size {} is below 2G = {}",
            n_min,
            2 * cfg.g
        )));
    }
    data.validate_for(family)?;

    let single = groups.len() == 1;
    let tests: Vec<Vec<FeatureTest>> = (0..data.p())
        .into_par_iter()
        .map(|j| {
            let col = data.column(j);
            groups
                .iter()
                .map(|rows| {
                    if single {
                        test_feature(family, col, cfg, method, j as u64)
                    } else {
                        let xs: Vec<f64> = rows.iter().map(|&i| col[i]).collect();
                        test_feature(family, &xs, cfg, method, j as u64)
                    }
                })
                .collect()
        })
        .collect();

    let pmat: Vec<Vec<f64>> = (0..groups.len())
        .map(|b| tests.iter().map(|t| t[b].pvalue).collect())
        .collect();
    let pvalues = combine_batches(&pmat)?;
    let adjusted = bh_adjust(&pvalues)?;
    let t_n = threshold(n_min, vartheta);

    let features: Vec<FeatureResult> = tests
        .iter()
        .enumerate()
        .map(|(j, t)| FeatureResult {
            index: j,
            name: data.feature_name(j),
            statistic: t.iter().map(|x| x.statistic).fold(0.0, f64::max),
            pvalue: pvalues[j],
            pvalue_adjusted: adjusted[j],
            boundary_flag: t.iter().any(|x| x.boundary),
            degenerate: t.iter().all(|x| x.degenerate),
        })
        .collect();
    let selected_threshold = features
        .iter()
        .filter(|f| f.statistic >= t_n)
        .map(|f| f.index)
        .collect();
    let selected_fdr = features
        .iter()
        .filter(|f| f.pvalue_adjusted < fdr)
        .map(|f| f.index)
        .collect();
    Ok(ScreenReport {
        method: ScreenMethod::EmTest,
        family: family.kind(),
        fdr,
        threshold: Some(t_n),
        em: Some(EmSettings {
            g: cfg.g,
            k: cfg.k,
            lambda: cfg.lambda,
            n_initials: cfg.initials.len(),
            inner_starts: cfg.inner_starts,
            tol: cfg.tol,
            vartheta,
            pvalue_method: method,
            seed: cfg.seed,
            n_batches: groups.len(),
        }),
        features,
        selected_threshold,
        selected_fdr,
    })
}

/// Benjamini–Hochberg step-up adjusted p-values, in input order.
pub fn bh_adjust(pvalues: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = pvalues.iter().find(|p| !(**p >= 0.0 && **p <= 1.0)) {
        return Err(Error::Domain(format!("p-value {bad} outside [0, 1]")));
    }
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        let q = (pvalues[i] * m as f64 / (rank + 1) as f64).min(1.0);
        running = running.min(q);
        adjusted[i] = running;
    }
    Ok(adjusted)
}

/// Bonferroni-type combination `min(1, B · min_b p_b)` of a `B × p` matrix
/// of p-values (one row per batch).
pub fn combine_batches(pvalue_matrix: &[Vec<f64>]) -> Result<Vec<f64>> {
    let b = pvalue_matrix.len();
    if b == 0 {
        return Err(Error::InvalidConfig("at least one batch is required".into()));
    }
    let p = pvalue_matrix[0].len();
    if let Some(row) = pvalue_matrix.iter().find(|r| r.len() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            actual: row.len(),
        });
    }
    if b == 1 {
        return Ok(pvalue_matrix[0].clone());
    }
    Ok((0..p)
        .map(|j| {
            let min = pvalue_matrix.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
            (b as f64 * min).min(1.0)
        })
        .collect())
}

/// Pearson chi-square goodness-of-fit statistic and p-value for one feature
/// against the fitted homogeneous model, using quartile bins.
///
/// Bins are `(-∞, q1], (q1, q2], (q2, q3], (q3, ∞)` at the type-7 sample
/// quartiles, with repeated edges collapsed. Bins whose expected count is
/// below 5 are merged into their right neighbour (the last bin into its left
/// neighbour). Degrees of freedom are `max(bins − 1 − d, 1)`.
pub fn gof_test(family: &Family, xs: &[f64]) -> Result<(f64, f64, bool)> {
    for &x in xs {
        family.check_x(x)?;
    }
    let sample = Sample::new(xs);
    if sample.is_constant() {
        return Ok((0.0, 1.0, true));
    }
    let fit = family.fit_sample(&sample, sample.weights());
    let theta = fit.theta;
    let n = sample.total_weight();
    let mut edges: Vec<f64> = [0.25, 0.5, 0.75].iter().map(|&q| sample.quantile(q)).collect();
    edges.dedup();
    let mut cdf_at: Vec<f64> = edges.iter().map(|&e| family.cdf(&theta, e)).collect();
    cdf_at.push(1.0);
    let mut observed = vec![0.0; cdf_at.len()];
    for (&x, &w) in sample.values().iter().zip(sample.weights()) {
        let k = edges.partition_point(|&e| e < x);
        observed[k] += w;
    }
    let mut expected = Vec::with_capacity(cdf_at.len());
    let mut prev = 0.0;
    for &c in &cdf_at {
        expected.push(n * (c - prev).max(0.0));
        prev = c;
    }

    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut carry = (0.0, 0.0);
    for (o, e) in observed.into_iter().zip(expected) {
        carry.0 += o;
        carry.1 += e;
        if carry.1 >= 5.0 {
            bins.push(carry);
            carry = (0.0, 0.0);
        }
    }
    if carry.0 > 0.0 || carry.1 > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += carry.0;
                last.1 += carry.1;
            }
            None => bins.push(carry),
        }
    }
    let x2: f64 = bins
        .iter()
        .map(|&(o, e)| if e > 0.0 { (o - e).powi(2) / e } else { 0.0 })
        .sum();
    let df = (bins.len() as i64 - 1 - family.dim() as i64).max(1) as usize;
    Ok((x2, pvalue_chisq(x2, df), fit.at_boundary))
}

/// Chi-square goodness-of-fit screen: features whose BH-adjusted GOF p-value
/// is below `fdr` are retained (poor fit to one homogeneous component).
pub fn chisq_gof_screen(data: &DataMatrix, family: &Family, fdr: f64) -> Result<ScreenReport> {
    check_levels(None, fdr)?;
    if data.n() < 40 {
        return Err(Error::InvalidConfig(format!(
            "the goodness-of-fit screen needs n ≥ 40, got {}",
            data.n()
        )));
    }
    data.validate_for(family)?;
    let tests: Vec<(f64, f64, bool, bool)> = (0..data.p())
        .into_par_iter()
        .map(|j| {
            let col = data.column(j);
            if Sample::new(col).is_constant() {
                (0.0, 1.0, true, true)
            } else {
                let (x2, p, b) = gof_test(family, col).expect("validated input");
                (x2, p, b, false)
            }
        })
        .collect();
    let pvalues: Vec<f64> = tests.iter().map(|t| t.1).collect();
    let adjusted = bh_adjust(&pvalues)?;
    let features: Vec<FeatureResult> = tests
        .iter()
        .enumerate()
        .map(|(j, t)| FeatureResult {
            index: j,
            name: data.feature_name(j),
            statistic: t.0,
            pvalue: t.1,
            pvalue_adjusted: adjusted[j],
            boundary_flag: t.2,
            degenerate: t.3,
        })
        .collect();
    let selected_fdr = features
        .iter()
        .filter(|f| f.pvalue_adjusted < fdr)
        .map(|f| f.index)
        .collect();
    Ok(ScreenReport {
        method: ScreenMethod::ChiSquareGof,
        family: family.kind(),
        fdr,
        threshold: None,
        em: None,
        features,
        selected_threshold: Vec::new(),
        selected_fdr,
    })
}

/// Thin every sample (row) of a count matrix to exactly `target` total
/// counts by drawing units uniformly without replacement.
///
/// Row `i` uses RNG stream `i` of `seed`. Rows whose total is below `target`
/// are rejected together, with their 0-based indices.
pub fn downsample_counts(data: &DataMatrix, target: u64, seed: u64) -> Result<DataMatrix> {
    if data.kind() != DataKind::Count {
        return Err(Error::InvalidConfig("down-sampling requires a count matrix".into()));
    }
    let totals: Vec<u64> = (0..data.n())
        .map(|i| (0..data.p()).map(|j| data.get(i, j) as u64).sum())
        .collect();
    let short: Vec<usize> = (0..data.n()).filter(|&i| totals[i] < target).collect();
    if !short.is_empty() {
        return Err(Error::InsufficientDepth { target, rows: short });
    }
    let rows: Vec<Vec<f64>> = (0..data.n())
        .map(|i| {
            let row = data.row(i);
            if totals[i] == target {
                return row;
            }
            let mut rng = stream_rng(seed, i as u64);
            let mut picks: Vec<usize> = index::sample(&mut rng, totals[i] as usize, target as usize).into_vec();
            picks.sort_unstable();
            let mut out = vec![0.0; row.len()];
            let mut upper = 0usize;
            let mut cursor = 0usize;
            for (j, &x) in row.iter().enumerate() {
                upper += x as usize;
                let start = cursor;
                while cursor < picks.len() && picks[cursor] < upper {
                    cursor += 1;
                }
                out[j] = (cursor - start) as f64;
            }
            out
        })
        .collect();
    DataMatrix::from_rows(&rows, data.feature_names().map(<[String]>::to_vec), DataKind::Count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn bh_examples() {
        assert!(close(&bh_adjust(&[0.01, 0.02, 0.03]).unwrap(), &[0.03, 0.03, 0.03]));
        assert!(close(&bh_adjust(&[1.0; 4]).unwrap(), &[1.0; 4]));
        assert!(close(
            &bh_adjust(&[0.001, 0.8, 0.9, 1.0]).unwrap(),
            &[0.004, 1.0, 1.0, 1.0]
        ));
        assert!(bh_adjust(&[0.5, 1.5]).is_err());
        assert!(bh_adjust(&[f64::NAN]).is_err());
    }

    #[test]
    fn combine_examples() {
        let one = vec![vec![0.2, 0.7]];
        assert_eq!(combine_batches(&one).unwrap(), vec![0.2, 0.7]);
        let three = vec![vec![0.001, 0.5], vec![0.3, 0.9], vec![0.2, 0.6]];
        assert!(close(&combine_batches(&three).unwrap(), &[0.003, 1.0]));
    }

    #[test]
    fn threshold_arithmetic() {
        assert!((threshold(1000, 0.35) - 11.220184543019636).abs() < 1e-12);
    }

    #[test]
    fn matrix_layout_and_names() {
        let m = DataMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], None, DataKind::Count).unwrap();
        assert_eq!(m.column(0), &[1.0, 3.0]);
        assert_eq!(m.row(1), vec![3.0, 4.0]);
        assert_eq!(m.feature_name(1), "f2");
        let sub = m.select_columns(&[1]);
        assert_eq!(sub.column(0), &[2.0, 4.0]);
        assert!(DataMatrix::from_rows(&[vec![1.5]], None, DataKind::Count).is_err());
        assert!(DataMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]], None, DataKind::Count).is_err());
    }

    #[test]
    fn negative_count_reports_coordinates() {
        let m = DataMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], None, DataKind::Continuous).unwrap();
        let m2 = DataMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0]], None, DataKind::Continuous).unwrap();
        assert!(m.validate_for(&Family::negbin()).is_ok());
        match m2.validate_for(&Family::negbin()) {
            Err(Error::InvalidCell { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "f2");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn all_constant_matrix_selects_nothing() {
        let cols = vec![vec![2.0; 30], vec![0.0; 30], vec![7.0; 30]];
        let data = DataMatrix::from_columns(cols, None, DataKind::Count).unwrap();
        let cfg = EmConfig::new(3, 5);
        let rep = screen(&data, &Family::poisson(), &cfg, 0.35, 0.01, PValueMethod::ChiSq).unwrap();
        assert!(rep.selected_threshold.is_empty());
        assert!(rep.selected_fdr.is_empty());
        for f in &rep.features {
            assert!(f.boundary_flag && f.degenerate);
            assert_eq!(f.statistic, 0.0);
            assert_eq!(f.pvalue, 1.0);
        }
    }

    #[test]
    fn screen_rejects_bad_levels_and_small_n() {
        let data = DataMatrix::from_columns(vec![vec![1.0, 2.0, 3.0, 4.0]], None, DataKind::Count).unwrap();
        let cfg = EmConfig::new(2, 0);
        let fam = Family::poisson();
        assert!(screen(&data, &fam, &cfg, 0.0, 0.01, PValueMethod::ChiSq).is_err());
        assert!(screen(&data, &fam, &cfg, 0.35, 1.0, PValueMethod::ChiSq).is_err());
        let cfg3 = EmConfig::new(3, 0);
        assert!(screen(&data, &fam, &cfg3, 0.35, 0.01, PValueMethod::ChiSq).is_err());
        assert!(screen(
            &data,
            &Family::normal(),
            &cfg,
            0.35,
            0.01,
            PValueMethod::MonteCarlo { n_mc: 1000 }
        )
        .is_err());
    }

    #[test]
    fn downsample_examples() {
        let m = DataMatrix::from_rows(&[vec![10.0, 0.0], vec![2.0, 3.0]], None, DataKind::Count).unwrap();
        let out = downsample_counts(&m, 5, 9).unwrap();
        assert_eq!(out.row(0), vec![5.0, 0.0]);
        assert_eq!(out.row(1), vec![2.0, 3.0]);
        match downsample_counts(&m, 6, 9) {
            Err(Error::InsufficientDepth { rows, .. }) => assert_eq!(rows, vec![1]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn downsample_hypergeometric_mean() {
        let m = DataMatrix::from_rows(&[vec![6.0, 6.0]], None, DataKind::Count).unwrap();
        let draws = 10_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for s in 0..draws {
            let out = downsample_counts(&m, 6, s).unwrap();
            assert_eq!(out.row(0).iter().sum::<f64>(), 6.0);
            let x = out.get(0, 0);
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / draws as f64;
        let var = sumsq / draws as f64 - mean * mean;
        // Hypergeometric(N=12, K=6, n=6): variance 6·(1/2)(1/2)·6/11.
        let se = (var / draws as f64).sqrt();
        assert!((var - 9.0 / 11.0).abs() < 0.1);
        assert!((mean - 3.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn gof_constant_and_perfect_fit() {
        let fam = Family::normal();
        let (x2, p, flag) = gof_test(&fam, &[1.0; 50]).unwrap();
        assert_eq!((x2, p, flag), (0.0, 1.0, true));
        // Symmetric four-point data ±a, ±b (100 copies each) with b tuned so
        // that the sample lower quartile sits at the fitted normal's 0.25
        // quantile: every bin then has observed = expected = 100.
        let z25 = -0.674_489_750_196_081_7;
        let q1 = |b: f64| {
            let a = 1.0;
            let sigma = ((a * a + b * b) / 2.0f64).sqrt();
            (-a + 0.75 * (a - b)) / sigma - z25
        };
        let (mut lo, mut hi) = (1e-6, 1.0 - 1e-9);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if q1(lo).signum() == q1(mid).signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let b = 0.5 * (lo + hi);
        let mut xs = Vec::new();
        for v in [-1.0, -b, b, 1.0] {
            xs.extend(std::iter::repeat_n(v, 100));
        }
        let (x2, p, _) = gof_test(&fam, &xs).unwrap();
        assert!(x2 < 1e-12, "{x2}");
        assert!(p > 1.0 - 1e-9);
    }
}
