//! p-values for EM-test statistics.
//!
//! Under the homogeneous model the statistic converges to
//! `sup_{v ∈ 𝒱} 2vᵀw − vᵀB̃₂₂v` with `w ~ N(0, B̃₂₂)`, where `𝒱` is the set of
//! vech'd symmetric PSD `d × d` matrices of rank at most `min(G−1, d)`. The
//! law is sampled by Monte Carlo; the χ²(d(d+1)/2) law is a conservative
//! bound that needs no sampling.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::families::{Family, Theta};
use crate::rng::rng_from_seed;
use crate::sample::Sample;
use crate::special::chisq_sf;

/// Condition number above which `B11` is ridge-regularized before inversion.
const B11_MAX_CONDITION: f64 = 1e12;
const B11_RIDGE: f64 = 1e-10;

/// Random restarts (besides the deterministic candidates) in [`cone_sup`].
const CONE_STARTS: usize = 10;
const CONE_SEED: u64 = 0x00c0_4e5e_ed00;

/// Covariance blocks of the derivative bundle at `θ̂₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct BMatrices {
    pub b11: DMatrix<f64>,
    pub b12: DMatrix<f64>,
    pub b22: DMatrix<f64>,
    /// `B22 − B21 B11⁻¹ B12`.
    pub b22_tilde: DMatrix<f64>,
    /// `B11` was ill-conditioned and had to be regularized.
    pub singular: bool,
}

/// Sorted Monte-Carlo draws from the limiting law.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitSample {
    pub draws: Vec<f64>,
    /// Rank cap `min(G−1, d)`.
    pub r: usize,
    pub n_mc: usize,
    /// Fraction of draws that are exactly 0.
    pub zero_fraction: f64,
}

/// `d` such that `d(d+1)/2 = m`.
pub fn dim_from_vech_len(m: usize) -> Option<usize> {
    (1..=m).find(|d| d * (d + 1) / 2 == m)
}

/// Symmetric matrix from its vech (diagonal first, then `(h, l)` with
/// `h < l` in row order).
pub fn unvech(v: &[f64]) -> DMatrix<f64> {
    let d = dim_from_vech_len(v.len()).expect("vech length must be triangular");
    let mut m = DMatrix::zeros(d, d);
    for h in 0..d {
        m[(h, h)] = v[h];
    }
    let mut idx = d;
    for h in 0..d {
        for l in h + 1..d {
            m[(h, l)] = v[idx];
            m[(l, h)] = v[idx];
            idx += 1;
        }
    }
    m
}

/// vech of a symmetric matrix in the same ordering as [`unvech`].
pub fn vech(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut v = Vec::with_capacity(d * (d + 1) / 2);
    for h in 0..d {
        v.push(m[(h, h)]);
    }
    for h in 0..d {
        for l in h + 1..d {
            v.push(m[(h, l)]);
        }
    }
    v
}

/// Empirical covariance blocks of `b_i = (b1_i, b2_i)` over the sample.
pub fn estimate_b_matrices(family: &Family, theta0: &Theta, xs: &[f64]) -> Result<BMatrices> {
    family.check_theta(theta0)?;
    for &x in xs {
        family.check_x(x)?;
    }
    if xs.is_empty() {
        return Err(Error::InvalidConfig("empty sample".into()));
    }
    Ok(b_matrices_on_sample(family, theta0, &Sample::new(xs)))
}

pub(crate) fn b_matrices_on_sample(family: &Family, theta0: &Theta, sample: &Sample) -> BMatrices {
    let d = family.dim();
    let m = family.n_second_order();
    let k = d + m;
    let total = sample.total_weight();
    let bundles: Vec<Vec<f64>> = sample
        .values()
        .iter()
        .map(|&x| family.deriv_bundle_unchecked(theta0, x).stacked())
        .collect();
    let mut mean = vec![0.0; k];
    for (b, w) in bundles.iter().zip(sample.weights()) {
        for (acc, v) in mean.iter_mut().zip(b) {
            *acc += w * v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= total);
    let mut cov = DMatrix::zeros(k, k);
    for (b, w) in bundles.iter().zip(sample.weights()) {
        for i in 0..k {
            let di = b[i] - mean[i];
            for j in i..k {
                cov[(i, j)] += w * di * (b[j] - mean[j]);
            }
        }
    }
    for i in 0..k {
        for j in i..k {
            let v = cov[(i, j)] / total;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let b11 = cov.view((0, 0), (d, d)).into_owned();
    let b12 = cov.view((0, d), (d, m)).into_owned();
    let b22 = cov.view((d, d), (m, m)).into_owned();

    let eig = SymmetricEigen::new(b11.clone());
    let max_ev = eig.eigenvalues.max();
    let min_ev = eig.eigenvalues.min();
    let singular = !(min_ev > 0.0) || max_ev / min_ev > B11_MAX_CONDITION;
    let b11_inv_source = if singular {
        &b11 + DMatrix::identity(d, d) * B11_RIDGE
    } else {
        b11.clone()
    };
    let b11_inv = b11_inv_source
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| b11_inv_source.try_inverse())
        .unwrap_or_else(|| DMatrix::zeros(d, d));
    let mut b22_tilde = &b22 - b12.transpose() * &b11_inv * &b12;
    symmetrize(&mut b22_tilde);
    BMatrices {
        b11,
        b12,
        b22,
        b22_tilde,
        singular,
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `wᵀ B⁻¹ w` (pseudo-inverse on the numerical range of `B`), the χ²-type
/// upper bound on [`cone_sup`].
pub fn chi_square_bound(w: &[f64], b: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(b.clone());
    let max_ev = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let cutoff = max_ev * 1e-12;
    let wv = DVector::from_column_slice(w);
    eig.eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .filter(|(ev, _)| **ev > cutoff)
        .map(|(ev, u)| u.dot(&wv).powi(2) / ev)
        .sum()
}

/// `sup_{v ∈ 𝒱} 2vᵀw − vᵀBv` over vech'd PSD matrices of rank ≤ `r`.
///
/// Exact answers are returned when `v = 0` is optimal (the matrix form of
/// `w` is negative semidefinite) or when the unconstrained maximizer `B⁻¹w`
/// is already feasible. Otherwise `V = AAᵀ` with `A` of size `d × r` is
/// optimized by BFGS from a rank-one analytic start and seeded random
/// restarts, and the best value is returned.
pub fn cone_sup(w: &[f64], b: &DMatrix<f64>, r: usize) -> f64 {
    let scale = b.diagonal().max();
    if w.len() > 1 && scale > 0.0 && scale.is_finite() {
        let ws: Vec<f64> = w.iter().map(|v| v / scale).collect();
        return scale * cone_sup_unscaled(&ws, &(b / scale), r);
    }
    cone_sup_unscaled(w, b, r)
}

fn cone_sup_unscaled(w: &[f64], b: &DMatrix<f64>, r: usize) -> f64 {
    let m = w.len();
    let d = dim_from_vech_len(m).expect("w length must be d(d+1)/2");
    assert_eq!(b.nrows(), m, "B must be m × m");
    let r = r.clamp(1, d);

    if d == 1 {
        let (wv, bv) = (w[0], b[(0, 0)]);
        if wv <= 0.0 {
            return 0.0;
        }
        return if bv > 0.0 { wv * wv / bv } else { f64::INFINITY };
    }

    // Linear-term matrix S with tr(S V) = vᵀw.
    let s = gradient_matrix(w);
    let s_eig = SymmetricEigen::new(s.clone());
    let (top_idx, top_ev) =
        s_eig
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
            );
    if top_ev <= 0.0 {
        return 0.0;
    }

    let bw = DVector::from_column_slice(w);
    if let Some(chol) = b.clone().cholesky() {
        let v_star = chol.solve(&bw);
        let v_mat = unvech(v_star.as_slice());
        let ev = SymmetricEigen::new(v_mat).eigenvalues;
        let scale = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let psd = ev.iter().all(|v| *v >= -1e-12 * scale);
        let rank = ev.iter().filter(|v| **v > 1e-10 * scale).count();
        if psd && rank <= r {
            return bw.dot(&v_star).max(0.0);
        }
    }

    let objective = |a: &[f64]| -> (f64, Vec<f64>) { cone_objective(a, w, b, d, r) };

    let mut best = 0.0f64;
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(CONE_STARTS + 1);

    // Rank-one start along the top eigenvector of S.
    let u = s_eig.eigenvectors.column(top_idx).into_owned();
    let q = vech(&(&u * u.transpose()));
    let qv = DVector::from_column_slice(&q);
    let lin = qv.dot(&bw);
    let quad = qv.dot(&(b * &qv));
    let t = if quad > 0.0 { lin / quad } else { 1.0 };
    let mut a0 = vec![0.0; d * r];
    let amp = t.max(0.0).sqrt();
    for h in 0..d {
        a0[h * r] = amp * u[h];
    }
    starts.push(a0);

    let scale = amp.max(1e-3);
    let mut rng = rng_from_seed(CONE_SEED);
    for _ in 0..CONE_STARTS - 1 {
        starts.push(
            (0..d * r)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
    }

    for start in starts {
        let val = -bfgs_minimize(
            |a| {
                let (v, g) = objective(a);
                (-v, g.into_iter().map(|x| -x).collect())
            },
            start,
            500,
        );
        if val.is_finite() && val > best {
            best = val;
        }
    }
    best
}

/// Symmetric `S` with `tr(S V) = Σ_{vech} w_{hl} V_{hl}`.
fn gradient_matrix(gv: &[f64]) -> DMatrix<f64> {
    let mut s = unvech(gv);
    let d = s.nrows();
    for h in 0..d {
        for l in 0..d {
            if h != l {
                s[(h, l)] *= 0.5;
            }
        }
    }
    s
}

/// Objective `2vᵀw − vᵀBv` at `V = AAᵀ` and its gradient in `A` (row-major
/// `d × r`).
fn cone_objective(a: &[f64], w: &[f64], b: &DMatrix<f64>, d: usize, r: usize) -> (f64, Vec<f64>) {
    let m = w.len();
    let vfull = |h: usize, l: usize| -> f64 { (0..r).map(|k| a[h * r + k] * a[l * r + k]).sum() };
    let mut v = Vec::with_capacity(m);
    for h in 0..d {
        v.push(vfull(h, h));
    }
    for h in 0..d {
        for l in h + 1..d {
            v.push(vfull(h, l));
        }
    }
    let mut value = 0.0;
    let mut gv = vec![0.0; m];
    for i in 0..m {
        let bv_i: f64 = (0..m).map(|j| b[(i, j)] * v[j]).sum();
        value += 2.0 * v[i] * w[i] - v[i] * bv_i;
        gv[i] = 2.0 * w[i] - 2.0 * bv_i;
    }
    // S[h][h] = gv_hh, S[h][l] = gv_hl / 2; grad = 2 S A.
    let mut s = vec![0.0; d * d];
    for h in 0..d {
        s[h * d + h] = gv[h];
    }
    let mut idx = d;
    for h in 0..d {
        for l in h + 1..d {
            s[h * d + l] = 0.5 * gv[idx];
            s[l * d + h] = 0.5 * gv[idx];
            idx += 1;
        }
    }
    let mut g = vec![0.0; d * r];
    for h in 0..d {
        for k in 0..r {
            g[h * r + k] = 2.0 * (0..d).map(|l| s[h * d + l] * a[l * r + k]).sum::<f64>();
        }
    }
    (value, g)
}

/// BFGS with Armijo backtracking. Returns the minimum value found.
fn bfgs_minimize<F: Fn(&[f64]) -> (f64, Vec<f64>)>(f: F, x0: Vec<f64>, max_iter: usize) -> f64 {
    let n = x0.len();
    let mut x = DVector::from_vec(x0);
    let (mut fx, g0) = f(x.as_slice());
    let mut g = DVector::from_vec(g0);
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut stalls = 0;
    for _ in 0..max_iter {
        if !fx.is_finite() {
            break;
        }
        let gnorm = g.norm();
        if gnorm <= 1e-12 * (1.0 + fx.abs()) {
            break;
        }
        let mut p = -(&h_inv * &g);
        let mut slope = p.dot(&g);
        if slope >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            p = -g.clone();
            slope = -gnorm * gnorm;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &p * step;
            let (fnew, gnew) = f(xn.as_slice());
            if fnew.is_finite() && fnew <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fnew, DVector::from_vec(gnew)));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            break;
        };
        let sk = &xn - &x;
        let yk = &gn - &g;
        let sy = sk.dot(&yk);
        let improvement = fx - fnew;
        x = xn;
        fx = fnew;
        g = gn;
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - &sk * yk.transpose() * rho;
            let right = &eye - &yk * sk.transpose() * rho;
            h_inv = &left * &h_inv * &right + &sk * sk.transpose() * rho;
        }
        if improvement <= 1e-13 * (1.0 + fx.abs()) {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    fx
}

/// Draw `n_mc` samples of the limiting law for covariance `B̃₂₂`.
pub fn sample_limit_dist(b22_tilde: &DMatrix<f64>, r: usize, n_mc: usize, seed: u64) -> Result<LimitSample> {
    if n_mc < 1000 {
        return Err(Error::InvalidConfig(format!("n_mc must be at least 1000, got {n_mc}")));
    }
    let m = b22_tilde.nrows();
    if dim_from_vech_len(m).is_none() || b22_tilde.ncols() != m {
        return Err(Error::InvalidConfig(format!(
            "B22 tilde must be m × m with m = d(d+1)/2, got {}×{}",
            m,
            b22_tilde.ncols()
        )));
    }
    let factor = covariance_factor(b22_tilde);
    let mut rng = rng_from_seed(seed);
    let mut draws = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w = &factor * z;
        draws.push(cone_sup(w.as_slice(), b22_tilde, r).max(0.0));
    }
    draws.sort_by(f64::total_cmp);
    let zeros = draws.iter().filter(|v| **v == 0.0).count();
    Ok(LimitSample {
        draws,
        r,
        n_mc,
        zero_fraction: zeros as f64 / n_mc as f64,
    })
}

/// `L` with `LLᵀ = B`: Cholesky when `B` is positive definite, otherwise
/// the eigen factor with negative eigenvalues clipped to 0.
fn covariance_factor(b: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = b.clone().cholesky() {
        return chol.l();
    }
    let eig = SymmetricEigen::new(b.clone());
    let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * sqrt
}

/// Survival function of χ²(df) at `stat` (negative statistics floored at 0).
pub fn pvalue_chisq(stat: f64, df: usize) -> f64 {
    chisq_sf(stat.max(0.0), df as f64)
}

/// Add-one Monte-Carlo p-value `(1 + #{draws ≥ stat}) / (n_mc + 1)`.
pub fn pvalue_montecarlo(stat: f64, sample: &LimitSample) -> f64 {
    let stat = stat.max(0.0);
    let first_ge = sample.draws.partition_point(|d| *d < stat);
    let exceed = sample.draws.len() - first_ge;
    (1.0 + exceed as f64) / (sample.draws.len() as f64 + 1.0)
}
