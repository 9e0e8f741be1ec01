//! Independent oracles and data helpers shared by the integration tests.
#![allow(dead_code)]

use emscreen::{Family, FamilyKind, Theta};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use statrs::function::gamma::ln_gamma;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn nb_draw(r: &mut ChaCha8Rng, mu: f64, size: f64) -> f64 {
    let lam = Gamma::new(size, mu / size).unwrap().sample(r);
    if lam <= 0.0 {
        0.0
    } else {
        Poisson::new(lam).unwrap().sample(r)
    }
}

pub fn random_theta(kind: FamilyKind, r: &mut ChaCha8Rng) -> Theta {
    match kind {
        FamilyKind::Poisson => Theta::new(&[r.random_range(0.5..30.0)]),
        FamilyKind::NegBin => Theta::new(&[r.random_range(0.5..30.0), r.random_range(0.5..20.0)]),
        FamilyKind::Normal => Theta::new(&[r.random_range(-5.0..5.0), r.random_range(0.2..4.0)]),
    }
}

pub fn draw_from(kind: FamilyKind, th: &Theta, r: &mut ChaCha8Rng) -> f64 {
    match kind {
        FamilyKind::Poisson => Poisson::new(th[0]).unwrap().sample(r),
        FamilyKind::NegBin => nb_draw(r, th[0], th[1]),
        FamilyKind::Normal => Normal::new(th[0], th[1].sqrt()).unwrap().sample(r),
    }
}

/// `log f(x; θ+δ) − log f(x; θ)` evaluated without forming either term,
/// so the differences below keep their precision.
pub fn log_ratio(kind: FamilyKind, th: &[f64], dl: &[f64], x: f64) -> f64 {
    match kind {
        FamilyKind::Poisson => x * (dl[0] / th[0]).ln_1p() - dl[0],
        FamilyKind::NegBin => {
            let (m, r) = (th[0], th[1]);
            let (m1, r1) = (m + dl[0], r + dl[1]);
            let gamma_part: f64 = (0..x as usize).map(|k| (dl[1] / (r + k as f64)).ln_1p()).sum();
            let size_part = r * (m / r).ln_1p() - r1 * (m1 / r1).ln_1p();
            let mean_part = x * ((dl[0] / m).ln_1p() - ((dl[0] + dl[1]) / (m + r)).ln_1p());
            gamma_part + size_part + mean_part
        }
        FamilyKind::Normal => {
            let (mu, v) = (th[0], th[1]);
            let v1 = v + dl[1];
            let e = x - mu;
            let e1 = e - dl[0];
            -0.5 * (dl[1] / v).ln_1p() - (e1 * e1 * v - e * e * v1) / (2.0 * v * v1)
        }
    }
}

/// Central differences of the log-ratio with two Richardson levels give
/// `l_h`, `l_hh` and `l_hl`, which compose into the density-ratio bundle.
pub fn fd_bundle(kind: FamilyKind, th: &Theta, x: f64) -> Vec<f64> {
    let d = th.dim();
    let base = th.as_slice();
    let steps: Vec<f64> = base.iter().map(|v| 1e-2 * v.abs().max(0.5)).collect();
    let lr = |h: usize, s: f64, l: usize, t: f64| {
        let mut dl = vec![0.0; d];
        dl[h] += s;
        dl[l] += t;
        log_ratio(kind, base, &dl, x)
    };
    let extrapolate = |est: &dyn Fn(f64) -> f64| {
        let (a, b, c) = (est(1.0), est(0.5), est(0.25));
        let (ab, bc) = ((4.0 * b - a) / 3.0, (4.0 * c - b) / 3.0);
        (16.0 * bc - ab) / 15.0
    };
    let lh: Vec<f64> = (0..d)
        .map(|h| {
            extrapolate(&|q| {
                let e = steps[h] * q;
                (lr(h, e, h, 0.0) - lr(h, -e, h, 0.0)) / (2.0 * e)
            })
        })
        .collect();
    let mut out = lh.clone();
    for h in 0..d {
        let lhh = extrapolate(&|q| {
            let e = steps[h] * q;
            (lr(h, e, h, 0.0) + lr(h, -e, h, 0.0)) / (e * e)
        });
        out.push((lhh + lh[h] * lh[h]) / 2.0);
    }
    for h in 0..d {
        for l in h + 1..d {
            let lhl = extrapolate(&|q| {
                let (e, f) = (steps[h] * q, steps[l] * q);
                (lr(h, e, l, f) - lr(h, e, l, -f) - lr(h, -e, l, f) + lr(h, -e, l, -f)) / (4.0 * e * f)
            });
            out.push(lhl + lh[h] * lh[l]);
        }
    }
    out
}

pub fn nb_weighted_ll(xs: &[f64], ws: &[f64], mu: f64, size: f64) -> f64 {
    xs.iter()
        .zip(ws)
        .map(|(&x, &w)| {
            w * (ln_gamma(x + size) - ln_gamma(size) - ln_gamma(x + 1.0)
                + size * (size / (size + mu)).ln()
                + x * (mu / (size + mu)).ln())
        })
        .sum()
}

/// Zooming grid search over `(log μ, log r)` inside the family's box.
pub fn grid_refine_mle(xs: &[f64], ws: &[f64], family: &Family) -> (f64, f64) {
    let b = family.bounds();
    grid_refine_mle_in(xs, ws, b[0], b[1])
}

/// Zooming grid search over `(log μ, log r)` inside `mu_box × r_box`.
pub fn grid_refine_mle_in(xs: &[f64], ws: &[f64], mu_box: (f64, f64), r_box: (f64, f64)) -> (f64, f64) {
    let (lo_m, hi_m) = (mu_box.0.ln(), mu_box.1.ln());
    let (lo_r, hi_r) = (r_box.0.ln(), r_box.1.ln());
    let (mut cm, mut cr) = ((lo_m + hi_m) / 2.0, (lo_r + hi_r) / 2.0);
    let (mut hm, mut hr) = ((hi_m - lo_m) / 2.0, (hi_r - lo_r) / 2.0);
    let steps = 40;
    while hm > 1e-10 || hr > 1e-10 {
        let mut best = (f64::NEG_INFINITY, cm, cr);
        for i in 0..=steps {
            let lm = (cm - hm + 2.0 * hm * i as f64 / steps as f64).clamp(lo_m, hi_m);
            for k in 0..=steps {
                let lr = (cr - hr + 2.0 * hr * k as f64 / steps as f64).clamp(lo_r, hi_r);
                let v = nb_weighted_ll(xs, ws, lm.exp(), lr.exp());
                if v > best.0 {
                    best = (v, lm, lr);
                }
            }
        }
        cm = best.1;
        cr = best.2;
        hm *= 0.25;
        hr *= 0.25;
    }
    (cm.exp(), cr.exp())
}

pub fn cone_obj(w: &[f64], b: &DMatrix<f64>, v: &[f64]) -> f64 {
    let m = v.len();
    let mut lin = 0.0;
    let mut quad = 0.0;
    for i in 0..m {
        lin += v[i] * w[i];
        for j in 0..m {
            quad += v[i] * b[(i, j)] * v[j];
        }
    }
    2.0 * lin - quad
}

/// Maximize `eval` over a box: a coarse grid, then three shrinking local
/// grids around the incumbent.
pub fn zoom_grid(lo: &[f64], hi: &[f64], step: f64, eval: &dyn Fn(&[f64]) -> f64) -> f64 {
    let k = lo.len();
    let mut center: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| (a + b) / 2.0).collect();
    let mut half: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| (b - a) / 2.0).collect();
    let mut h = step;
    let mut best = f64::NEG_INFINITY;
    for _ in 0..4 {
        let counts: Vec<usize> = half.iter().map(|hw| (2.0 * hw / h).round() as usize).collect();
        let mut idx = vec![0usize; k];
        let mut arg = center.clone();
        let mut pt = vec![0.0; k];
        loop {
            for c in 0..k {
                pt[c] = (center[c] - half[c] + idx[c] as f64 * h).clamp(lo[c], hi[c]);
            }
            let v = eval(&pt);
            if v > best {
                best = v;
                arg.copy_from_slice(&pt);
            }
            let mut c = 0;
            while c < k {
                idx[c] += 1;
                if idx[c] <= counts[c] {
                    break;
                }
                idx[c] = 0;
                c += 1;
            }
            if c == k {
                break;
            }
        }
        center = arg;
        half = vec![2.0 * h; k];
        h /= 10.0;
    }
    best
}

pub fn random_pd(m: usize, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(m, m, |_, _| r.random_range(-1.0..1.0));
    let q = a.qr().q();
    let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(m, |_, _| r.random_range(0.5..2.0)));
    let b = &q * lam * q.transpose();
    (&b + b.transpose()) / 2.0
}
