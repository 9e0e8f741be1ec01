//! Acceptance suite. Every criterion runs in sequence inside one test so the
//! timing checks are not disturbed by other tests, and each prints exactly
//! one `PASS`/`FAIL` line to stderr whether or not output is captured.

use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use emscreen::asymptotics::{cone_sup, sample_limit_dist};
use emscreen::emtest::{em_init, run_em, EmConfig, MixtureState};
use emscreen::evalmetrics::{
    bench_case, em_threshold_method, BenchOptions, METHOD_EM_ADJUST, METHOD_NO_SCREENING, METHOD_ORACLE,
};
use emscreen::screening::{screen, PValueMethod};
use emscreen::simulate::{gen_homogeneous, generate, CaseId, Noise, Signal, SimScenario};
use emscreen::{Family, FamilyKind, Theta};
use nalgebra::DMatrix;
use rand::Rng;
use statrs::function::gamma::gamma_lr;

mod common;

use common::*;

type Outcome = (bool, String);

fn say(line: &str) {
    let mut err = std::io::stderr();
    let _ = writeln!(err, "{line}");
    let _ = err.flush();
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Outcome {
    let kinds = [FamilyKind::Poisson, FamilyKind::NegBin, FamilyKind::Normal];
    let mut r = rng(101);
    let mut worst = 0.0f64;
    let mut trajectories = 0;
    for inst in 0..100 {
        let kind = kinds[inst % 3];
        let family = Family::new(kind);
        let n = r.random_range(40..400);
        let n_comp = r.random_range(1..4);
        let comps: Vec<Theta> = (0..n_comp).map(|_| random_theta(kind, &mut r)).collect();
        let xs: Vec<f64> = (0..n)
            .map(|_| {
                let c = r.random_range(0..n_comp);
                draw_from(kind, &comps[c], &mut r)
            })
            .collect();
        let g = r.random_range(2..6);
        let cfg = EmConfig {
            k: r.random_range(5..150),
            ..EmConfig::new(g, inst as u64)
        };
        let mut raw: Vec<f64> = (0..g).map(|_| r.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        raw.iter_mut().for_each(|a| *a /= total);
        let xi: Vec<Theta> = (0..g).map(|_| random_theta(kind, &mut r)).collect();
        let state = MixtureState::new(xi, raw.clone()).unwrap();
        let mut traces = Vec::new();
        for update_alpha in [true, false] {
            traces.push(
                run_em(&family, &xs, &state, cfg.lambda, cfg.k, 0.0, update_alpha)
                    .unwrap()
                    .trace,
            );
        }
        traces.push(em_init(&family, &xs, &raw, &cfg).unwrap().trace);
        for tr in traces {
            trajectories += 1;
            for pair in tr.windows(2) {
                let drop = (pair[0] - pair[1]) / pair[0].abs().max(1e-300);
                worst = worst.max(drop);
            }
        }
    }
    (
        worst <= 1e-8,
        format!("{trajectories} trajectories, worst relative decrease {worst:.3e} (limit 1e-8)"),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let started = Instant::now();
    let mut r = rng(202);
    let mut worst = 0.0f64;
    let mut detail = String::new();
    for kind in [FamilyKind::Poisson, FamilyKind::NegBin, FamilyKind::Normal] {
        let family = Family::new(kind);
        for _ in 0..200 {
            let th = random_theta(kind, &mut r);
            let x = draw_from(kind, &th, &mut r);
            let an = family.deriv_bundle(&th, x).unwrap();
            let fd = fd_bundle(kind, &th, x);
            for (a, f) in an.stacked().iter().zip(&fd) {
                let rel = (a - f).abs() / a.abs().max(1e-6);
                if rel > worst {
                    worst = rel;
                    detail = format!("{} at θ={:?}, x={x}", kind.name(), th.as_slice());
                }
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    (
        worst < 1e-5 && secs < 10.0,
        format!("600 points, max relative error {worst:.3e} (limit 1e-5; {detail}), {secs:.2} s (limit 10 s)"),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let started = Instant::now();
    let family = Family::negbin();
    let mut r = rng(303);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = r.random_range(100..600);
        let mu = r.random_range(1.0..40.0);
        let size = r.random_range(0.5..15.0);
        let xs: Vec<f64> = (0..n).map(|_| nb_draw(&mut r, mu, size)).collect();
        let ws: Vec<f64> = (0..n).map(|_| r.random_range(0.05..1.0)).collect();
        let fit = family.weighted_mle(&xs, &ws).unwrap();
        let (om, or) = grid_refine_mle(&xs, &ws, &family);
        let em = (fit.theta[0] - om).abs() / om;
        let er = (fit.theta[1] - or).abs() / or;
        worst = worst.max(em).max(er);
    }
    let secs = started.elapsed().as_secs_f64();
    (
        worst <= 1e-3 && secs < 60.0,
        format!("20 instances, max relative parameter gap {worst:.3e} (limit 1e-3), {secs:.1} s (limit 60 s)"),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let mut r = rng(404);
    let mut worst = 0.0f64;
    let mut count = 0;
    // d = 1 against a grid over v = l².
    while count < 20 {
        let b = DMatrix::from_element(1, 1, r.random_range(0.5..2.0));
        let w = [r.random_range(-1.0..1.0)];
        let got = cone_sup(&w, &b, 1);
        let grid = zoom_grid(&[0.0], &[2.0], 0.001, &|l: &[f64]| cone_obj(&w, &b, &[l[0] * l[0]]));
        worst = worst.max((got - grid).abs());
        count += 1;
    }
    // d = 2, r = 2: V = L Lᵀ with L lower triangular.
    let mut full = 0;
    while full < 20 {
        let b = random_pd(3, &mut r);
        let w: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let got = cone_sup(&w, &b, 2);
        let lmin = b.symmetric_eigenvalues().min();
        if got > 2.0 * lmin {
            continue;
        }
        let grid = zoom_grid(&[0.0, -2.0, 0.0], &[2.0, 2.0, 2.0], 0.01, &|l: &[f64]| {
            let (l11, l21, l22) = (l[0], l[1], l[2]);
            cone_obj(&w, &b, &[l11 * l11, l21 * l21 + l22 * l22, l11 * l21])
        });
        worst = worst.max((got - grid).abs());
        full += 1;
    }
    // d = 2, r = 1: V = a aᵀ.
    let mut rank1 = 0;
    while rank1 < 10 {
        let b = random_pd(3, &mut r);
        let w: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let got = cone_sup(&w, &b, 1);
        let lmin = b.symmetric_eigenvalues().min();
        if got > 2.0 * lmin {
            continue;
        }
        let grid = zoom_grid(&[0.0, -2.0], &[2.0, 2.0], 0.002, &|a: &[f64]| {
            cone_obj(&w, &b, &[a[0] * a[0], a[1] * a[1], a[0] * a[1]])
        });
        worst = worst.max((got - grid).abs());
        rank1 += 1;
    }
    // Worked example: B = I, w = (1, −1, 0) gives 1.
    let example = cone_sup(&[1.0, -1.0, 0.0], &DMatrix::identity(3, 3), 2);
    // Closed form for d = 1.
    let mut closed = 0.0f64;
    for _ in 0..1000 {
        let bv = r.random_range(0.01..10.0);
        let w: f64 = r.random_range(-5.0..5.0);
        let expect = w.max(0.0).powi(2) / bv;
        closed = closed.max((cone_sup(&[w], &DMatrix::from_element(1, 1, bv), 1) - expect).abs());
    }
    let ok = worst <= 1e-3 && closed <= 1e-9 && (example - 1.0).abs() <= 1e-3;
    (
        ok,
        format!(
            "50 grid instances, max gap {worst:.3e} (limit 1e-3); example w=(1,-1,0) gives {example:.6}; d=1 closed-form gap {closed:.1e} (limit 1e-9)"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let started = Instant::now();
    let b = DMatrix::from_element(1, 1, 1.7);
    let sample = sample_limit_dist(&b, 1, 10_000, 55).unwrap();
    let pos: Vec<f64> = sample.draws.iter().copied().filter(|v| *v > 0.0).collect();
    let m = pos.len() as f64;
    let mut ks = 0.0f64;
    for (i, &x) in pos.iter().enumerate() {
        let f = gamma_lr(0.5, x / 2.0);
        ks = ks.max((f - i as f64 / m).abs()).max(((i + 1) as f64 / m - f).abs());
    }
    let secs = started.elapsed().as_secs_f64();
    let z = sample.zero_fraction;
    (
        (0.47..=0.53).contains(&z) && ks < 0.03 && secs < 30.0,
        format!("zero mass {z:.4} (range [0.47, 0.53]), KS {ks:.4} (limit 0.03), {secs:.2} s (limit 30 s)"),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let started = Instant::now();
    let family = Family::poisson();
    let data = gen_homogeneous(FamilyKind::Poisson, &Theta::new(&[3.0]), 500, 2000, 1).unwrap();
    let report = screen(&data, &family, &EmConfig::new(5, 1), 0.35, 0.01, PValueMethod::ChiSq).unwrap();
    let rejected = report.features.iter().filter(|f| f.pvalue <= 0.05).count();
    let rate = rejected as f64 / report.features.len() as f64;
    let secs = started.elapsed().as_secs_f64();
    (
        (0.0..=0.06).contains(&rate) && secs < 180.0,
        format!("{rejected}/2000 rejected at 0.05, rate {rate:.4} (range [0, 0.06]), {secs:.1} s (limit 180 s)"),
    )
}

// ---------------------------------------------------------------- 7-9

fn bench(case: CaseId) -> emscreen::evalmetrics::BenchSummary {
    let scenario = SimScenario::new(case, 500, 1000, 1);
    bench_case(&scenario, &EmConfig::new(5, 1), &BenchOptions::new(20)).unwrap()
}

fn criterion_7() -> Outcome {
    let started = Instant::now();
    let s = bench(CaseId::NegBin {
        signal: Signal::High,
        noise: Noise::Low,
    });
    let mean_s = s.mean("S", "EM").unwrap();
    (
        mean_s <= 22.0,
        format!(
            "Case 1 mean S {mean_s:.2} (limit 22), {:.0} s",
            started.elapsed().as_secs_f64()
        ),
    )
}

fn criteria_8_9() -> (Outcome, Outcome, f64) {
    let started = Instant::now();
    let s = bench(CaseId::NegBin {
        signal: Signal::Medium,
        noise: Noise::High,
    });
    let secs = started.elapsed().as_secs_f64();
    let rule = em_threshold_method(0.35);
    let get = |metric: &str, method: &str| s.mean(metric, method).unwrap();
    let (ar, af) = (get("R", METHOD_EM_ADJUST), get("F", METHOD_EM_ADJUST));
    let (tr, tf) = (get("R", &rule), get("F", &rule));
    let c8 = (
        ar >= 19.0 && af <= 1.0 && tr >= 19.5 && tf <= 4.0,
        format!("EM-adjust R {ar:.2} (≥19) F {af:.2} (≤1); {rule} R {tr:.2} (≥19.5) F {tf:.2} (≤4)"),
    );
    let (e, ns, or) = (
        get("ARI", &rule),
        get("ARI", METHOD_NO_SCREENING),
        get("ARI", METHOD_ORACLE),
    );
    let c9 = (
        e >= 0.85 && ns <= 0.85 && or >= 0.85,
        format!("ARI {rule} {e:.3} (≥0.85), No-Screening {ns:.3} (≤0.85), Oracle {or:.3} (≥0.85)"),
    );
    (c8, c9, secs)
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let scenario = SimScenario::new(
        CaseId::NegBin {
            signal: Signal::Medium,
            noise: Noise::High,
        },
        5000,
        1000,
        10,
    );
    let ds = generate(&scenario).unwrap();
    let started = Instant::now();
    let report = screen(
        &ds.data,
        &Family::negbin(),
        &EmConfig::new(5, 1),
        0.35,
        0.01,
        PValueMethod::ChiSq,
    )
    .unwrap();
    let secs = started.elapsed().as_secs_f64();
    let threads = rayon::current_num_threads();
    (
        secs < 600.0 && report.features.len() == 5000,
        format!("p=5000, n=1000 screened in {secs:.1} s on {threads} thread(s) (limit 600 s)"),
    )
}

// ---------------------------------------------------------------- 11

fn cli(args: &[&str], threads: &str) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_emscreen"))
        .args(args)
        .env("EMSCREEN_THREADS", threads)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn read_all(dir: &Path, names: &[&str]) -> Vec<Vec<u8>> {
    names.iter().map(|n| std::fs::read(dir.join(n)).unwrap()).collect()
}

fn criterion_11() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut checks = Vec::new();
    let sims: Vec<_> = ["a", "b"]
        .iter()
        .map(|sub| {
            let out = d.join(sub);
            cli(
                &[
                    "simulate",
                    "-c",
                    "case4",
                    "-p",
                    "60",
                    "-n",
                    "300",
                    "--seed",
                    "9",
                    "-o",
                    out.to_str().unwrap(),
                ],
                "1",
            );
            read_all(&out, &["data.csv", "labels.csv", "truth.json"])
        })
        .collect();
    checks.push(("simulate", sims[0] == sims[1]));
    let data = d.join("a").join("data.csv");
    let data = data.to_str().unwrap();
    for (label, extra) in [
        ("screen negbin chisq", vec!["-f", "negbin"]),
        (
            "screen poisson montecarlo",
            vec!["-f", "poisson", "--pvalue", "montecarlo"],
        ),
    ] {
        let runs: Vec<Vec<u8>> = [("1", "0"), ("1", "3"), ("4", "0")]
            .iter()
            .map(|(env_threads, flag)| {
                let mut args = vec!["screen", "-i", data, "--seed", "5"];
                args.extend(&extra);
                if *flag != "0" {
                    args.extend(["--threads", flag]);
                }
                cli(&args, env_threads)
            })
            .collect();
        checks.push((label, runs.windows(2).all(|w| w[0] == w[1])));
    }
    let benches: Vec<_> = ["1", "3"]
        .iter()
        .map(|t| {
            let per = d.join(format!("per-{t}.json"));
            let csv = cli(
                &[
                    "bench",
                    "-c",
                    "case1",
                    "-p",
                    "40",
                    "-n",
                    "200",
                    "--reps",
                    "2",
                    "--per-rep",
                    per.to_str().unwrap(),
                ],
                t,
            );
            (csv, std::fs::read(per).unwrap())
        })
        .collect();
    checks.push(("bench", benches[0] == benches[1]));
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    (
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} repeated runs byte-identical across thread counts", checks.len())
        } else {
            format!("differences in {failed:?}")
        },
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        (false, format!("panicked: {msg}"))
    })
}

/// `EMSCREEN_ACCEPTANCE=1,4,11` restricts the run to the listed criteria.
fn selected() -> Option<Vec<usize>> {
    let v = std::env::var("EMSCREEN_ACCEPTANCE").ok()?;
    Some(v.split(',').filter_map(|t| t.trim().parse().ok()).collect())
}

#[test]
fn acceptance_criteria() {
    let only = selected();
    let want = |id: usize| only.as_ref().is_none_or(|l| l.contains(&id));
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut record = |id: usize, o: Outcome| {
        say(&format!(
            "criterion {id:>2}: {} | {}",
            if o.0 { "PASS" } else { "FAIL" },
            o.1
        ));
        results.push((id, o));
    };
    if want(1) {
        record(1, guarded(criterion_1));
    }
    if want(2) {
        record(2, guarded(criterion_2));
    }
    if want(3) {
        record(3, guarded(criterion_3));
    }
    if want(4) {
        record(4, guarded(criterion_4));
    }
    if want(5) {
        record(5, guarded(criterion_5));
    }
    if want(6) {
        record(6, guarded(criterion_6));
    }
    let started = Instant::now();
    if want(7) {
        record(7, guarded(criterion_7));
    }
    if want(8) || want(9) {
        match catch_unwind(criteria_8_9) {
            Ok((c8, c9, _)) => {
                record(8, c8);
                let total = started.elapsed().as_secs_f64();
                let (ok, msg) = c9;
                record(
                    9,
                    (
                        ok && total < 1800.0,
                        format!("{msg}; criteria 7-9 took {total:.0} s (limit 1800 s)"),
                    ),
                );
            }
            Err(_) => {
                record(8, (false, "bench panicked".into()));
                record(9, (false, "bench panicked".into()));
            }
        }
    }
    if want(10) {
        record(10, guarded(criterion_10));
    }
    if want(11) {
        record(11, guarded(criterion_11));
    }
    let failed: Vec<usize> = results.iter().filter(|r| !r.1 .0).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
