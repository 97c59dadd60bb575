//! Acceptance suite. Every criterion is evaluated in full and reported on
//! its own `PASS`/`FAIL` line before the test asserts that all passed.
//!
//! Run with `cargo test -p cbp-abc-cli --test acceptance -- --nocapture`.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use cbp_abc::control::SizeMap;
use cbp_abc::distance::{rho, DiscrepancyVector, RawComparator};
use cbp_abc::refine::{regression_adjust, Selected, Selection};
use cbp_abc::{
    kappa_posterior, run_smc, summary::summary, ControlFamily, ControlPrior, GrowthFamily, KappaEstimator, ModelSpec,
    ObservedSample, OffspringLaw, PriorSpec, Sequential, SmcConfig, StreamSeed, SummaryStatistic,
};
use cbp_cli::commands::{fit_growth_cmd, smc_and_refine};
use cbp_cli::{load_observations, RayonExecutor, RunConfig};
use rand::Rng;

/// Seeds of the statistical criteria, fixed before any run.
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, title: &str, started: Instant, outcome: &Outcome) {
    let verdict = if outcome.pass { "PASS" } else { "FAIL" };
    // written straight to stderr so the line survives output capture
    let mut err = std::io::stderr().lock();
    let _ = writeln!(
        err,
        "criterion {id} [{verdict}] {title} ({:.1}s): {}",
        started.elapsed().as_secs_f64(),
        outcome.detail
    );
}

fn criterion_1() -> Outcome {
    let mut failures = Vec::new();
    let mut checks = 0;
    let binomial = ControlFamily::BinomialXi {
        xi: SizeMap::LogAugmented,
    };
    let cases = [(4, 0.9, 0.8), (10, 0.36, 0.8), (7, 0.8, 0.5), (10, 0.8, 0.36)];
    for (c, &(kappa, rho_, gamma)) in cases.iter().enumerate() {
        let m = OffspringLaw::binomial(kappa, rho_).unwrap().mean();
        let tm = binomial.tau(gamma).unwrap() * m;
        checks += 1;
        if (tm - 2.88).abs() > 1e-12 {
            failures.push(format!("case {} tau*m = {tm}", c + 1));
        }
    }
    let geo = OffspringLaw::geometric(0.4).unwrap().cdf(5);
    checks += 2;
    if (geo - 0.953344).abs() > 1e-12 {
        failures.push(format!("geometric cdf(5) = {geo}"));
    }
    if (geo - 0.9533).abs() > 5e-4 {
        failures.push(format!("geometric cdf(5) = {geo} vs 0.9533"));
    }
    let printed: [&[f64]; 4] = [
        &[0.0001, 0.004, 0.052, 0.344, 1.000],
        &[
            0.012, 0.076, 0.241, 0.487, 0.729, 0.893, 0.970, 0.994, 0.999, 1.000, 1.000,
        ],
        &[0.000, 0.000, 0.005, 0.033, 0.148, 0.423, 0.790, 1.000],
        &[
            0.000, 0.000, 0.001, 0.001, 0.006, 0.033, 0.121, 0.322, 0.624, 0.893, 1.000,
        ],
    ];
    for (c, (&(kappa, rho_, _), table)) in cases.iter().zip(printed).enumerate() {
        let law = OffspringLaw::binomial(kappa, rho_).unwrap();
        for (k, &want) in table.iter().enumerate() {
            let got = law.cdf(k as u64);
            checks += 1;
            if (got - want).abs() > 5e-4 {
                failures.push(format!("case {} cdf({k}) = {got:.6} vs {want}", c + 1));
            }
        }
    }
    Outcome {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{checks} checks exact")
        } else {
            format!("{} of {checks} checks off: {}", failures.len(), failures.join("; "))
        },
    }
}

fn criterion_2() -> Outcome {
    let mut rng = StreamSeed::new(2).stream(0);
    let mut worst_scale = 0.0f64;
    let mut failures = Vec::new();
    for i in 0..1000 {
        let len = rng.random_range(1..12);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(0.01..1e4)).collect();
        let y: Vec<f64> = (0..len).map(|_| rng.random_range(0.01..1e4)).collect();
        let c = 10f64.powf(rng.random_range(-3.0..3.0));
        let v = |a: &[f64]| DiscrepancyVector::new(a.to_vec()).unwrap();
        let d = rho(&v(&x), &v(&y)).unwrap();
        if rho(&v(&y), &v(&x)).unwrap() != d {
            failures.push(format!("asymmetric at {i}"));
        }
        if rho(&v(&x), &v(&x)).unwrap() != 0.0 {
            failures.push(format!("rho(x,x) != 0 at {i}"));
        }
        let cx: Vec<f64> = x.iter().map(|a| c * a).collect();
        let cy: Vec<f64> = y.iter().map(|a| c * a).collect();
        let dc = rho(&v(&cx), &v(&cy)).unwrap();
        worst_scale = worst_scale.max((dc - d).abs() / d.max(1e-300));
    }
    if worst_scale > 1e-12 {
        failures.push(format!("scale invariance off by {worst_scale:e}"));
    }
    let obs = load_observations(&fixtures().join("example2.csv")).unwrap().sample;
    let s = summary(&obs).unwrap();
    // oracle: direct summation over the fixture
    let z: Vec<f64> = obs.sizes.iter().map(|z| z.unwrap() as f64).collect();
    let n = z.len() - 1;
    let total: f64 = z[1..].iter().sum();
    let before: f64 = z[..n].iter().sum();
    let phi = obs.last_progenitors.unwrap() as f64;
    let oracle = [total, total / before, phi / z[n - 1], z[n] / phi];
    let expected = [1215.0, 1.215, 131.0 / 166.0, 216.0 / 131.0];
    let got = s.coordinates();
    for j in 0..4 {
        if (got[j] - oracle[j]).abs() > 1e-12 * oracle[j] || (oracle[j] - expected[j]).abs() > 1e-12 {
            failures.push(format!("summary[{j}] = {} vs {}", got[j], expected[j]));
        }
    }
    Outcome {
        pass: failures.is_empty(),
        detail: format!(
            "1000 vectors, worst relative scale error {worst_scale:.1e}; summary = {:?}{}",
            got,
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join("; "))
            }
        ),
    }
}

fn criterion_3() -> Outcome {
    let mut rng = StreamSeed::new(3).stream(0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let family = match rng.random_range(0..4) {
            0 => GrowthFamily::Verhulst,
            1 => GrowthFamily::ThetaLogistic {
                theta: rng.random_range(0.05..5.0),
            },
            2 => GrowthFamily::Hassell {
                beta: rng.random_range(0.05..3.0),
            },
            _ => GrowthFamily::Gompertz,
        };
        let m = 10.0 - rng.random_range(0.0..9.0 - 1e-9);
        let k = 10f64.powf(rng.random_range(2.0..=7.0));
        let ke = family.equilibrium(m, k);
        let next = m * ke * family.raw_success(m, ke, k);
        worst = worst.max((next - ke).abs() / ke);
    }
    Outcome {
        pass: worst <= 1e-9,
        detail: format!("1000 draws, worst relative residual {worst:.2e}"),
    }
}

fn criterion_4() -> Outcome {
    let c_probs = [0.15, 0.25, 0.35, 0.25];
    let c_gamma = 0.7;
    let observed = SummaryStatistic {
        total: 1215.0,
        growth_ratio: 1.215,
        progenitor_fraction: Some(131.0 / 166.0),
        mean_ratio: Some(216.0 / 131.0),
    };
    let obs = observed.coordinates();
    // rows: summary coordinates; columns: p0..p3, gamma (probability
    // columns sum to zero so every planted pmf sums to one)
    let b = [
        [1e-4, -2e-4, 5e-5, 5e-5, 1e-4],
        [0.02, -0.05, 0.01, 0.02, -0.04],
        [-0.03, 0.01, 0.01, 0.01, 0.05],
        [0.01, 0.02, -0.04, 0.01, 0.02],
    ];
    let mut rng = StreamSeed::new(4).stream(0);
    let mut params = Vec::new();
    let mut rows = Vec::new();
    for i in 0..80 {
        let s = SummaryStatistic {
            total: obs[0] * rng.random_range(0.8..1.2),
            growth_ratio: obs[1] * rng.random_range(0.8..1.2),
            progenitor_fraction: Some(obs[2] * rng.random_range(0.8..1.2)),
            mean_ratio: Some(obs[3] * rng.random_range(0.8..1.2)),
        };
        let d: Vec<f64> = s.coordinates().iter().zip(&obs).map(|(a, o)| a - o).collect();
        let shift = |col: usize| (0..4).map(|r| b[r][col] * d[r]).sum::<f64>();
        params.push((
            (0..4).map(|j| c_probs[j] + shift(j)).collect::<Vec<f64>>(),
            c_gamma + shift(4),
        ));
        rows.push(Selected {
            index: i,
            summary: s,
            distance: (i + 1) as f64 / 80.0,
        });
    }
    let selection = Selection {
        kappa: 3,
        candidates: 80,
        degenerate: 0,
        rows,
        epsilon: 1.0,
    };
    let family = ControlFamily::BinomialXi {
        xi: SizeMap::LogAugmented,
    };
    let adjusted = match regression_adjust(&params, &selection, &observed, family, (0.0, 1.0)) {
        Ok(a) => a,
        Err(e) => {
            return Outcome {
                pass: false,
                detail: format!("adjustment failed: {e}"),
            }
        }
    };
    let mut worst = 0.0f64;
    for r in &adjusted.rows {
        for (p, c) in r.probs.iter().zip(c_probs) {
            worst = worst.max((p - c).abs());
        }
        worst = worst.max((r.gamma - c_gamma).abs());
    }
    Outcome {
        pass: worst <= 1e-4 && adjusted.rows.len() >= 70,
        detail: format!("{} adjusted rows, worst deviation {worst:.2e}", adjusted.rows.len()),
    }
}

fn criterion_5() -> Outcome {
    let sample = ObservedSample::complete(&[1, 2, 4, 6, 10, 15], Some(7)).unwrap();
    let model = ModelSpec::new(
        sample.clone(),
        ControlFamily::BinomialXi {
            xi: SizeMap::LogAugmented,
        },
    );
    let prior = PriorSpec::flat(3, ControlPrior::Beta { a: 1.0, b: 1.0 }).unwrap();
    let cfg = SmcConfig::new(200, &[1000, 4000, 16000], 30.0).unwrap();
    let comparator = RawComparator::new(&sample).unwrap();
    let mut hits = 0;
    let mut details = Vec::new();
    for s in SEEDS {
        let last = run_smc(&model, &prior, &cfg, &StreamSeed::new(s), &Sequential, |_| {}).unwrap();
        let smc = kappa_posterior(&last.particles, 3, KappaEstimator::Weighted).unwrap();
        // oracle: plain rejection ABC at the same tolerance
        let oracle_seed = StreamSeed::new(1000 + s);
        let mut accepted = [0usize; 4];
        for i in 0..1_000_000u64 {
            let mut rng = oracle_seed.stream(i);
            let (kappa, probs) = prior.sample_model(&mut rng);
            let gamma = prior.control.sample(&mut rng);
            if let Some(t) = model.simulate(&probs, gamma, &mut rng) {
                if comparator.distance(&t) <= last.epsilon {
                    accepted[kappa] += 1;
                }
            }
        }
        let total = (accepted[2] + accepted[3]) as f64;
        let tv = 0.5
            * (2..=3)
                .map(|k| (smc.probability(k) - accepted[k] as f64 / total).abs())
                .sum::<f64>();
        if tv <= 0.1 {
            hits += 1;
        }
        details.push(format!("seed {s}: TV {tv:.3} ({} oracle draws)", total));
    }
    Outcome {
        pass: hits >= 4,
        detail: format!("{hits}/5 within 0.1; {}", details.join(", ")),
    }
}

fn scaled_config(name: &str, seed: u64, out: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&fixtures().join(name)).unwrap();
    cfg.seed = seed;
    cfg.out = out.to_path_buf();
    cfg
}

fn covers(out: &cbp_abc::RefineOutput, name: &str, value: f64) -> (bool, String) {
    match out.posterior.get(name).and_then(|q| q.hpd) {
        Some(h) => (
            h.lo <= value && value <= h.hi,
            format!("{name} ({:.3}, {:.3})", h.lo, h.hi),
        ),
        None => (false, format!("{name} has no HPD")),
    }
}

fn criterion_6(ex: &RayonExecutor, dir: &Path) -> Outcome {
    let mut hits = 0;
    let mut details = Vec::new();
    for s in SEEDS {
        let cfg = scaled_config("example2.conf", s, &dir.join(format!("ex2_{s}")));
        match smc_and_refine(&cfg, ex) {
            Ok((_, r)) => {
                let o = &r.output;
                let k_ok = (4..=7).contains(&o.kappa);
                let (m_ok, m_txt) = covers(o, "m", 1.5);
                let (g_ok, g_txt) = covers(o, "gamma", 0.75);
                if k_ok && m_ok && g_ok {
                    hits += 1;
                }
                details.push(format!("seed {s}: kappa {} {m_txt} {g_txt}", o.kappa));
            }
            Err(e) => details.push(format!("seed {s}: {e}")),
        }
    }
    Outcome {
        pass: hits >= 4,
        detail: format!("{hits}/5 runs; {}", details.join(", ")),
    }
}

fn criterion_7(ex: &RayonExecutor, dir: &Path) -> Outcome {
    let mut hits = 0;
    let mut details = Vec::new();
    for s in SEEDS {
        let cfg = scaled_config("case1.conf", s, &dir.join(format!("case1_{s}")));
        match smc_and_refine(&cfg, ex) {
            Ok((_, r)) => {
                let o = &r.output;
                let tm = o.posterior.get("tau_m").map_or(f64::NAN, |q| q.mean);
                if (4..=6).contains(&o.kappa) && (tm - 2.88).abs() <= 0.45 {
                    hits += 1;
                }
                details.push(format!("seed {s}: kappa {} tau_m {tm:.3}", o.kappa));
            }
            Err(e) => details.push(format!("seed {s}: {e}")),
        }
    }
    Outcome {
        pass: hits >= 4,
        detail: format!("{hits}/5 runs; {}", details.join(", ")),
    }
}

fn criterion_8(ex: &RayonExecutor, dir: &Path) -> Outcome {
    let mut theta2 = 0;
    let mut ke_ok = true;
    let mut details = Vec::new();
    for s in SEEDS {
        let cfg = scaled_config("seal.conf", s, &dir.join(format!("seal_{s}")));
        match fit_growth_cmd(&cfg, ex) {
            Ok(r) => {
                let best = r.best().expect("a selected model");
                if best.family == (GrowthFamily::ThetaLogistic { theta: 2.0 }) {
                    theta2 += 1;
                }
                let ke = best.stage2.posterior.get("K_e").map_or(f64::NAN, |q| q.mean);
                ke_ok &= ke > 5000.0 && ke < 10000.0;
                let runner_up = r
                    .fits
                    .iter()
                    .filter_map(|(_, f)| f.as_ref().ok())
                    .filter(|f| f.family != best.family)
                    .max_by(|a, b| a.score.r2g.total_cmp(&b.score.r2g))
                    .map(|f| format!("{} {:.4}", f.family, f.score.r2g))
                    .unwrap_or_default();
                details.push(format!(
                    "seed {s}: {} r2g {:.4} (next {runner_up}) K_e {ke:.0}",
                    best.family, best.score.r2g
                ));
            }
            Err(e) => {
                ke_ok = false;
                details.push(format!("seed {s}: {e}"));
            }
        }
    }
    Outcome {
        pass: theta2 >= 3 && ke_ok,
        detail: format!(
            "theta_logistic:2 selected in {theta2}/5, K_e means {}; {}",
            if ke_ok {
                "all in (5000, 10000)"
            } else {
                "not all in (5000, 10000)"
            },
            details.join(", ")
        ),
    }
}

fn run_cbp(args: &[&str], out: &Path, threads: usize) -> (bool, Vec<u8>) {
    let o = Command::new(env!("CARGO_BIN_EXE_cbp"))
        .args(args)
        .args(["--out", out.to_str().unwrap(), "--threads", &threads.to_string()])
        .output()
        .expect("binary runs");
    (o.status.success(), o.stdout)
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, acc: &mut Vec<(PathBuf, Vec<u8>)>) {
        if let Ok(entries) = std::fs::read_dir(dir) {
            for e in entries {
                let p = e.unwrap().path();
                if p.is_dir() {
                    walk(root, &p, acc);
                } else {
                    acc.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
                }
            }
        }
    }
    let mut acc = Vec::new();
    walk(dir, dir, &mut acc);
    acc.sort();
    acc
}

fn criterion_9(dir: &Path) -> Outcome {
    let smc_conf = dir.join("det.conf");
    std::fs::write(
        &smc_conf,
        format!(
            "observations = {}\ngamma_prior = beta(1, 1)\nkappa_max = 8\nparticles = 100\n\
             pools = 1000, 4000\nkeep_fraction = 1\nmin_model_particles = 10\nseed = 9\n",
            fixtures().join("case1.csv").display()
        ),
    )
    .unwrap();
    let growth_conf = dir.join("growth.conf");
    std::fs::write(
        &growth_conf,
        format!(
            "observations = {}\ngamma_prior = uniform(5000, 10000)\nkappa_max = 4\nparticles = 60\n\
             pools = 600, 1800\nkeep_fraction = 1\nmin_model_particles = 8\n\
             growth_families = verhulst, theta_logistic(2), hassell(1)\nforecast_replicates = 50\nseed = 9\n",
            fixtures().join("seal.csv").display()
        ),
    )
    .unwrap();
    let simulate_conf = fixtures().join("case4_generate.conf");

    let mut failures = Vec::new();
    let mut compared = 0;
    for (name, threads) in [("a", 1), ("b", 1), ("c", 4)] {
        let base = dir.join(format!("det_{name}"));
        let smc_out = base.join("smc");
        let runs: Vec<(&str, Vec<String>, PathBuf)> = vec![
            (
                "simulate",
                vec!["simulate".into(), "-c".into(), simulate_conf.display().to_string()],
                base.join("simulate"),
            ),
            (
                "smc",
                vec!["smc".into(), "-c".into(), smc_conf.display().to_string()],
                smc_out.clone(),
            ),
            (
                "refine",
                vec![
                    "refine".into(),
                    "-c".into(),
                    smc_conf.display().to_string(),
                    "--archive".into(),
                    smc_out.join("smc_iter2.csv").display().to_string(),
                ],
                base.join("refine"),
            ),
            (
                "fit-growth",
                vec!["fit-growth".into(), "-c".into(), growth_conf.display().to_string()],
                base.join("growth"),
            ),
            (
                "summarize",
                vec!["summarize".into(), smc_out.join("smc_iter2.csv").display().to_string()],
                base.join("summarize"),
            ),
        ];
        for (cmd, args, out) in runs {
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            let (ok, stdout) = run_cbp(&args, &out, threads);
            if !ok {
                failures.push(format!("{cmd} failed in run {name}"));
            }
            std::fs::write(out.with_extension("stdout"), stdout).unwrap();
        }
    }
    // paths in stdout differ between runs, so compare stdout with the run
    // directory name normalised
    let normalise = |run: &str| -> Vec<(PathBuf, Vec<u8>)> {
        let base = dir.join(format!("det_{run}"));
        let mut files = snapshot(&base);
        for (_, bytes) in files.iter_mut() {
            let text = String::from_utf8_lossy(bytes).replace(&format!("det_{run}"), "det_X");
            *bytes = text.into_bytes();
        }
        files
    };
    let reference = normalise("a");
    for other in ["b", "c"] {
        let files = normalise(other);
        compared += files.len();
        if files.len() != reference.len() {
            failures.push(format!(
                "run {other} produced {} files, run a {}",
                files.len(),
                reference.len()
            ));
        }
        for ((pa, ba), (pb, bb)) in reference.iter().zip(&files) {
            if pa != pb || ba != bb {
                failures.push(format!("{} differs in run {other}", pa.display()));
            }
        }
    }
    Outcome {
        pass: failures.is_empty() && !reference.is_empty(),
        detail: if failures.is_empty() {
            format!("5 subcommands x 3 runs (threads 1, 1, 4): {compared} files identical")
        } else {
            failures.join("; ")
        },
    }
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let ex = RayonExecutor::new(1).unwrap();
    type Criterion<'a> = (&'a str, Box<dyn Fn() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("exact algebra", Box::new(criterion_1)),
        ("distance and summary statistic", Box::new(criterion_2)),
        ("equilibrium fixed point", Box::new(criterion_3)),
        ("planted regression adjustment", Box::new(criterion_4)),
        ("SMC vs brute-force rejection on a toy model", Box::new(criterion_5)),
        ("scaled geometric example", Box::new(|| criterion_6(&ex, dir.path()))),
        ("scaled binomial case 1", Box::new(|| criterion_7(&ex, dir.path()))),
        ("seal growth-model selection", Box::new(|| criterion_8(&ex, dir.path()))),
        (
            "determinism across runs and threads",
            Box::new(|| criterion_9(dir.path())),
        ),
    ];
    let mut failed = Vec::new();
    for (i, (title, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = run();
        report(i + 1, title, started, &outcome);
        if !outcome.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
