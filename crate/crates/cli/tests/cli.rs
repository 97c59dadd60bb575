use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cbp_cli::commands::smc_and_refine;
use cbp_cli::{load_observations, ParticleArchive, RayonExecutor, RunConfig};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn cbp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.conf");
    let text = format!(
        "observations = {}\n\
         gamma_prior = beta(1, 1)\n\
         kappa_max = 6\n\
         particles = 60\n\
         pools = 600, 1800\n\
         keep_fraction = 1\n\
         min_model_particles = 8\n\
         seed = 3\n\
         out = out\n{extra}",
        fixtures().join("case1.csv").display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn json_error(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    serde_json::from_str(line).expect("last stderr line is JSON")
}

#[test]
fn fixtures_load() {
    let seal = load_observations(&fixtures().join("seal.csv")).unwrap();
    assert_eq!(seal.sample.sizes.len(), 25);
    assert_eq!(seal.first_index, 1975);
    let missing: Vec<i64> = seal
        .sample
        .sizes
        .iter()
        .enumerate()
        .filter(|(_, z)| z.is_none())
        .map(|(i, _)| 1975 + i as i64)
        .collect();
    assert_eq!(missing, vec![1979, 1990, 1998]);

    let ex2 = load_observations(&fixtures().join("example2.csv")).unwrap();
    assert_eq!(ex2.sample.sizes.len(), 31);
    assert_eq!(ex2.sample.sizes[0], Some(1));
    assert_eq!(ex2.sample.sizes[30], Some(216));
    assert_eq!(ex2.sample.last_progenitors, Some(131));

    for case in 1..=4 {
        let c = load_observations(&fixtures().join(format!("case{case}.csv"))).unwrap();
        assert_eq!(c.sample.sizes.len(), 11);
        assert!(c.sample.last_progenitors.is_some());
    }
}

#[test]
fn empty_observation_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("empty.csv");
    std::fs::write(&obs, "").unwrap();
    let err = load_observations(&obs).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn config_error_exits_1_with_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path(), "particels = 5\n");
    let out = cbp(&["smc", "-c", conf.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let v = json_error(&out);
    assert_eq!(v["error"], "config");
    assert!(v["message"].as_str().unwrap().contains(":10: unknown key `particels`"));
}

#[test]
fn usage_error_exits_1() {
    assert_eq!(cbp(&["smc"]).status.code(), Some(1));
    assert_eq!(cbp(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_error_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("bad.csv");
    std::fs::write(&obs, "index,value\n0,1\n1,four\n").unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(
        &conf,
        "observations = bad.csv\ngamma_prior = beta(1,1)\nkappa_max = 4\nparticles = 10\npools = 100, 200\n",
    )
    .unwrap();
    let out = cbp(&["smc", "-c", conf.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let v = json_error(&out);
    assert_eq!(v["error"], "data");
    assert!(v["message"].as_str().unwrap().contains("row 3"));
}

#[test]
fn budget_exhaustion_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // most prior draws die out before reaching the observed sizes
    let conf = small_config(dir.path(), "max_discard_ratio = 1\n");
    let out = cbp(&[
        "smc",
        "-c",
        conf.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json_error(&out)["error"], "budget");
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn two_process_pipeline_equals_in_process_run() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path(), "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let smc = cbp(&["smc", "-c", conf.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    assert!(smc.status.success(), "{}", String::from_utf8_lossy(&smc.stderr));
    let stdout = String::from_utf8_lossy(&smc.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("kappa_hat = ")));
    let archive = a.join("smc_iter2.csv");
    let refine = cbp(&[
        "refine",
        "-c",
        conf.to_str().unwrap(),
        "--archive",
        archive.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
    ]);
    assert!(refine.status.success(), "{}", String::from_utf8_lossy(&refine.stderr));

    let mut cfg = RunConfig::load(&conf).unwrap();
    cfg.out = b.clone();
    let (smc_report, refine_report) = smc_and_refine(&cfg, &RayonExecutor::new(2).unwrap()).unwrap();
    assert_eq!(smc_report.iterations.len(), 2);
    assert!(refine_report.files.len() >= 5);
    assert_eq!(read_dir_sorted(&a), read_dir_sorted(&b));
}

#[test]
fn refine_refuses_foreign_archives() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path(), "");
    let out = dir.path().join("o");
    assert!(
        cbp(&["smc", "-c", conf.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .status
            .success()
    );
    let archive = out.join("smc_iter2.csv");
    let refine = cbp(&[
        "refine",
        "-c",
        conf.to_str().unwrap(),
        "--archive",
        archive.to_str().unwrap(),
        "--seed",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(refine.status.code(), Some(1));
    assert!(json_error(&refine)["message"].as_str().unwrap().contains("config hash"));

    // stage-two settings may change freely
    let conf2 = small_config(dir.path(), "hpd_level = 0.9\nkde_grid = 128\n");
    let refine = cbp(&[
        "refine",
        "-c",
        conf2.to_str().unwrap(),
        "--archive",
        archive.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(refine.status.success(), "{}", String::from_utf8_lossy(&refine.stderr));
}

#[test]
fn archives_round_trip_and_kde_files_integrate_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path(), "");
    let out = dir.path().join("o");
    let mut cfg = RunConfig::load(&conf).unwrap();
    cfg.out = out.clone();
    let (smc, refine) = smc_and_refine(&cfg, &RayonExecutor::new(1).unwrap()).unwrap();

    let path = out.join("smc_iter2.csv");
    let archive = ParticleArchive::load(&path).unwrap();
    assert_eq!(archive.rows.len(), 60);
    assert_eq!(archive.particles(), smc.final_population.particles);
    let copy = dir.path().join("copy.csv");
    archive.save(&copy).unwrap();
    assert_eq!(ParticleArchive::load(&copy).unwrap(), archive);
    let body = |p: &Path| -> Vec<String> {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("# trajectories"))
            .map(String::from)
            .collect()
    };
    assert_eq!(body(&copy), body(&path));
    assert_eq!(
        std::fs::read(dir.path().join("copy_trajectories.csv")).unwrap(),
        std::fs::read(out.join("smc_iter2_trajectories.csv")).unwrap()
    );

    for q in &refine.output.posterior.quantities {
        let mut reader = csv::Reader::from_path(out.join(format!("kde_{}.csv", q.name))).unwrap();
        let pts: Vec<(f64, f64)> = reader
            .records()
            .map(|r| {
                let r = r.unwrap();
                (r[0].parse().unwrap(), r[1].parse().unwrap())
            })
            .collect();
        let integral: f64 = pts
            .windows(2)
            .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
            .sum();
        assert!((integral - 1.0).abs() < 0.02, "{}: {integral}", q.name);
    }
}

#[test]
fn summarize_reads_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path(), "");
    let out = dir.path().join("o");
    let mut cfg = RunConfig::load(&conf).unwrap();
    cfg.out = out.clone();
    smc_and_refine(&cfg, &RayonExecutor::new(1).unwrap()).unwrap();
    for name in [
        "smc_iter1.csv",
        "smc_iter2_trajectories.csv",
        "kappa_posterior.csv",
        "adjusted.csv",
        "posterior_summary.txt",
        "kde_m.csv",
        "kde2d_m_gamma.csv",
    ] {
        let o = cbp(&["summarize", out.join(name).to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stdout.is_empty());
    }
    let o = cbp(&["summarize", fixtures().join("seal.csv").to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("3 missing"));
}

#[test]
fn simulate_writes_reusable_observations() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let conf = fixtures().join("case2_generate.conf");
    let o = cbp(&["simulate", "-c", conf.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut reader = csv::Reader::from_path(out.join("trajectory.csv")).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["generation", "size", "phi_last"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 11);
    assert_eq!(&rows[0][2], "NA");
    let obs = load_observations(&out.join("observations.csv")).unwrap();
    assert_eq!(obs.sample.sizes.len(), 11);
    assert_eq!(obs.sample.last_progenitors.unwrap().to_string(), rows[10][2]);
}
