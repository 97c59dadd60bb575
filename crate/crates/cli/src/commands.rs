//! The subcommands. Each returns a report that `main` prints; every file is
//! written atomically under the configured output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cbp_abc::{
    fit_growth, kappa_posterior, refine, run_smc, select_model, simulate, ControlFamily, Executor, GrowthFamily,
    GrowthFit, KappaEstimator, KappaPosterior, ModelSpec, ObservedSample, Particle, Population, RefineOutput,
    SummaryLayout,
};

use cbp_abc::refine::RegressionStatus;

use crate::archive::{ArchiveHeader, ParticleArchive};
use crate::config::{family_text, sha256_hex, RunConfig};
use crate::error::{CliError, Result};
use crate::observations::{format_observations, load_observations, Observations};
use crate::output::{csv_buffer, csv_err, finish, num, opt_num, write_atomic};

const SIMULATE_DOMAIN: u64 = 0x51AA;

/// Observations together with the hash of the file they came from.
pub struct Dataset {
    pub path: PathBuf,
    pub observations: Observations,
    pub hash: String,
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            observations: load_observations(path)?,
            hash: sha256_hex(&bytes),
        })
    }

    pub fn sample(&self) -> &ObservedSample {
        &self.observations.sample
    }
}

fn run_id(config_hash: &str, data_hash: &str) -> String {
    sha256_hex(format!("{config_hash}:{data_hash}").as_bytes())[..16].to_string()
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv_buffer();
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    write_atomic(path, &finish(w))
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateReport {
    pub sizes: Vec<u64>,
    pub extinct_at: Option<usize>,
    pub saturated: bool,
    pub files: Vec<PathBuf>,
}

/// Simulates one path from `offspring`, `control` + `control_parameter`,
/// `z0` and `generations`.
pub fn simulate_cmd(cfg: &RunConfig) -> Result<SimulateReport> {
    let missing = |key: &str| CliError::Config(format!("missing key `{key}` (required by `simulate`)"));
    let offspring = cfg.offspring.clone().ok_or_else(|| missing("offspring"))?;
    let gamma = cfg.control_parameter.ok_or_else(|| missing("control_parameter"))?;
    let generations = cfg.generations.ok_or_else(|| missing("generations"))?;
    let control = cfg.control.with_parameter(gamma)?;
    control.check_offspring_mean(offspring.mean())?;
    let mut rng = cfg.master_seed().derive(SIMULATE_DOMAIN).stream(0);
    let t = simulate(&offspring, &control, cfg.z0, generations, cfg.max_population, &mut rng);

    let rows: Vec<Vec<String>> = t
        .sizes
        .iter()
        .enumerate()
        .map(|(g, z)| {
            let phi = g
                .checked_sub(1)
                .map_or_else(|| "NA".into(), |k| t.progenitors[k].to_string());
            vec![g.to_string(), z.to_string(), phi]
        })
        .collect();
    let traj_path = cfg.out.join("trajectory.csv");
    write_csv(&traj_path, &strings(&["generation", "size", "phi_last"]), &rows)?;

    let obs = Observations {
        first_index: 0,
        sample: ObservedSample::complete(&t.sizes, t.last_progenitors())?,
    };
    let obs_path = cfg.out.join("observations.csv");
    write_atomic(&obs_path, format_observations(&obs).as_bytes())?;
    Ok(SimulateReport {
        sizes: t.sizes,
        extinct_at: t.extinct_at,
        saturated: t.saturated,
        files: vec![traj_path, obs_path],
    })
}

fn model_spec(cfg: &RunConfig, data: &Dataset) -> ModelSpec {
    let mut model = ModelSpec::new(data.sample().clone(), cfg.control);
    model.max_population = cfg.max_population;
    model
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationInfo {
    pub iteration: usize,
    pub epsilon: f64,
    pub attempts: u64,
    pub archive: PathBuf,
}

pub struct SmcReport {
    pub iterations: Vec<IterationInfo>,
    pub kappa: KappaPosterior,
    pub final_population: Population,
    pub files: Vec<PathBuf>,
}

pub fn archive_path(out: &Path, iteration: usize) -> PathBuf {
    out.join(format!("smc_iter{iteration}.csv"))
}

/// First stage: one archive per iteration, then the posterior of `kappa`.
pub fn smc_cmd<E: Executor + ?Sized>(cfg: &RunConfig, executor: &E) -> Result<SmcReport> {
    let data = Dataset::load(cfg.require_observations("smc")?)?;
    let prior = cfg.prior_spec("smc")?;
    let smc = cfg.smc_config("smc")?;
    let model = model_spec(cfg, &data);
    let layout = SummaryLayout::for_sample(data.sample());
    let config_hash = cfg.config_hash();
    let id = run_id(&config_hash, &data.hash);

    let mut iterations = Vec::new();
    let mut failure = None;
    let last = run_smc(&model, &prior, &smc, &cfg.master_seed(), executor, |pop| {
        if failure.is_some() {
            return;
        }
        let path = archive_path(&cfg.out, pop.iteration);
        let archive = ParticleArchive::new(
            ArchiveHeader {
                run_id: id.clone(),
                iteration: pop.iteration,
                epsilon: pop.epsilon,
                attempts: pop.attempts,
                config_hash: config_hash.clone(),
                data_hash: data.hash.clone(),
                kappa_max: prior.kappa_max,
            },
            pop.particles.clone(),
            &layout,
        );
        match archive.save(&path) {
            Ok(()) => iterations.push(IterationInfo {
                iteration: pop.iteration,
                epsilon: pop.epsilon,
                attempts: pop.attempts,
                archive: path,
            }),
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }

    let kappa = kappa_posterior(&last.particles, prior.kappa_max, cfg.refine.kappa_estimator)?;
    let weighted = kappa_posterior(&last.particles, prior.kappa_max, KappaEstimator::Weighted)?;
    let counts = kappa_posterior(&last.particles, prior.kappa_max, KappaEstimator::Counts)?;
    let pmf_path = cfg.out.join("kappa_posterior.csv");
    let rows: Vec<Vec<String>> = weighted
        .pmf
        .iter()
        .zip(&counts.pmf)
        .map(|((k, w), (_, c))| vec![k.to_string(), num(*w), num(*c)])
        .collect();
    write_csv(&pmf_path, &strings(&["kappa", "weighted", "counts"]), &rows)?;

    let mut files: Vec<PathBuf> = iterations.iter().map(|i| i.archive.clone()).collect();
    files.push(pmf_path);
    Ok(SmcReport {
        iterations,
        kappa,
        final_population: last,
        files,
    })
}

pub struct RefineReport {
    pub output: RefineOutput,
    pub files: Vec<PathBuf>,
}

/// Second stage from a stored archive. Refuses archives produced under a
/// different first-stage configuration or different data.
pub fn refine_cmd(cfg: &RunConfig, archive_path: &Path, kappa: Option<usize>) -> Result<RefineReport> {
    let data = Dataset::load(cfg.require_observations("refine")?)?;
    let archive = ParticleArchive::load(archive_path)?;
    let hash = cfg.config_hash();
    if archive.header.config_hash != hash {
        return Err(CliError::Config(format!(
            "{} was produced with config hash {}, but the supplied config hashes to {hash}",
            archive_path.display(),
            archive.header.config_hash
        )));
    }
    if archive.header.data_hash != data.hash {
        return Err(CliError::Data(format!(
            "{} was produced from different observations (data hash {} vs {})",
            archive_path.display(),
            archive.header.data_hash,
            data.hash
        )));
    }
    let kappa_max = cfg.require_kappa_max("refine")?;
    let prior = cfg.require_prior("refine")?;
    let output = refine(
        &archive.particles(),
        &model_spec(cfg, &data),
        kappa_max,
        &prior,
        &cfg.refine,
        kappa,
    )?;
    let files = write_stage2(&cfg.out, &output, cfg.control, cfg.refine.kappa_estimator)?;
    Ok(RefineReport { output, files })
}

/// Runs both stages in one process, writing the same files as `smc`
/// followed by `refine`.
pub fn smc_and_refine<E: Executor + ?Sized>(cfg: &RunConfig, executor: &E) -> Result<(SmcReport, RefineReport)> {
    let smc = smc_cmd(cfg, executor)?;
    let data = Dataset::load(cfg.require_observations("smc")?)?;
    let output = refine(
        &smc.final_population.particles,
        &model_spec(cfg, &data),
        cfg.require_kappa_max("smc")?,
        &cfg.require_prior("smc")?,
        &cfg.refine,
        None,
    )?;
    let files = write_stage2(&cfg.out, &output, cfg.control, cfg.refine.kappa_estimator)?;
    Ok((smc, RefineReport { output, files }))
}

fn status_text(s: RegressionStatus) -> &'static str {
    match s {
        RegressionStatus::Applied => "applied",
        RegressionStatus::NoRegressors => "no_regressors",
        RegressionStatus::Singular => "singular",
    }
}

fn estimator_text(e: KappaEstimator) -> &'static str {
    match e {
        KappaEstimator::Weighted => "weighted",
        KappaEstimator::Counts => "counts",
    }
}

/// Writes the adjusted sample, the key-value posterior summary, one KDE
/// grid per quantity and the joint `(m, gamma)` grid.
pub fn write_stage2(
    dir: &Path,
    out: &RefineOutput,
    control: ControlFamily,
    estimator: KappaEstimator,
) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let (gamma_name, threshold_name) = match control {
        ControlFamily::BinomialXi { .. } => ("gamma", "tau_m"),
        ControlFamily::DensityDependent { .. } => ("K", "K_e"),
    };

    let k = out.adjusted.kappa;
    let mut header: Vec<String> = (0..=k).map(|j| format!("p{j}")).collect();
    header.extend(strings(&["raw_sum", gamma_name, "m", threshold_name, "weight"]));
    let rows: Vec<Vec<String>> = out
        .adjusted
        .rows
        .iter()
        .map(|r| {
            let mut row: Vec<String> = r.probs.iter().map(|&p| num(p)).collect();
            let threshold = match control {
                ControlFamily::BinomialXi { .. } => r.threshold,
                ControlFamily::DensityDependent { model } => Some(model.equilibrium(r.m, r.gamma)),
            };
            row.extend([
                num(r.raw_sum),
                num(r.gamma),
                num(r.m),
                opt_num(threshold),
                num(r.weight),
            ]);
            row
        })
        .collect();
    let path = dir.join("adjusted.csv");
    write_csv(&path, &header, &rows)?;
    files.push(path);

    let mut s = String::new();
    let w = &mut s;
    writeln!(w, "kappa_estimator = {}", estimator_text(estimator)).unwrap();
    writeln!(w, "kappa_hat = {}", out.kappa_posterior.estimate).unwrap();
    writeln!(w, "kappa_mean = {}", num(out.kappa_posterior.mean)).unwrap();
    writeln!(w, "kappa_used = {}", out.kappa).unwrap();
    for (kk, p) in &out.kappa_posterior.pmf {
        writeln!(w, "kappa_pmf.{kk} = {}", num(*p)).unwrap();
    }
    writeln!(
        w,
        "observed_summary = {}",
        join_nums(&out.observed_summary.coordinates())
    )
    .unwrap();
    writeln!(w, "candidates = {}", out.selection.candidates).unwrap();
    writeln!(w, "degenerate = {}", out.selection.degenerate).unwrap();
    writeln!(w, "selected = {}", out.selection.rows.len()).unwrap();
    writeln!(w, "epsilon = {}", num(out.selection.epsilon)).unwrap();
    writeln!(w, "regression = {}", status_text(out.adjusted.status)).unwrap();
    writeln!(w, "rejected_negative = {}", out.adjusted.rejected_count).unwrap();
    writeln!(w, "out_of_support = {}", out.adjusted.out_of_support).unwrap();
    writeln!(w, "retained = {}", out.adjusted.rows.len()).unwrap();
    for q in &out.posterior.quantities {
        let n = &q.name;
        writeln!(w, "{n}.mean = {}", num(q.mean)).unwrap();
        writeln!(w, "{n}.sd = {}", num(q.sd)).unwrap();
        if let Some(d) = &q.density {
            writeln!(w, "{n}.bandwidth = {}", num(d.bandwidth)).unwrap();
        }
        if let Some(h) = &q.hpd {
            writeln!(w, "{n}.hpd_level = {}", num(h.level)).unwrap();
            writeln!(w, "{n}.hpd_lo = {}", num(h.lo)).unwrap();
            writeln!(w, "{n}.hpd_hi = {}", num(h.hi)).unwrap();
            writeln!(w, "{n}.hpd_mass = {}", num(h.mass)).unwrap();
            writeln!(w, "{n}.hpd_connected = {}", h.connected).unwrap();
        }
    }
    let path = dir.join("posterior_summary.txt");
    write_atomic(&path, s.as_bytes())?;
    files.push(path);

    for q in &out.posterior.quantities {
        if let Some(d) = &q.density {
            let rows: Vec<Vec<String>> = d
                .grid
                .iter()
                .zip(&d.density)
                .map(|(x, y)| vec![num(*x), num(*y)])
                .collect();
            let path = dir.join(format!("kde_{}.csv", q.name));
            write_csv(&path, &strings(&[q.name.as_str(), "density"]), &rows)?;
            files.push(path);
        }
    }
    if let Some(j) = &out.posterior.joint {
        let mut rows = Vec::with_capacity(j.xs.len() * j.ys.len());
        for (a, x) in j.xs.iter().enumerate() {
            for (b, y) in j.ys.iter().enumerate() {
                rows.push(vec![num(*x), num(*y), num(j.density[a * j.ys.len() + b])]);
            }
        }
        let path = dir.join("kde2d_m_gamma.csv");
        write_csv(&path, &strings(&["m", gamma_name, "density"]), &rows)?;
        files.push(path);
    }
    Ok(files)
}

fn join_nums(xs: &[f64]) -> String {
    xs.iter().map(|x| num(*x)).collect::<Vec<_>>().join(",")
}

pub struct GrowthReport {
    pub fits: Vec<(GrowthFamily, Result<GrowthFit>)>,
    pub selected: Option<GrowthFamily>,
    pub files: Vec<PathBuf>,
}

impl GrowthReport {
    pub fn best(&self) -> Option<&GrowthFit> {
        let family = self.selected?;
        self.fits.iter().find_map(|(f, r)| match r {
            Ok(fit) if *f == family => Some(fit),
            _ => None,
        })
    }
}

/// Fits every family of the grid, ranks them by `r2g` and writes the
/// winner's posterior outputs under `best/`.
pub fn fit_growth_cmd<E: Executor + ?Sized>(cfg: &RunConfig, executor: &E) -> Result<GrowthReport> {
    let data = Dataset::load(cfg.require_observations("fit-growth")?)?;
    let gcfg = cfg.growth_config("fit-growth")?;
    let results = fit_growth(data.sample(), &gcfg, &cfg.master_seed(), executor);
    let fits: Vec<(GrowthFamily, Result<GrowthFit>)> = gcfg
        .families
        .iter()
        .zip(results)
        .map(|(f, r)| (*f, r.map_err(CliError::from)))
        .collect();

    let scores: Vec<_> = fits
        .iter()
        .filter_map(|(_, r)| r.as_ref().ok().map(|f| f.score.clone()))
        .collect();
    let selected = select_model(&scores).map(|s| s.family);
    if selected.is_none() {
        let first = fits.into_iter().find_map(|(_, r)| r.err());
        return Err(first.unwrap_or_else(|| CliError::Data("no growth family could be fitted".into())));
    }

    let mut files = Vec::new();
    let rows: Vec<Vec<String>> = fits
        .iter()
        .map(|(f, r)| {
            let mut row = vec![family_text(f), f.name().to_string(), opt_num(f.shape())];
            match r {
                Ok(fit) => row.extend([
                    num(fit.score.r2g),
                    fit.stage2.kappa.to_string(),
                    num(fit.mean_k),
                    opt_num(fit.stage2.posterior.get("K_e").map(|q| q.mean)),
                    opt_num(fit.stage2.posterior.get("m").map(|q| q.mean)),
                    (Some(*f) == selected).to_string(),
                    "ok".into(),
                ]),
                Err(e) => row.extend([
                    "NA".into(),
                    "NA".into(),
                    "NA".into(),
                    "NA".into(),
                    "NA".into(),
                    "false".into(),
                    e.to_string(),
                ]),
            }
            row
        })
        .collect();
    let path = cfg.out.join("growth_scores.csv");
    write_csv(
        &path,
        &strings(&[
            "model", "family", "shape", "r2g", "kappa", "K_mean", "K_e_mean", "m_mean", "selected", "status",
        ]),
        &rows,
    )?;
    files.push(path);

    let ok: Vec<&GrowthFit> = fits.iter().filter_map(|(_, r)| r.as_ref().ok()).collect();
    let mut header = strings(&["index", "observed"]);
    header.extend(ok.iter().map(|f| family_text(&f.family)));
    let rows: Vec<Vec<String>> = data
        .sample()
        .sizes
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let mut row = vec![
                (data.observations.first_index + i as i64).to_string(),
                z.map_or_else(|| "NA".into(), |z| z.to_string()),
            ];
            row.extend(ok.iter().map(|f| opt_num(f.score.expected[i])));
            row
        })
        .collect();
    let path = cfg.out.join("forecasts.csv");
    write_csv(&path, &header, &rows)?;
    files.push(path);

    let mut report = GrowthReport { fits, selected, files };
    let best = report.best().expect("selected fit exists");
    let family = ControlFamily::DensityDependent { model: best.family };
    let best_files = write_stage2(&cfg.out.join("best"), &best.stage2, family, cfg.refine.kappa_estimator)?;
    report.files.extend(best_files);
    Ok(report)
}

/// Prints a human-readable table for any file this tool reads or writes.
pub fn summarize_cmd(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let first = text.lines().next().unwrap_or("").trim();
    if first == crate::archive::MAGIC {
        return summarize_archive(path);
    }
    if first.eq_ignore_ascii_case("index,value") {
        let obs = load_observations(path)?;
        return Ok(summarize_observations(&obs));
    }
    if first.contains(',') {
        return summarize_csv(path);
    }
    if text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .all(|l| l.contains('=') || l.trim_start().starts_with('#'))
    {
        return Ok(summarize_key_values(&text));
    }
    Err(CliError::Data(format!("{}: unrecognised file format", path.display())))
}

fn summarize_archive(path: &Path) -> Result<String> {
    let a = ParticleArchive::load(path)?;
    let h = &a.header;
    let mut s = String::new();
    writeln!(s, "particle archive {}", path.display()).unwrap();
    writeln!(s, "  run_id       {}", h.run_id).unwrap();
    writeln!(s, "  iteration    {}", h.iteration).unwrap();
    writeln!(s, "  epsilon      {:.6e}", h.epsilon).unwrap();
    writeln!(s, "  attempts     {}", h.attempts).unwrap();
    writeln!(s, "  particles    {}", a.rows.len()).unwrap();
    writeln!(s, "  kappa_max    {}", h.kappa_max).unwrap();
    writeln!(s, "  config_hash  {}", h.config_hash).unwrap();
    writeln!(s).unwrap();
    writeln!(
        s,
        "{:>5} {:>6} {:>12} {:>10} {:>10} {:>12}",
        "kappa", "count", "model_mass", "mean_m", "mean_gamma", "min_dist"
    )
    .unwrap();
    let particles: Vec<&Particle> = a.rows.iter().map(|r| &r.particle).collect();
    for k in 0..=h.kappa_max {
        let group: Vec<&&Particle> = particles.iter().filter(|p| p.kappa == k).collect();
        if group.is_empty() {
            continue;
        }
        let mass: f64 = group.iter().map(|p| p.model_weight).sum();
        let wsum: f64 = group.iter().map(|p| p.weight).sum();
        let mean = |f: &dyn Fn(&Particle) -> f64| -> f64 {
            if wsum > 0.0 {
                group.iter().map(|p| p.weight * f(p)).sum::<f64>() / wsum
            } else {
                f64::NAN
            }
        };
        let m = mean(&|p| p.offspring_mean());
        let g = mean(&|p| p.gamma);
        let dmin = group.iter().map(|p| p.distance).fold(f64::INFINITY, f64::min);
        writeln!(
            s,
            "{k:>5} {:>6} {mass:>12.6} {m:>10.4} {g:>10.4} {dmin:>12.6e}",
            group.len()
        )
        .unwrap();
    }
    Ok(s)
}

fn summarize_observations(obs: &Observations) -> String {
    let mut s = String::new();
    let sizes: Vec<u64> = obs.sample.sizes.iter().flatten().copied().collect();
    let missing = obs.sample.sizes.len() - sizes.len();
    writeln!(
        s,
        "observations: {} rows from index {}, {} missing, phi = {}",
        obs.sample.sizes.len(),
        obs.first_index,
        missing,
        obs.sample
            .last_progenitors
            .map_or_else(|| "NA".into(), |p| p.to_string())
    )
    .unwrap();
    writeln!(s, "{:>8} {:>12}", "index", "value").unwrap();
    for (i, z) in obs.sample.sizes.iter().enumerate() {
        let v = z.map_or_else(|| "NA".into(), |z| z.to_string());
        writeln!(s, "{:>8} {v:>12}", obs.first_index + i as i64).unwrap();
    }
    s
}

fn summarize_csv(path: &Path) -> Result<String> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let mut cols: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    let mut rows = 0usize;
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for (c, v) in cols.iter_mut().zip(rec.iter()) {
            c.push(v.to_string());
        }
        rows += 1;
    }
    let mut s = String::new();
    writeln!(s, "{}: {rows} rows, {} columns", path.display(), header.len()).unwrap();
    writeln!(
        s,
        "{:<16} {:>6} {:>4} {:>14} {:>14} {:>14}",
        "column", "n", "NA", "min", "mean", "max"
    )
    .unwrap();
    for (name, values) in header.iter().zip(&cols) {
        let na = values.iter().filter(|v| v.as_str() == "NA").count();
        let nums: Vec<f64> = values.iter().filter_map(|v| v.parse::<f64>().ok()).collect();
        if !nums.is_empty() && nums.len() + na == values.len() {
            let min = nums.iter().copied().fold(f64::INFINITY, f64::min);
            let max = nums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = nums.iter().sum::<f64>() / nums.len() as f64;
            writeln!(
                s,
                "{name:<16} {:>6} {na:>4} {min:>14.6} {mean:>14.6} {max:>14.6}",
                nums.len()
            )
            .unwrap();
        } else {
            let mut distinct: Vec<&String> = values.iter().collect();
            distinct.sort();
            distinct.dedup();
            writeln!(
                s,
                "{name:<16} {:>6} {na:>4} {:>44}",
                values.len(),
                format!("{} distinct values", distinct.len())
            )
            .unwrap();
        }
    }
    Ok(s)
}

fn summarize_key_values(text: &str) -> String {
    let pairs: Vec<(&str, &str)> = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect();
    let width = pairs.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::new();
    for (k, v) in pairs {
        writeln!(s, "{k:<width$}  {v}").unwrap();
    }
    s
}
