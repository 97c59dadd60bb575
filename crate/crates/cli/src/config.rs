//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key may appear
//! at most once; unknown keys are rejected with the line they occur on.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cbp_abc::{
    ControlFamily, ControlPrior, DirichletPrior, GrowthFamily, GrowthFitConfig, KappaEstimator, OffspringLaw,
    PriorSpec, RefineConfig, SizeMap, SmcConfig, StreamSeed,
};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Keys understood by the parser, in documentation order.
pub const KEYS: &[&str] = &[
    "observations",
    "control",
    "size_map",
    "shape",
    "gamma_prior",
    "kappa_max",
    "dirichlet_alpha",
    "particles",
    "pools",
    "tuning_a",
    "sigma_floor",
    "max_discard_ratio",
    "max_population",
    "kappa_estimator",
    "keep_fraction",
    "min_model_particles",
    "kde_grid",
    "hpd_level",
    "grid2d",
    "growth_families",
    "forecast_replicates",
    "offspring",
    "control_parameter",
    "z0",
    "generations",
    "seed",
    "threads",
    "out",
];

/// Keys whose values change what the first stage computes. Only these enter
/// the config hash, so stage-two settings can be varied on an existing
/// archive.
const HASHED_KEYS: &[&str] = &[
    "control",
    "gamma_prior",
    "kappa_max",
    "dirichlet_alpha",
    "particles",
    "pools",
    "tuning_a",
    "sigma_floor",
    "max_discard_ratio",
    "max_population",
    "seed",
];

pub const DEFAULT_THETAS: &[f64] = &[0.25, 0.5, 0.55, 1.0, 1.5, 2.0, 3.0];
pub const DEFAULT_BETAS: &[f64] = &[0.05, 0.25, 0.5, 1.0, 1.25, 2.0];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// The file the config was read from, if any.
    pub source: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    pub control: ControlFamily,
    pub gamma_prior: Option<ControlPrior>,
    pub kappa_max: Option<usize>,
    pub dirichlet_alpha: f64,
    pub particles: Option<usize>,
    pub pools: Option<Vec<usize>>,
    pub tuning_a: f64,
    pub sigma_floor: Option<f64>,
    pub max_discard_ratio: f64,
    pub max_population: u64,
    pub refine: RefineConfig,
    pub growth_families: Vec<GrowthFamily>,
    pub forecast_replicates: usize,
    pub offspring: Option<OffspringLaw>,
    pub control_parameter: Option<f64>,
    pub z0: u64,
    pub generations: Option<usize>,
    pub seed: u64,
    pub threads: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            source: None,
            observations: None,
            control: ControlFamily::BinomialXi {
                xi: SizeMap::LogAugmented,
            },
            gamma_prior: None,
            kappa_max: None,
            dirichlet_alpha: 1.0,
            particles: None,
            pools: None,
            tuning_a: 30.0,
            sigma_floor: None,
            max_discard_ratio: 100.0,
            max_population: cbp_abc::process::DEFAULT_MAX_POPULATION,
            refine: RefineConfig::default(),
            growth_families: default_families(),
            forecast_replicates: 200,
            offspring: None,
            control_parameter: None,
            z0: 1,
            generations: None,
            seed: 0,
            threads: 1,
            out: PathBuf::from("out"),
        }
    }
}

pub fn default_families() -> Vec<GrowthFamily> {
    let mut v = vec![GrowthFamily::Verhulst];
    v.extend(
        DEFAULT_THETAS
            .iter()
            .map(|&theta| GrowthFamily::ThetaLogistic { theta }),
    );
    v.extend(DEFAULT_BETAS.iter().map(|&beta| GrowthFamily::Hassell { beta }));
    v.push(GrowthFamily::Gompertz);
    v
}

struct Entry {
    line: usize,
    value: String,
}

struct Parser<'a> {
    path: &'a Path,
    entries: BTreeMap<&'static str, Entry>,
}

impl Parser<'_> {
    fn err(&self, line: usize, message: impl Into<String>) -> CliError {
        CliError::ConfigLine {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn take(&mut self, key: &'static str) -> Option<Entry> {
        self.entries.remove(key)
    }

    fn parse<T>(
        &mut self,
        key: &'static str,
        f: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<Option<(usize, T)>> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => f(&e.value)
                .map(|v| Some((e.line, v)))
                .map_err(|m| self.err(e.line, format!("`{key}`: {m}"))),
        }
    }

    fn value<T>(&mut self, key: &'static str, f: impl Fn(&str) -> std::result::Result<T, String>) -> Result<Option<T>> {
        Ok(self.parse(key, f)?.map(|(_, v)| v))
    }
}

fn parse_usize(s: &str) -> std::result::Result<usize, String> {
    s.parse()
        .map_err(|_| format!("expected a non-negative integer, got `{s}`"))
}

fn parse_positive_usize(s: &str) -> std::result::Result<usize, String> {
    match parse_usize(s)? {
        0 => Err("must be positive".into()),
        n => Ok(n),
    }
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("expected a number, got `{s}`"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("expected a finite number, got `{s}`"))
    }
}

fn parse_positive_f64(s: &str) -> std::result::Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

/// Integer that may be written in exponent form (`1e12`).
fn parse_count(s: &str) -> std::result::Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let v = parse_f64(s)?;
    if v >= 1.0 && v.fract() == 0.0 && v <= u64::MAX as f64 {
        Ok(v as u64)
    } else {
        Err(format!("expected a positive integer, got `{s}`"))
    }
}

/// Splits on commas that are not inside parentheses.
fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(s[start..].trim());
    parts
}

/// `name(a, b, ..)` or a bare `name`.
fn parse_call(s: &str) -> std::result::Result<(&str, Vec<f64>), String> {
    let s = s.trim();
    match s.find('(') {
        None => Ok((s, Vec::new())),
        Some(open) => {
            let inner = s[open + 1..]
                .strip_suffix(')')
                .ok_or_else(|| format!("missing `)` in `{s}`"))?;
            let args = if inner.trim().is_empty() {
                Vec::new()
            } else {
                inner
                    .split(',')
                    .map(|a| parse_f64(a.trim()))
                    .collect::<std::result::Result<_, _>>()?
            };
            Ok((s[..open].trim(), args))
        }
    }
}

fn expect_args(name: &str, args: &[f64], n: usize) -> std::result::Result<(), String> {
    if args.len() == n {
        Ok(())
    } else {
        Err(format!("`{name}` takes {n} argument(s), got {}", args.len()))
    }
}

fn parse_prior(s: &str) -> std::result::Result<ControlPrior, String> {
    let (name, args) = parse_call(s)?;
    let prior = match name {
        "beta" => {
            expect_args(name, &args, 2)?;
            ControlPrior::Beta { a: args[0], b: args[1] }
        }
        "uniform" => {
            expect_args(name, &args, 2)?;
            ControlPrior::Uniform {
                lo: args[0],
                hi: args[1],
            }
        }
        other => {
            return Err(format!(
                "unknown prior `{other}` (expected beta(a,b) or uniform(lo,hi))"
            ))
        }
    };
    prior.validate().map_err(|e| e.to_string())?;
    Ok(prior)
}

fn parse_offspring(s: &str) -> std::result::Result<OffspringLaw, String> {
    let (name, args) = parse_call(s)?;
    let law = match name {
        "binomial" => {
            expect_args(name, &args, 2)?;
            if args[0] < 1.0 || args[0].fract() != 0.0 {
                return Err(format!("binomial size must be a positive integer, got {}", args[0]));
            }
            OffspringLaw::binomial(args[0] as u64, args[1])
        }
        "geometric" => {
            expect_args(name, &args, 1)?;
            OffspringLaw::geometric(args[0])
        }
        "pmf" => OffspringLaw::finite(args),
        other => {
            return Err(format!(
                "unknown offspring law `{other}` (expected binomial(n,p), geometric(q) or pmf(p0,..))"
            ))
        }
    };
    law.map_err(|e| e.to_string())
}

fn parse_family(s: &str) -> std::result::Result<GrowthFamily, String> {
    let (name, args) = parse_call(s)?;
    let family = match name {
        "verhulst" => {
            expect_args(name, &args, 0)?;
            GrowthFamily::Verhulst
        }
        "gompertz" => {
            expect_args(name, &args, 0)?;
            GrowthFamily::Gompertz
        }
        "theta_logistic" => {
            expect_args(name, &args, 1)?;
            GrowthFamily::ThetaLogistic { theta: args[0] }
        }
        "hassell" => {
            expect_args(name, &args, 1)?;
            GrowthFamily::Hassell { beta: args[0] }
        }
        other => return Err(format!("unknown growth family `{other}`")),
    };
    family.validate().map_err(|e| e.to_string())?;
    Ok(family)
}

fn parse_families(s: &str) -> std::result::Result<Vec<GrowthFamily>, String> {
    let parts = split_top_level(s);
    if parts.iter().any(|p| p.is_empty()) {
        return Err("empty entry in family list".into());
    }
    parts.into_iter().map(parse_family).collect()
}

fn parse_pools(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| parse_count(p.trim()).map(|v| v as usize))
        .collect()
}

fn parse_unit_open(s: &str) -> std::result::Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("must lie in (0, 1), got {v}"))
    }
}

fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("must lie in (0, 1], got {v}"))
    }
}

pub fn family_text(f: &GrowthFamily) -> String {
    match f.shape() {
        Some(s) => format!("{}({s})", f.name()),
        None => f.name().to_string(),
    }
}

pub fn control_text(c: &ControlFamily) -> String {
    match c {
        ControlFamily::BinomialXi { xi } => format!(
            "binomial_xi({})",
            match xi {
                SizeMap::Identity => "identity",
                SizeMap::LogAugmented => "log_augmented",
            }
        ),
        ControlFamily::DensityDependent { model } => family_text(model),
    }
}

fn prior_text(p: &ControlPrior) -> String {
    match p {
        ControlPrior::Beta { a, b } => format!("beta({a},{b})"),
        ControlPrior::Uniform { lo, hi } => format!("uniform({lo},{hi})"),
    }
}

fn opt_text<T>(v: &Option<T>, f: impl Fn(&T) -> String) -> String {
    v.as_ref().map_or_else(|| "none".into(), f)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Parses config text; relative paths are resolved against the
    /// directory of `path`.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut p = Parser {
            path,
            entries: BTreeMap::new(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| p.err(line, format!("expected `key = value`, got `{trimmed}`")))?;
            let key = key.trim();
            let value = value.trim();
            let known = KEYS
                .iter()
                .find(|k| **k == key)
                .ok_or_else(|| p.err(line, format!("unknown key `{key}`")))?;
            if value.is_empty() {
                return Err(p.err(line, format!("`{key}` has an empty value")));
            }
            if let Some(prev) = p.entries.get(known) {
                return Err(p.err(line, format!("duplicate key `{key}` (first set on line {})", prev.line)));
            }
            p.entries.insert(
                known,
                Entry {
                    line,
                    value: value.to_string(),
                },
            );
        }

        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let d = Self::default();
        let mut cfg = Self {
            source: Some(path.to_path_buf()),
            ..d.clone()
        };

        cfg.observations = p.value("observations", |s| Ok(base.join(s)))?;

        let size_map = p.parse("size_map", |s| match s {
            "log_augmented" => Ok(SizeMap::LogAugmented),
            "identity" => Ok(SizeMap::Identity),
            other => Err(format!(
                "unknown size map `{other}` (expected log_augmented or identity)"
            )),
        })?;
        let shape = p.parse("shape", parse_positive_f64)?;
        let control = p.parse("control", |s| match s {
            "binomial_xi" | "verhulst" | "theta_logistic" | "hassell" | "gompertz" => Ok(s.to_string()),
            other => Err(format!(
                "unknown control `{other}` (expected binomial_xi, verhulst, theta_logistic, hassell or gompertz)"
            )),
        })?;
        let (control_line, control_name) = control.unwrap_or((0, "binomial_xi".into()));
        cfg.control = match control_name.as_str() {
            "binomial_xi" => {
                if shape.is_some() {
                    return Err(p.err(
                        shape.map_or(control_line, |(l, _)| l),
                        "`shape` only applies to theta_logistic and hassell",
                    ));
                }
                ControlFamily::BinomialXi {
                    xi: size_map.map_or(SizeMap::LogAugmented, |(_, m)| m),
                }
            }
            name => {
                if size_map.is_some() {
                    return Err(p.err(
                        size_map.map_or(control_line, |(l, _)| l),
                        "`size_map` only applies to binomial_xi",
                    ));
                }
                let needs_shape = matches!(name, "theta_logistic" | "hassell");
                let model = match (name, shape) {
                    ("verhulst", None) => GrowthFamily::Verhulst,
                    ("gompertz", None) => GrowthFamily::Gompertz,
                    ("theta_logistic", Some((_, theta))) => GrowthFamily::ThetaLogistic { theta },
                    ("hassell", Some((_, beta))) => GrowthFamily::Hassell { beta },
                    (_, Some((line, _))) if !needs_shape => {
                        return Err(p.err(line, format!("`shape` does not apply to {name}")))
                    }
                    _ => return Err(p.err(control_line, format!("{name} needs a `shape` value"))),
                };
                ControlFamily::DensityDependent { model }
            }
        };

        cfg.gamma_prior = p.value("gamma_prior", parse_prior)?;
        cfg.kappa_max = p.value("kappa_max", |s| match parse_usize(s)? {
            k if k >= 2 => Ok(k),
            k => Err(format!("must be at least 2, got {k}")),
        })?;
        cfg.dirichlet_alpha = p
            .value("dirichlet_alpha", parse_positive_f64)?
            .unwrap_or(d.dirichlet_alpha);
        cfg.particles = p.value("particles", parse_positive_usize)?;
        let pools = p.parse("pools", parse_pools)?;
        if let Some((line, pools)) = &pools {
            let particles = cfg.particles.unwrap_or(1);
            cbp_abc::ToleranceSchedule::from_pools(pools, particles)
                .map_err(|e| p.err(*line, format!("`pools`: {e}")))?;
        }
        cfg.pools = pools.map(|(_, v)| v);
        cfg.tuning_a = p.value("tuning_a", parse_positive_f64)?.unwrap_or(d.tuning_a);
        cfg.sigma_floor = p.value("sigma_floor", parse_positive_f64)?;
        cfg.max_discard_ratio = p
            .value("max_discard_ratio", |s| {
                let v = parse_f64(s)?;
                if v >= 1.0 {
                    Ok(v)
                } else {
                    Err(format!("must be at least 1, got {v}"))
                }
            })?
            .unwrap_or(d.max_discard_ratio);
        cfg.max_population = p.value("max_population", parse_count)?.unwrap_or(d.max_population);

        cfg.refine.kappa_estimator = p
            .value("kappa_estimator", |s| match s {
                "weighted" => Ok(KappaEstimator::Weighted),
                "counts" => Ok(KappaEstimator::Counts),
                other => Err(format!("unknown estimator `{other}` (expected weighted or counts)")),
            })?
            .unwrap_or(d.refine.kappa_estimator);
        cfg.refine.keep_fraction = p
            .value("keep_fraction", parse_fraction)?
            .unwrap_or(d.refine.keep_fraction);
        cfg.refine.min_model_particles = p
            .value("min_model_particles", parse_positive_usize)?
            .unwrap_or(d.refine.min_model_particles);
        cfg.refine.kde_grid = p
            .value("kde_grid", |s| match parse_usize(s)? {
                n if n >= 2 => Ok(n),
                n => Err(format!("must be at least 2, got {n}")),
            })?
            .unwrap_or(d.refine.kde_grid);
        cfg.refine.hpd_level = p.value("hpd_level", parse_unit_open)?.unwrap_or(d.refine.hpd_level);
        cfg.refine.joint_grid = p
            .value("grid2d", |s| match parse_usize(s)? {
                n if n >= 2 => Ok(n),
                n => Err(format!("must be at least 2, got {n}")),
            })?
            .unwrap_or(d.refine.joint_grid);

        cfg.growth_families = p.value("growth_families", parse_families)?.unwrap_or(d.growth_families);
        cfg.forecast_replicates = p
            .value("forecast_replicates", parse_positive_usize)?
            .unwrap_or(d.forecast_replicates);

        cfg.offspring = p.value("offspring", parse_offspring)?;
        let control_parameter = p.parse("control_parameter", parse_positive_f64)?;
        if let Some((line, v)) = control_parameter {
            cfg.control
                .with_parameter(v)
                .map_err(|e| p.err(line, format!("`control_parameter`: {e}")))?;
            cfg.control_parameter = Some(v);
        }
        cfg.z0 = p.value("z0", parse_count)?.unwrap_or(d.z0);
        cfg.generations = p.value("generations", parse_positive_usize)?;

        cfg.seed = p
            .value("seed", |s| {
                s.parse::<u64>()
                    .map_err(|_| format!("expected an unsigned integer, got `{s}`"))
            })?
            .unwrap_or(d.seed);
        cfg.threads = p.value("threads", parse_positive_usize)?.unwrap_or(d.threads);
        cfg.out = p.value("out", |s| Ok(base.join(s)))?.unwrap_or(d.out);

        debug_assert!(p.entries.is_empty(), "every key is consumed");
        Ok(cfg)
    }

    /// Canonical `key=value` lines for every key that influences the first
    /// stage.
    pub fn canonical_text(&self) -> String {
        let mut map: BTreeMap<&str, String> = BTreeMap::new();
        map.insert("control", control_text(&self.control));
        map.insert("gamma_prior", opt_text(&self.gamma_prior, prior_text));
        map.insert("kappa_max", opt_text(&self.kappa_max, |k| k.to_string()));
        map.insert("dirichlet_alpha", self.dirichlet_alpha.to_string());
        map.insert("particles", opt_text(&self.particles, |n| n.to_string()));
        map.insert(
            "pools",
            opt_text(&self.pools, |v| {
                v.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(",")
            }),
        );
        map.insert("tuning_a", self.tuning_a.to_string());
        map.insert("sigma_floor", opt_text(&self.sigma_floor, |s| s.to_string()));
        map.insert("max_discard_ratio", self.max_discard_ratio.to_string());
        map.insert("max_population", self.max_population.to_string());
        map.insert("seed", self.seed.to_string());
        debug_assert_eq!(map.len(), HASHED_KEYS.len());
        let mut out = String::new();
        for (k, v) in map {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(self.canonical_text().as_bytes())
    }

    pub fn master_seed(&self) -> StreamSeed {
        StreamSeed::new(self.seed)
    }

    fn missing(&self, key: &str, command: &str) -> CliError {
        let at = self
            .source
            .as_ref()
            .map_or_else(String::new, |p| format!(" in {}", p.display()));
        CliError::Config(format!("missing key `{key}`{at} (required by `{command}`)"))
    }

    pub fn require_observations(&self, command: &str) -> Result<&Path> {
        self.observations
            .as_deref()
            .ok_or_else(|| self.missing("observations", command))
    }

    pub fn require_kappa_max(&self, command: &str) -> Result<usize> {
        self.kappa_max.ok_or_else(|| self.missing("kappa_max", command))
    }

    pub fn require_prior(&self, command: &str) -> Result<ControlPrior> {
        self.gamma_prior.ok_or_else(|| self.missing("gamma_prior", command))
    }

    pub fn prior_spec(&self, command: &str) -> Result<PriorSpec> {
        Ok(PriorSpec::new(
            self.require_kappa_max(command)?,
            DirichletPrior::Symmetric(self.dirichlet_alpha),
            self.require_prior(command)?,
        )?)
    }

    pub fn smc_config(&self, command: &str) -> Result<SmcConfig> {
        let particles = self.particles.ok_or_else(|| self.missing("particles", command))?;
        let pools = self.pools.as_ref().ok_or_else(|| self.missing("pools", command))?;
        let mut smc = SmcConfig::new(particles, pools, self.tuning_a)?;
        smc.sigma_floor = self.sigma_floor;
        smc.max_discard_ratio = self.max_discard_ratio;
        smc.validate()?;
        Ok(smc)
    }

    pub fn growth_config(&self, command: &str) -> Result<GrowthFitConfig> {
        let k_prior = match self.require_prior(command)? {
            ControlPrior::Uniform { lo, hi } => (lo, hi),
            ControlPrior::Beta { .. } => {
                return Err(CliError::Config(
                    "`fit-growth` needs `gamma_prior = uniform(lo, hi)` for the carrying capacity".into(),
                ))
            }
        };
        let cfg = GrowthFitConfig {
            families: self.growth_families.clone(),
            k_prior,
            kappa_max: self.require_kappa_max(command)?,
            replicates: self.forecast_replicates,
            smc: self.smc_config(command)?,
            refine: self.refine.clone(),
            max_population: self.max_population,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
