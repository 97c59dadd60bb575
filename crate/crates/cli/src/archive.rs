//! Particle archives: one CSV per SMC iteration plus a trajectory sidecar.
//!
//! The main file starts with `# key = value` header lines followed by a CSV
//! table with columns
//! `kappa,p0..p{kappa_max},gamma,weight,model_weight,distance,s1..s4,trajectory`.
//! Probabilities beyond `kappa` and absent summary coordinates are `NA`.
//! The sidecar holds `row,sizes,progenitors,saturated` with `;`-joined
//! integer lists. Floats are written in shortest round-trip form, so
//! loading a saved archive reproduces it bit for bit.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cbp_abc::{Particle, SummaryLayout, Trajectory};

use crate::error::{CliError, Result};
use crate::output::{csv_buffer, finish, num, opt_num, write_atomic};

pub const MAGIC: &str = "# cbp-archive v1";
const SUMMARY_COLUMNS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveHeader {
    pub run_id: String,
    pub iteration: usize,
    pub epsilon: f64,
    pub attempts: u64,
    pub config_hash: String,
    pub data_hash: String,
    pub kappa_max: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveRow {
    pub particle: Particle,
    /// Summary coordinates of the particle's path; `None` when the path is
    /// too degenerate to summarise.
    pub summary: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleArchive {
    pub header: ArchiveHeader,
    pub rows: Vec<ArchiveRow>,
}

impl ParticleArchive {
    pub fn new(header: ArchiveHeader, particles: Vec<Particle>, layout: &SummaryLayout) -> Self {
        let rows = particles
            .into_iter()
            .map(|particle| {
                let summary = layout.of_trajectory(&particle.trajectory).ok().map(|s| s.coordinates());
                ArchiveRow { particle, summary }
            })
            .collect();
        Self { header, rows }
    }

    pub fn particles(&self) -> Vec<Particle> {
        self.rows.iter().map(|r| r.particle.clone()).collect()
    }

    /// File name of the trajectory sidecar belonging to `path`.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let stem = path
            .file_stem()
            .map_or_else(|| "archive".into(), |s| s.to_string_lossy().into_owned());
        path.with_file_name(format!("{stem}_trajectories.csv"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let sidecar = Self::sidecar_path(path);
        let h = &self.header;
        let k = h.kappa_max;
        let mut text = String::new();
        writeln!(text, "{MAGIC}").unwrap();
        writeln!(text, "# run_id = {}", h.run_id).unwrap();
        writeln!(text, "# iteration = {}", h.iteration).unwrap();
        writeln!(text, "# epsilon = {}", num(h.epsilon)).unwrap();
        writeln!(text, "# attempts = {}", h.attempts).unwrap();
        writeln!(text, "# config_hash = {}", h.config_hash).unwrap();
        writeln!(text, "# data_hash = {}", h.data_hash).unwrap();
        writeln!(text, "# kappa_max = {k}").unwrap();
        writeln!(
            text,
            "# trajectories = {}",
            sidecar.file_name().expect("sidecar has a name").to_string_lossy()
        )
        .unwrap();

        let mut w = csv_buffer();
        let mut head = vec!["kappa".to_string()];
        head.extend((0..=k).map(|j| format!("p{j}")));
        head.extend(["gamma", "weight", "model_weight", "distance"].map(String::from));
        head.extend((1..=SUMMARY_COLUMNS).map(|j| format!("s{j}")));
        head.push("trajectory".into());
        w.write_record(&head).map_err(|e| crate::output::csv_err(path, e))?;

        let mut tw = csv_buffer();
        tw.write_record(["row", "sizes", "progenitors", "saturated"])
            .map_err(|e| crate::output::csv_err(&sidecar, e))?;

        for (i, row) in self.rows.iter().enumerate() {
            let p = &row.particle;
            if p.kappa > k || p.probs.len() != p.kappa + 1 {
                return Err(CliError::Data(format!(
                    "particle {i} has kappa={} with {} probabilities (kappa_max={k})",
                    p.kappa,
                    p.probs.len()
                )));
            }
            let mut rec = vec![p.kappa.to_string()];
            rec.extend((0..=k).map(|j| p.probs.get(j).map_or_else(|| "NA".into(), |&x| num(x))));
            rec.extend([num(p.gamma), num(p.weight), num(p.model_weight), num(p.distance)]);
            let s = row.summary.as_deref().unwrap_or(&[]);
            if s.len() > SUMMARY_COLUMNS {
                return Err(CliError::Data(format!(
                    "particle {i} has {} summary coordinates",
                    s.len()
                )));
            }
            rec.extend((0..SUMMARY_COLUMNS).map(|j| opt_num(s.get(j).copied())));
            rec.push(i.to_string());
            w.write_record(&rec).map_err(|e| crate::output::csv_err(path, e))?;

            let t = &p.trajectory;
            tw.write_record([
                i.to_string(),
                join(&t.sizes),
                join(&t.progenitors),
                t.saturated.to_string(),
            ])
            .map_err(|e| crate::output::csv_err(&sidecar, e))?;
        }
        let mut bytes = text.into_bytes();
        bytes.extend(finish(w));
        write_atomic(&sidecar, &finish(tw))?;
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let bad = |line: usize, message: String| CliError::DataRow {
            path: path.to_path_buf(),
            row: line,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == MAGIC => {}
            _ => return Err(bad(1, format!("not a particle archive (expected `{MAGIC}`)"))),
        }
        let mut fields = std::collections::BTreeMap::new();
        let mut body_start = text.lines().count();
        for (i, line) in lines {
            let Some(rest) = line.strip_prefix('#') else {
                body_start = i;
                break;
            };
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| bad(i + 1, format!("malformed header line `{line}`")))?;
            fields.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
        }
        let field = |key: &str| -> Result<(usize, &str)> {
            fields
                .get(key)
                .map(|(l, v)| (*l, v.as_str()))
                .ok_or_else(|| CliError::Data(format!("{}: header lacks `{key}`", path.display())))
        };
        let parse_field = |key: &str| -> Result<f64> {
            let (l, v) = field(key)?;
            v.parse().map_err(|_| bad(l, format!("`{key}` is not a number: `{v}`")))
        };
        let int_field = |key: &str| -> Result<u64> {
            let (l, v) = field(key)?;
            v.parse()
                .map_err(|_| bad(l, format!("`{key}` is not an integer: `{v}`")))
        };
        let header = ArchiveHeader {
            run_id: field("run_id")?.1.to_string(),
            iteration: int_field("iteration")? as usize,
            epsilon: parse_field("epsilon")?,
            attempts: int_field("attempts")?,
            config_hash: field("config_hash")?.1.to_string(),
            data_hash: field("data_hash")?.1.to_string(),
            kappa_max: int_field("kappa_max")? as usize,
        };
        let sidecar = path.with_file_name(field("trajectories")?.1);
        let trajectories = load_trajectories(&sidecar)?;

        let k = header.kappa_max;
        let width = 1 + (k + 1) + 4 + SUMMARY_COLUMNS + 1;
        let body: String = text.lines().skip(body_start).map(|l| format!("{l}\n")).collect();
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| crate::output::csv_err(path, e))?;
            let line = body_start + rec.position().map_or(i + 2, |p| p.line() as usize);
            if rec.len() != width {
                return Err(bad(line, format!("expected {width} columns, found {}", rec.len())));
            }
            let float = |j: usize| -> Result<f64> {
                rec[j]
                    .parse()
                    .map_err(|_| bad(line, format!("column {} is not a number: `{}`", j + 1, &rec[j])))
            };
            let kappa: usize = rec[0]
                .parse()
                .map_err(|_| bad(line, format!("bad kappa `{}`", &rec[0])))?;
            if kappa > k {
                return Err(bad(line, format!("kappa={kappa} exceeds kappa_max={k}")));
            }
            let mut probs = Vec::with_capacity(kappa + 1);
            for j in 0..=k {
                let cell = &rec[1 + j];
                match (j <= kappa, cell == "NA") {
                    (true, false) => probs.push(float(1 + j)?),
                    (false, true) => {}
                    (true, true) => return Err(bad(line, format!("p{j} is NA but kappa={kappa}"))),
                    (false, false) => return Err(bad(line, format!("p{j} must be NA for kappa={kappa}"))),
                }
            }
            let base = k + 2;
            let mut summary = Vec::new();
            for j in 0..SUMMARY_COLUMNS {
                let c = base + 4 + j;
                if &rec[c] != "NA" {
                    summary.push(float(c)?);
                }
            }
            let t: usize = rec[width - 1]
                .parse()
                .map_err(|_| bad(line, format!("bad trajectory reference `{}`", &rec[width - 1])))?;
            let trajectory = trajectories
                .get(t)
                .cloned()
                .ok_or_else(|| bad(line, format!("trajectory {t} missing from {}", sidecar.display())))?;
            rows.push(ArchiveRow {
                particle: Particle {
                    kappa,
                    probs,
                    gamma: float(base)?,
                    weight: float(base + 1)?,
                    model_weight: float(base + 2)?,
                    distance: float(base + 3)?,
                    trajectory,
                },
                summary: (!summary.is_empty()).then_some(summary),
            });
        }
        if rows.is_empty() {
            return Err(CliError::Data(format!("{}: archive has no particles", path.display())));
        }
        Ok(Self { header, rows })
    }
}

fn join(xs: &[u64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn split(s: &str) -> Option<Vec<u64>> {
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split(';').map(|x| x.parse().ok()).collect()
}

fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| crate::output::csv_err(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| crate::output::csv_err(path, e))?;
        let line = rec.position().map_or(i + 2, |p| p.line() as usize);
        let bad = |message: &str| CliError::DataRow {
            path: path.to_path_buf(),
            row: line,
            message: message.into(),
        };
        if rec.len() != 4 || rec[0].parse::<usize>().ok() != Some(i) {
            return Err(bad("expected `row,sizes,progenitors,saturated` with consecutive rows"));
        }
        let sizes = split(&rec[1])
            .filter(|s| !s.is_empty())
            .ok_or_else(|| bad("bad sizes list"))?;
        let progenitors = split(&rec[2]).ok_or_else(|| bad("bad progenitors list"))?;
        let saturated = rec[3]
            .parse::<bool>()
            .map_err(|_| bad("saturated must be true or false"))?;
        let extinct_at = sizes.iter().position(|&z| z == 0);
        out.push(Trajectory {
            sizes,
            progenitors,
            extinct_at,
            saturated,
        });
    }
    Ok(out)
}
