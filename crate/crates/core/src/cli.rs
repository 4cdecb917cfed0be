//! Command-line configuration and experiment orchestration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analysis::{convergence_study, rms_resolving_power, stability_spectrum, SweepLine, SweepSpec, LEVELS};
use crate::compact::{build_stencils, OptimizerConfig, Scheme};
use crate::error::{Error, Result};
use crate::geometry::{generate_nodes, DomainSpec};
use crate::global::assemble_global;
use crate::krylov::SolverConfig;
use crate::labfm::OperatorKind;
use crate::solvers::{run_burgers, run_poisson, BurgersConfig, DtConvention};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Nodes,
    Rp,
    Converge,
    Stability,
    Burgers,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DomainChoice {
    #[default]
    Periodic,
    Punctured,
}

impl DomainChoice {
    pub fn spec(self) -> DomainSpec {
        match self {
            DomainChoice::Periodic => DomainSpec::unit_periodic(),
            DomainChoice::Punctured => DomainSpec::punctured_unit_square(),
        }
    }
}

/// Burgers settings other than scheme, spacing and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BurgersParams {
    pub re: f64,
    pub t_end: f64,
    pub cfl_adv: f64,
    pub cfl_diff: f64,
    pub series_terms: usize,
    pub output_interval: f64,
}

impl Default for BurgersParams {
    fn default() -> Self {
        let d = BurgersConfig::default();
        Self {
            re: d.re,
            t_end: d.t_end,
            cfl_adv: d.cfl_adv,
            cfl_diff: d.cfl_diff,
            series_terms: d.series_terms,
            output_interval: d.output_interval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Option<Command>,
    /// Comma-separated scheme labels.
    pub scheme: String,
    /// Comma-separated operator kinds, or `all`.
    pub kind: String,
    pub domain: DomainChoice,
    pub s: f64,
    /// Spacings for `converge` and `poisson`.
    pub resolutions: Vec<f64>,
    pub seed: u64,
    /// Points per resolving-power line.
    pub samples: usize,
    pub out: PathBuf,
    pub paper_exact_dt: bool,
    pub optimizer: OptimizerConfig,
    pub solver: SolverConfig,
    pub poisson_solver: SolverConfig,
    pub burgers: BurgersParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            scheme: "a".into(),
            kind: "ddx".into(),
            domain: DomainChoice::Periodic,
            s: 1.0 / 40.0,
            resolutions: vec![1.0 / 20.0, 1.0 / 40.0, 1.0 / 80.0],
            seed: 7,
            samples: 64,
            out: PathBuf::from("out"),
            paper_exact_dt: false,
            optimizer: OptimizerConfig::default(),
            solver: SolverConfig::default(),
            poisson_solver: SolverConfig::poisson(),
            burgers: BurgersParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn schemes(&self) -> Result<Vec<Scheme>> {
        let labels: Vec<&str> = self.scheme.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if labels.is_empty() {
            return Err(Error::Config("field `scheme`: no scheme given".into()));
        }
        labels
            .iter()
            .map(|l| {
                let mut chars = l.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => Scheme::from_label(c),
                    _ => Err(Error::Config(format!("field `scheme`: `{l}` is not a scheme label"))),
                }
            })
            .collect()
    }

    pub fn kinds(&self) -> Result<Vec<OperatorKind>> {
        if self.kind.trim() == "all" {
            return Ok(OperatorKind::ALL.to_vec());
        }
        let kinds: Vec<OperatorKind> = self
            .kind
            .split(',')
            .map(str::trim)
            .map(|k| OperatorKind::parse(k).ok_or_else(|| Error::Config(format!("field `kind`: unknown kind `{k}`"))))
            .collect::<Result<_>>()?;
        if kinds.is_empty() {
            return Err(Error::Config("field `kind`: no kind given".into()));
        }
        Ok(kinds)
    }

    pub fn validate(&self) -> Result<Command> {
        let command = self
            .command
            .ok_or_else(|| Error::Config("field `command`: missing (give it in the file or as the first argument)".into()))?;
        self.schemes()?;
        self.kinds()?;
        if !(self.s > 0.0) || !self.s.is_finite() {
            return Err(Error::Config(format!("field `s`: must be positive, got {}", self.s)));
        }
        if self.resolutions.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Config("field `resolutions`: spacings must be positive".into()));
        }
        if self.samples < 2 {
            return Err(Error::Config("field `samples`: need at least 2".into()));
        }
        self.solver.validate()?;
        self.poisson_solver.validate()?;
        if !(self.optimizer.a_init > self.optimizer.a_min)
            || !(self.optimizer.a_min > 0.0)
            || !(self.optimizer.step > 0.0)
            || self.optimizer.grid < 2
        {
            return Err(Error::Config("field `optimizer`: need a_init > a_min > 0, step > 0, grid ≥ 2".into()));
        }
        Ok(command)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Parser)]
#[command(name = "labfm", about = "Explicit and compact LABFM operators on scattered nodes")]
pub struct Cli {
    /// What to run; may instead come from the config file.
    #[arg(value_enum)]
    pub command: Option<Command>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scheme labels a..h, comma separated.
    #[arg(long)]
    pub scheme: Option<String>,
    /// ddx, ddy, laplacian (comma separated) or all.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Diffusive timestep `0.05 s² / Re` instead of `0.05 s² Re`.
    #[arg(long)]
    pub paper_exact_dt: bool,
}

/// Reads the config file (if any) and applies flags on top. Returns the
/// effective config and the flags that were applied.
pub fn parse_config(cli: &Cli) -> Result<(RunConfig, BTreeMap<String, Value>)> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    let mut applied = BTreeMap::new();
    if let Some(c) = cli.command {
        cfg.command = Some(c);
        applied.insert("command".into(), json!(c));
    }
    if let Some(v) = &cli.scheme {
        cfg.scheme = v.clone();
        applied.insert("scheme".into(), json!(v));
    }
    if let Some(v) = &cli.kind {
        cfg.kind = v.clone();
        applied.insert("kind".into(), json!(v));
    }
    if let Some(v) = cli.s {
        cfg.s = v;
        applied.insert("s".into(), json!(v));
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
        applied.insert("seed".into(), json!(v));
    }
    if let Some(v) = &cli.out {
        cfg.out = v.clone();
        applied.insert("out".into(), json!(v));
    }
    if cli.paper_exact_dt {
        cfg.paper_exact_dt = true;
        applied.insert("paper_exact_dt".into(), json!(true));
    }
    cfg.validate()?;
    Ok((cfg, applied))
}

struct Writer<'a> {
    cfg: &'a RunConfig,
    hash: String,
    overrides: &'a BTreeMap<String, Value>,
    written: Vec<PathBuf>,
}

impl Writer<'_> {
    /// Writes `name` and its `name.meta.json` sidecar.
    fn emit(&mut self, name: &str, body: &str, extra: Value) -> Result<()> {
        fs::create_dir_all(&self.cfg.out)?;
        let path = self.cfg.out.join(name);
        fs::write(&path, body)?;
        let meta = json!({
            "file": name,
            "config_hash": self.hash,
            "config": self.cfg,
            "overrides": self.overrides,
            "details": extra,
        });
        let mut text = serde_json::to_string_pretty(&meta).expect("metadata serialises");
        text.push('\n');
        fs::write(self.cfg.out.join(format!("{name}.meta.json")), text)?;
        self.written.push(path);
        Ok(())
    }
}

fn single_compact(schemes: &[Scheme], command: &str) -> Result<Scheme> {
    match schemes {
        [s] if s.is_compact() => Ok(*s),
        _ => Err(Error::Config(format!(
            "field `scheme`: `{command}` takes exactly one compact scheme (b, c, d, f, g or h)"
        ))),
    }
}

fn spacing_label(s: f64) -> String {
    format!("{s}")
}

/// Runs one validated config and returns the files written.
pub fn run(cfg: &RunConfig, overrides: &BTreeMap<String, Value>) -> Result<Vec<PathBuf>> {
    let command = cfg.validate()?;
    let schemes = cfg.schemes()?;
    let kinds = cfg.kinds()?;
    let domain = cfg.domain.spec();
    let mut w = Writer {
        cfg,
        hash: cfg.hash(),
        overrides,
        written: Vec::new(),
    };
    match command {
        Command::Nodes => {
            let nodes = generate_nodes(&domain, cfg.s, cfg.seed)?;
            w.emit("nodes.csv", &nodes.to_csv_string(), json!({ "nodes": nodes.len() }))?;
        }
        Command::Rp => {
            let nodes = generate_nodes(&domain, cfg.s, cfg.seed)?;
            for &scheme in &schemes {
                for &kind in &kinds {
                    let prepared = scheme.prepare_nodes(&nodes, kind)?;
                    let stencils = build_stencils(&prepared, scheme, kind, &cfg.optimizer)?;
                    for line in SweepLine::for_kind(kind) {
                        let sweep = SweepSpec {
                            line,
                            samples: cfg.samples,
                        };
                        let result = rms_resolving_power(&prepared, &stencils, &sweep)?;
                        let crossings = result.crossings(&LEVELS);
                        w.emit(
                            &format!("rp_{scheme}_{kind}_{line}.csv"),
                            &result.to_csv(),
                            json!({
                                "nodes": nodes.len(),
                                "fallbacks": stencils.fallbacks(),
                                "levels": LEVELS,
                                "crossings": crossings,
                            }),
                        )?;
                    }
                }
            }
        }
        Command::Converge => {
            let compact = single_compact(&schemes, "converge")?;
            for &kind in &kinds {
                let table = convergence_study(
                    &domain,
                    compact.explicit_partner(),
                    compact,
                    kind,
                    &cfg.resolutions,
                    cfg.seed,
                    &cfg.optimizer,
                    &cfg.solver,
                )?;
                let (se, sc) = table.slopes();
                w.emit(
                    &format!("conv_{kind}.csv"),
                    &table.to_csv(),
                    json!({
                        "explicit": table.explicit.to_string(),
                        "compact": table.compact.to_string(),
                        "slope_explicit": se,
                        "slope_compact": sc,
                    }),
                )?;
            }
        }
        Command::Stability => {
            let nodes = generate_nodes(&domain, cfg.s, cfg.seed)?;
            for &scheme in &schemes {
                for &kind in &kinds {
                    let (op, stencils) = assemble_global(&nodes, scheme, kind, &cfg.optimizer)?;
                    let spectrum = stability_spectrum(&op)?;
                    w.emit(
                        &format!("spectrum_{scheme}_{kind}.csv"),
                        &spectrum.to_csv(),
                        json!({
                            "nodes": nodes.len(),
                            "fallbacks": stencils.fallbacks(),
                            "max_re": spectrum.max_re(),
                            "max_abs": spectrum.max_abs(),
                        }),
                    )?;
                }
            }
        }
        Command::Burgers => {
            for &scheme in &schemes {
                let b = &cfg.burgers;
                let bc = BurgersConfig {
                    re: b.re,
                    s: cfg.s,
                    scheme: scheme.label(),
                    seed: cfg.seed,
                    t_end: b.t_end,
                    cfl_adv: b.cfl_adv,
                    cfl_diff: b.cfl_diff,
                    series_terms: b.series_terms,
                    output_interval: b.output_interval,
                    dt_convention: if cfg.paper_exact_dt {
                        DtConvention::PaperExact
                    } else {
                        DtConvention::Viscous
                    },
                };
                let result = run_burgers(&bc, &cfg.optimizer, &cfg.solver)?;
                w.emit(
                    &format!("burgers_{scheme}_{}.csv", spacing_label(cfg.s)),
                    &result.to_csv(),
                    json!({
                        "nodes": result.nodes,
                        "dt_convention": result.dt_convention,
                        "steps": result.steps,
                        "max_l2": result.max_l2,
                        "momentum_drift": result.momentum_drift,
                        "max_abs_v": result.max_abs_v,
                        "diverged_at": result.diverged_at,
                    }),
                )?;
            }
        }
        Command::Poisson => {
            let compact = single_compact(&schemes, "poisson")?;
            let table = run_poisson(
                compact.explicit_partner(),
                compact,
                &cfg.resolutions,
                cfg.seed,
                &cfg.optimizer,
                &cfg.poisson_solver,
            )?;
            let (se, sc) = table.slopes();
            w.emit(
                &format!("poisson_{}.csv", OperatorKind::Laplacian),
                &table.to_csv(),
                json!({
                    "explicit": table.explicit.to_string(),
                    "compact": table.compact.to_string(),
                    "slope_explicit": se,
                    "slope_compact": sc,
                }),
            )?;
        }
    }
    Ok(w.written)
}

/// Exit status for an error: 2 for bad input, 3 for numerical failure.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        3
    } else {
        2
    }
}

/// Parses flags, runs, and reports. Returns the process exit code.
pub fn main_with(cli: &Cli) -> i32 {
    let result = parse_config(cli).and_then(|(cfg, overrides)| run(&cfg, &overrides));
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Path of the metadata sidecar for an output file.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}
