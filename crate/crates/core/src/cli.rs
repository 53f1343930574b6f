//! Command-line front end.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 usage error or
//! inadmissible `w0`, 3 numerical failure.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::coulomb::{
    closed_l0n1, closed_l0n2, coulomb_partner, coulomb_potential, coulomb_seed,
    seed_integral_series, w0_admissible, CoulombError, CoulombParams, SERIES_R_MAX,
};
use crate::numerics::{
    fmt_f64, make_grid, node_indices, shoot_spectrum, Grid, NumericsError, SampledFunction,
};
use crate::susy::{
    confluent_w, generalized_eigenfunction, missing_state, riccati_beta, verify_wronskian_formula,
    ConfluentTransform, SusyError, RESIDUAL_R_MIN,
};

#[derive(Debug, Parser)]
#[command(name = "susy", version, about = "Confluent SUSY partners of the Coulomb potential")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate V, the partner potential, u, w and u/w.
    Partner(PartnerArgs),
    /// Bound-state energies of V or of its partner by shooting.
    Spectrum(SpectrumArgs),
    /// Run the invariant suite for one configuration.
    Verify(PartnerArgs),
    /// Curves for n = 4, l = 1, w0 = -0.1 on (0.01, 25].
    Figure1(FigureArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = 1e-3, allow_negative_numbers = true)]
    pub r_min: f64,
    #[arg(long, default_value_t = 40.0, allow_negative_numbers = true)]
    pub r_max: f64,
    #[arg(long, default_value_t = 16001)]
    pub points: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SeedArgs {
    /// Orbital quantum number.
    #[arg(long, default_value_t = 0)]
    pub l: u32,
    /// Principal quantum number: factorization energy -1/n².
    #[arg(long, conflicts_with = "eps")]
    pub n: Option<u32>,
    /// Factorization energy (< 0).
    #[arg(long, allow_negative_numbers = true)]
    pub eps: Option<f64>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub w0: f64,
}

#[derive(Debug, Clone, Args)]
pub struct PartnerArgs {
    #[command(flatten)]
    pub seed: SeedArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Output path; `-` for stdout.
    #[arg(long)]
    pub out: Option<String>,
    /// Also report this many levels of the partner spectrum.
    #[arg(long, default_value_t = 0)]
    pub levels: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub seed: SeedArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Use the partner potential instead of V.
    #[arg(long)]
    pub partner: bool,
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    #[arg(long, default_value_t = -1.5, allow_negative_numbers = true)]
    pub e_lo: f64,
    #[arg(long, default_value_t = -0.01, allow_negative_numbers = true)]
    pub e_hi: f64,
    #[arg(long, default_value = "-")]
    pub out: String,
}

#[derive(Debug, Clone, Args)]
pub struct FigureArgs {
    #[arg(long, default_value_t = 2000)]
    pub points: usize,
    #[arg(long, default_value = "figure1.csv")]
    pub out: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Partner,
    Spectrum,
    Verify,
    Figure1,
}

/// Flattened, validated configuration of one invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: CommandKind,
    pub l: u32,
    pub n: Option<u32>,
    pub eps: Option<f64>,
    pub w0: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub points: usize,
    pub format: Format,
    pub out_path: String,
    pub levels: usize,
    pub partner: bool,
    pub e_lo: f64,
    pub e_hi: f64,
}

impl RunConfig {
    pub fn from_cli(cli: &Cli) -> Self {
        let base = |command, s: &SeedArgs, g: &GridArgs| RunConfig {
            command,
            l: s.l,
            n: s.n,
            eps: s.eps,
            w0: s.w0,
            r_min: g.r_min,
            r_max: g.r_max,
            points: g.points,
            format: Format::Csv,
            out_path: "-".into(),
            levels: 0,
            partner: false,
            e_lo: -1.5,
            e_hi: -0.01,
        };
        match &cli.command {
            Command::Partner(a) | Command::Verify(a) => {
                let kind = if matches!(cli.command, Command::Partner(_)) {
                    CommandKind::Partner
                } else {
                    CommandKind::Verify
                };
                let default_out = match a.format {
                    Format::Csv => "partner.csv",
                    Format::Json => "partner.json",
                };
                RunConfig {
                    format: a.format,
                    out_path: a.out.clone().unwrap_or_else(|| default_out.into()),
                    levels: a.levels,
                    ..base(kind, &a.seed, &a.grid)
                }
            }
            Command::Spectrum(a) => RunConfig {
                format: Format::Json,
                out_path: a.out.clone(),
                levels: a.levels,
                partner: a.partner,
                e_lo: a.e_lo,
                e_hi: a.e_hi,
                ..base(CommandKind::Spectrum, &a.seed, &a.grid)
            },
            Command::Figure1(a) => RunConfig {
                command: CommandKind::Figure1,
                l: 1,
                n: Some(4),
                eps: None,
                w0: -0.1,
                r_min: FIGURE_R_LO + (FIGURE_R_HI - FIGURE_R_LO) / a.points.max(1) as f64,
                r_max: FIGURE_R_HI,
                points: a.points,
                format: Format::Csv,
                out_path: a.out.clone(),
                levels: 0,
                partner: true,
                e_lo: -1.5,
                e_hi: -0.01,
            },
        }
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        make_grid(self.r_min, self.r_max, self.points).map_err(|e| CliError::Usage(e.to_string()))
    }

    /// Seed parameters; exactly one of `n`, `eps` must be given.
    pub fn params(&self) -> Result<CoulombParams, CliError> {
        let p = match (self.n, self.eps) {
            (Some(n), None) => CoulombParams::bound(self.l, n, self.w0),
            (None, Some(e)) => CoulombParams::generic(self.l, e, self.w0),
            _ => return Err(CliError::Usage("exactly one of --n and --eps is required".into())),
        };
        p.map_err(|e| CliError::Usage(e.to_string()))
    }
}

pub const FIGURE_R_LO: f64 = 0.01;
pub const FIGURE_R_HI: f64 = 25.0;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Inadmissible(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("verification failed: {0}")]
    VerifyFailed(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::VerifyFailed(_) => 1,
            CliError::Usage(_) | CliError::Inadmissible(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
        }
    }
}

impl From<CoulombError> for CliError {
    fn from(e: CoulombError) -> Self {
        match e {
            CoulombError::Inadmissible { .. } => CliError::Inadmissible(e.to_string()),
            CoulombError::Params(m) => CliError::Usage(m),
            CoulombError::Susy(SusyError::Singular { .. }) => CliError::Inadmissible(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<SusyError> for CliError {
    fn from(e: SusyError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

fn open_out(path: &str) -> io::Result<Box<dyn Write>> {
    if path == "-" {
        Ok(Box::new(BufWriter::new(io::stdout().lock())))
    } else {
        Ok(Box::new(BufWriter::new(File::create(path)?)))
    }
}

fn fmt_cell(x: f64) -> String {
    if x.is_finite() {
        fmt_f64(x)
    } else {
        "nan".into()
    }
}

fn write_json<W: Write>(mut w: W, value: &serde_json::Value) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::from_cli(cli);
    log::debug!("{cfg:?}");
    match cfg.command {
        CommandKind::Partner => cmd_partner(&cfg),
        CommandKind::Spectrum => cmd_spectrum(&cfg),
        CommandKind::Verify => cmd_verify(&cfg),
        CommandKind::Figure1 => cmd_figure1(&cfg),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelReport {
    pub energy: f64,
    pub node_count: usize,
    /// `n` with `-1/n²` nearest to the energy, when within 1e-3.
    pub n: Option<u32>,
    pub deviation: Option<f64>,
}

fn label_levels(l: u32, energies: &[(f64, usize)]) -> Vec<LevelReport> {
    energies
        .iter()
        .map(|&(e, nodes)| {
            let n = (1.0 / (-e).sqrt()).round().max((l + 1) as f64);
            let exact = -1.0 / (n * n);
            let close = (e - exact).abs() < 1e-3;
            LevelReport {
                energy: e,
                node_count: nodes,
                n: close.then_some(n as u32),
                deviation: close.then_some(e - exact),
            }
        })
        .collect()
}

fn spectrum_of(
    v: &SampledFunction,
    l: u32,
    e_lo: f64,
    e_hi: f64,
    levels: usize,
) -> Result<Vec<LevelReport>, CliError> {
    if levels == 0 {
        return Ok(Vec::new());
    }
    let s = shoot_spectrum(v, e_lo, e_hi, levels)?;
    let pairs: Vec<(f64, usize)> = s.levels.iter().map(|x| (x.energy, x.node_count)).collect();
    Ok(label_levels(l, &pairs))
}

pub fn cmd_partner(cfg: &RunConfig) -> Result<(), CliError> {
    let grid = cfg.grid()?;
    let p = cfg.params()?;
    let t = coulomb_partner(&p, grid)?;
    let ms = missing_state(&t);
    let mut diagnostics = serde_json::to_value(t.diagnostics()?).expect("serializable");
    diagnostics["missing_state_normalizable"] = ms.normalizable.into();
    diagnostics["allowed_w0"] = w0_admissible(&p).to_string().into();
    if cfg.levels > 0 {
        let lv = spectrum_of(&t.v_new, p.l, cfg.e_lo, cfg.e_hi, cfg.levels)?;
        diagnostics["spectrum"] = serde_json::to_value(lv).expect("serializable");
    }
    match cfg.format {
        Format::Csv => {
            let mut out = open_out(&cfg.out_path)?;
            writeln!(out, "r,V,V_new,u,w,psi_missing")?;
            for i in 0..grid.len() {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    fmt_cell(grid.r(i)),
                    fmt_cell(t.v.values[i]),
                    fmt_cell(t.v_new.values[i]),
                    fmt_cell(t.seed.values()[i]),
                    fmt_cell(t.w.values[i]),
                    fmt_cell(ms.psi.values[i]),
                )?;
            }
            out.flush()?;
            let text = serde_json::to_string_pretty(&diagnostics).expect("serializable");
            if cfg.out_path == "-" {
                eprintln!("{text}");
            } else {
                std::fs::write(diagnostics_path(&cfg.out_path), text + "\n")?;
            }
        }
        Format::Json => {
            let mut record = t.to_json(&t.diagnostics()?);
            record["diagnostics"] = diagnostics;
            record["V"] = serde_json::to_value(&t.v.values).expect("serializable");
            record["psi_missing"] = serde_json::to_value(&ms.psi.values).expect("serializable");
            write_json(open_out(&cfg.out_path)?, &record)?;
        }
    }
    Ok(())
}

/// `<out>.diagnostics.json` next to a CSV table.
pub fn diagnostics_path(out: &str) -> String {
    let p = Path::new(out);
    match p.extension() {
        Some(_) => p.with_extension("diagnostics.json").to_string_lossy().into_owned(),
        None => format!("{out}.diagnostics.json"),
    }
}

pub fn cmd_spectrum(cfg: &RunConfig) -> Result<(), CliError> {
    let grid = cfg.grid()?;
    let (v, params) = if cfg.partner {
        let p = cfg.params()?;
        (coulomb_partner(&p, grid)?.v_new, Some(p))
    } else {
        (coulomb_potential(cfg.l, grid), None)
    };
    if v.values.iter().any(|x| !x.is_finite()) {
        return Err(CliError::Numerical(
            "partner potential is singular on the grid".into(),
        ));
    }
    let levels = spectrum_of(&v, cfg.l, cfg.e_lo, cfg.e_hi, cfg.levels)?;
    let record = serde_json::json!({
        "potential": if cfg.partner { "partner" } else { "coulomb" },
        "l": cfg.l,
        "n": params.and_then(|p| p.n),
        "eps": params.map(|p| p.eps),
        "w0": params.map(|p| p.w0),
        "levels": levels,
    });
    write_json(open_out(&cfg.out_path)?, &record)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: &str, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            passed: measured <= tolerance,
        }
    }
}

/// Distance from the nodes of `u` inside which `beta' ` by finite differences
/// is dominated by the pole of `beta`.
const RICCATI_NODE_GAP: f64 = 0.25;

/// max |beta' + beta² - (V - eps)| for `r >= 0.5`, at least
/// `RICCATI_NODE_GAP` from any node of `u`, where `|u|` exceeds 1e-3 of its
/// maximum on a five-point neighbourhood.
fn riccati_residual(t: &ConfluentTransform) -> f64 {
    let beta = riccati_beta(&t.seed);
    let db = crate::numerics::differentiate(&beta);
    let g = t.grid();
    let u = t.seed.values();
    let cut = 1e-3 * t.seed.u.max_abs();
    let nodes: Vec<f64> = node_indices(&t.seed.u, true)
        .into_iter()
        .map(|i| 0.5 * (g.r(i) + g.r(i + 1)))
        .collect();
    (2..g.len() - 2)
        .filter(|&i| g.r(i) >= 0.5 && (i - 2..=i + 2).all(|j| u[j].abs() >= cut))
        .filter(|&i| nodes.iter().all(|x| (g.r(i) - x).abs() >= RICCATI_NODE_GAP))
        .map(|i| {
            (db.values[i] + beta.values[i].powi(2) - (t.v.values[i] - t.eps)).abs()
        })
        .fold(0.0, f64::max)
}

/// Runs the invariant suite for a configuration.
pub fn verify_checks(p: &CoulombParams, grid: Grid) -> Result<Vec<CheckResult>, CliError> {
    let t = coulomb_partner(p, grid)?;
    let mut checks = Vec::new();
    checks.push(CheckResult::new(
        "seed Schrodinger residual",
        t.seed.schrodinger_residual(&t.v)?,
        1e-6,
    ));
    checks.push(CheckResult::new("Riccati residual", riccati_residual(&t), 1e-5));
    checks.push(CheckResult::new("Bernoulli residual", t.bernoulli_residual(), 1e-5));

    let v = generalized_eigenfunction(&t.v, &t.seed, &t.w, 0.0)?;
    let rep = verify_wronskian_formula(&t.seed, &v, &t.w)?;
    checks.push(CheckResult::new("W(u,v) - w - C", rep.relative_residual, 1e-6));
    checks.push(CheckResult::new("dW(u,v)/dr + u^2", rep.relative_derivative_residual, 1e-6));

    let alt = t.v_new_derivative_route();
    let route = (0..grid.len())
        .filter(|&i| grid.r(i) >= RESIDUAL_R_MIN && t.v_new.values[i].is_finite())
        .map(|i| (alt.values[i] - t.v_new.values[i]).abs())
        .filter(|x| x.is_finite())
        .fold(0.0, f64::max);
    checks.push(CheckResult::new("expanded vs eta' route", route, 1e-4));

    if p.l == 0 && matches!(p.n, Some(1) | Some(2)) {
        let f = if p.n == Some(1) { closed_l0n1 } else { closed_l0n2 };
        let d = (0..grid.len())
            .filter(|&i| (0.01..=20.0).contains(&grid.r(i)))
            .map(|i| (t.v_new.values[i] - f(p.w0, grid.r(i)).unwrap_or(f64::NAN)).abs())
            .fold(0.0, f64::max);
        checks.push(CheckResult::new("closed form", d, 1e-8));
    }

    let quad = confluent_w(&coulomb_seed(p, grid)?, p.w0)?;
    let stride = if p.n.is_some() { 1 } else { 10 };
    let mut worst: f64 = 0.0;
    for i in (0..grid.len()).step_by(stride) {
        let r = grid.r(i);
        if r > SERIES_R_MAX {
            break;
        }
        let s = seed_integral_series(p, r).map_err(CliError::from)?;
        let ws = p.w0 - s.value;
        worst = worst.max((ws - quad.values[i]).abs() / quad.values[i].abs().max(1.0));
    }
    checks.push(CheckResult::new("series vs quadrature w", worst, 1e-7));
    Ok(checks)
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<(), CliError> {
    let grid = cfg.grid()?;
    let p = cfg.params()?;
    let checks = verify_checks(&p, grid)?;
    eprintln!("{:<28} {:>12} {:>10}  result", "check", "measured", "tolerance");
    for c in &checks {
        eprintln!(
            "{:<28} {:>12.3e} {:>10.1e}  {}",
            c.name,
            c.measured,
            c.tolerance,
            if c.passed { "PASS" } else { "FAIL" }
        );
    }
    if cfg.format == Format::Json && cfg.out_path == "-" {
        write_json(open_out("-")?, &serde_json::to_value(&checks).expect("serializable"))?;
    }
    match checks.iter().find(|c| !c.passed) {
        Some(c) => Err(CliError::VerifyFailed(format!(
            "{} = {:.3e} exceeds {:.1e}",
            c.name, c.measured, c.tolerance
        ))),
        None => Ok(()),
    }
}

pub fn cmd_figure1(cfg: &RunConfig) -> Result<(), CliError> {
    let grid = cfg.grid()?;
    let p = cfg.params()?;
    let t = coulomb_partner(&p, grid)?;
    let mut out = open_out(&cfg.out_path)?;
    writeln!(out, "r,V_new,V")?;
    for i in 0..grid.len() {
        writeln!(
            out,
            "{},{},{}",
            fmt_cell(grid.r(i)),
            fmt_cell(t.v_new.values[i]),
            fmt_cell(t.v.values[i])
        )?;
    }
    out.flush()?;
    Ok(())
}
