//! Problem files, trajectory tables and report documents.
//!
//! Problems are TOML; tables are comma-separated with a header row and
//! 17 significant digits; reports are JSON. Units: G = 1.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::central::{find_minimal_cc, CcOptions};
use crate::error::{Error, Result};
use crate::hj::{HjConfig, ValueSample};
use crate::minimizer::{trajectory, SolveConfig, StartSummary, TraceEntry};
use crate::verify::{VerificationReport, VerifyConfig};
use crate::{
    ActionBreakdown, CentralConfigResult, Configuration, DiscretePath, MassSystem, ReferenceMotion, Regime, SolveReport, TimeGrid,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradingKind {
    #[default]
    PowerLaw,
    Geometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "T_max")]
    pub t_max: f64,
    /// Number of cells.
    pub nodes: usize,
    pub grading: GradingKind,
    /// Cell growth ratio for geometric grading.
    pub ratio: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            t_max: 1e4,
            nodes: 512,
            grading: GradingKind::PowerLaw,
            ratio: None,
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<TimeGrid> {
        let g = match (self.grading, self.ratio) {
            (GradingKind::PowerLaw, None) => TimeGrid::power_law(self.t_max, self.nodes),
            (GradingKind::PowerLaw, Some(_)) => return Err(field("grid.ratio", "only allowed with grading = \"geometric\"")),
            (GradingKind::Geometric, Some(r)) => TimeGrid::geometric(self.t_max, self.nodes, r),
            (GradingKind::Geometric, None) => return Err(field("grid.ratio", "required for geometric grading")),
        };
        g.map_err(|e| field("grid", e))
    }
}

/// Initial configuration: explicit rows, or `"reference"` for x⁰ = r₀(1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialSpec {
    Keyword(String),
    Explicit(Configuration),
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Keyword("reference".into())
    }
}

fn default_tol_cluster() -> f64 {
    1e-9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub masses: Vec<f64>,
    pub dim: usize,
    /// Checked against the regime implied by `a` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<Regime>,
    /// Asymptotic velocity; omitted or zero for the parabolic regime.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Configuration>,
    #[serde(default)]
    pub x0: InitialSpec,
    /// Added to x⁰ after it is resolved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_offset: Option<Configuration>,
    #[serde(default = "default_tol_cluster")]
    pub tol_cluster: f64,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub solver: SolveConfig,
    #[serde(default)]
    pub cc: CcOptions,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub hj: HjConfig,
}

/// A resolved problem.
#[derive(Clone, Debug)]
pub struct Problem {
    pub system: MassSystem,
    pub reference: ReferenceMotion,
    pub grid: TimeGrid,
}

fn field(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("field `{name}`: {msg}"))
}

fn check_rows(name: &str, c: &Configuration, sys: &MassSystem) -> Result<()> {
    sys.check_shape(c).map_err(|e| field(name, e))?;
    if !c.is_finite() {
        return Err(field(name, "non-finite entry"));
    }
    Ok(())
}

impl ProblemSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Same document with one dotted key (e.g. `grid.T_max`) replaced by a
    /// TOML literal.
    pub fn with_param(&self, name: &str, literal: &str) -> Result<Self> {
        let mut doc = toml::Table::try_from(self).map_err(|e| Error::Parse(e.to_string()))?;
        let value: toml::Table = toml::from_str(&format!("v = {literal}")).map_err(|e| field(name, format!("bad value `{literal}`: {e}")))?;
        let value = value["v"].clone();
        let keys: Vec<&str> = name.split('.').collect();
        let (last, parents) = keys.split_last().ok_or_else(|| field(name, "empty parameter name"))?;
        let mut table = &mut doc;
        for k in parents {
            table = table
                .entry(k.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| field(name, format!("`{k}` is not a table")))?;
        }
        table.insert(last.to_string(), value);
        toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| field(name, e))
    }

    pub fn system(&self) -> Result<MassSystem> {
        MassSystem::new(self.masses.clone(), self.dim).map_err(|e| field("masses", e))
    }

    /// Resolves the system, regime, central configurations, initial
    /// configuration and grid.
    pub fn build(&self) -> Result<Problem> {
        let system = self.system()?;
        if !(self.tol_cluster > 0.0) {
            return Err(field("tol_cluster", "must be positive"));
        }
        if let Some(a) = &self.a {
            check_rows("a", a, &system)?;
        }
        let reference = ReferenceMotion::from_velocity(&system, self.a.as_ref(), None, self.tol_cluster, &self.cc).map_err(|e| field("a", e))?;
        if let Some(r) = self.regime {
            if r != reference.regime {
                return Err(field("regime", format!("declared {r}, but `a` gives {}", reference.regime)));
            }
        }
        let mut x0 = match &self.x0 {
            InitialSpec::Keyword(k) if k == "reference" => reference.x0.clone(),
            InitialSpec::Keyword(k) => return Err(field("x0", format!("expected rows or \"reference\", got \"{k}\""))),
            InitialSpec::Explicit(c) => {
                check_rows("x0", c, &system)?;
                c.clone()
            }
        };
        if let Some(off) = &self.x0_offset {
            check_rows("x0_offset", off, &system)?;
            x0 = x0.add(off);
        }
        let reference = reference.with_x0(&x0).map_err(|e| field("x0", e))?;
        self.solver.validate().map_err(|e| field("solver", e))?;
        let grid = self.grid.build()?;
        Ok(Problem { system, reference, grid })
    }

    /// Minimal central configuration of the whole system.
    pub fn central_config(&self) -> Result<CentralConfigResult> {
        find_minimal_cc(&self.system()?, &self.cc)
    }
}

fn axis_name(q: usize) -> String {
    match q {
        0 => "x".into(),
        1 => "y".into(),
        2 => "z".into(),
        _ => format!("q{}", q + 1),
    }
}

fn coord_header(prefix: &str, n: usize, d: usize) -> Vec<String> {
    (0..n).flat_map(|i| (0..d).map(move |q| format!("{prefix}body{}_{}", i + 1, axis_name(q)))).collect()
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Header `t,body1_x,body1_y,...` and one row per node.
pub fn write_trajectory<W: Write>(w: W, times: &[f64], xs: &[Configuration]) -> Result<()> {
    if times.len() != xs.len() || xs.is_empty() {
        return Err(Error::InvalidInput("times and configurations differ in length".into()));
    }
    let (n, d) = (xs[0].n_bodies(), xs[0].dim());
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend(coord_header("", n, d));
    out.write_record(&header).map_err(csv_err)?;
    for (t, x) in times.iter().zip(xs) {
        let mut row = vec![fmt(*t)];
        row.extend(x.as_slice().iter().map(|&v| fmt(v)));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Positions x(t_k) of a solved path.
pub fn write_solution<W: Write>(w: W, reference: &ReferenceMotion, path: &DiscretePath) -> Result<()> {
    write_trajectory(w, path.grid.nodes(), &trajectory(reference, path))
}

fn parse_num(s: &str, line: u64, col: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("line {line}, column `{col}`: `{s}` is not a number")))
}

/// Reads a table written by [`write_trajectory`].
pub fn read_trajectory<R: Read>(r: R, n: usize, d: usize) -> Result<(Vec<f64>, Vec<Configuration>)> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let mut expected = vec!["t".to_string()];
    expected.extend(coord_header("", n, d));
    if header != expected {
        return Err(Error::Parse(format!("trajectory header {header:?} does not match {n} bodies in {d} dimensions")));
    }
    let mut times = Vec::new();
    let mut xs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let vals = rec.iter().zip(&header).map(|(s, h)| parse_num(s, line, h)).collect::<Result<Vec<f64>>>()?;
        times.push(vals[0]);
        xs.push(Configuration::from_flat(n, d, vals[1..].to_vec())?);
    }
    Ok((times, xs))
}

/// Perturbation path φ_k = x(t_k) − r₀(t_k) − x̃⁰ of a trajectory. The first
/// row must sit at t = 1 on x⁰.
pub fn path_from_trajectory(reference: &ReferenceMotion, times: &[f64], xs: &[Configuration]) -> Result<DiscretePath> {
    let sys = &reference.system;
    let grid = TimeGrid::from_nodes(times.to_vec())?;
    let scale = 1.0 + sys.mass_norm(&reference.x0)?;
    let gap = sys.mass_norm(&xs[0].sub(&reference.x0))?;
    if gap > 1e-9 * scale {
        return Err(Error::InvalidInput(format!("trajectory starts {gap:e} away from x0")));
    }
    let mut values = Vec::with_capacity(xs.len() * sys.n_bodies() * sys.dim());
    for (t, x) in times.iter().zip(xs) {
        let (r0, _, _) = reference.eval(*t);
        values.extend_from_slice(x.sub(&r0).sub(&reference.x0_shift).as_slice());
    }
    DiscretePath::from_raw(grid, sys, values)
}

pub fn write_trace<W: Write>(w: W, trace: &[TraceEntry]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["iter", "action", "grad_norm", "step"]).map_err(csv_err)?;
    for e in trace {
        out.write_record([e.iter.to_string(), fmt(e.action), fmt(e.grad_norm), fmt(e.step)]).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// One x⁰ per row, header `body1_x,body1_y,...`.
pub fn read_configurations<R: Read>(r: R, n: usize, d: usize) -> Result<Vec<Configuration>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != coord_header("", n, d) {
        return Err(Error::Parse(format!("header {header:?} does not match {n} bodies in {d} dimensions")));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let vals = rec.iter().zip(&header).map(|(s, h)| parse_num(s, line, h)).collect::<Result<Vec<f64>>>()?;
        out.push(Configuration::from_flat(n, d, vals)?);
    }
    Ok(out)
}

/// Result of one HJ sample point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HjEntry {
    pub x0: Configuration,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample: Option<ValueSample>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl HjEntry {
    pub fn new(x0: &Configuration, r: Result<ValueSample>) -> Self {
        match r {
            Ok(s) => Self {
                x0: s.x0.clone(),
                sample: Some(s),
                error: None,
            },
            Err(e) => Self {
                x0: x0.clone(),
                sample: None,
                error: Some(e.to_string()),
            },
        }
    }
}

/// x⁰ coordinates, T, v, residuals and ∇v; failed points keep their x⁰ and
/// an error message with empty numeric fields.
pub fn write_value_samples<W: Write>(w: W, entries: &[HjEntry]) -> Result<()> {
    let Some(first) = entries.first() else {
        return Err(Error::InvalidInput("no sample points".into()));
    };
    let (n, d) = (first.x0.n_bodies(), first.x0.dim());
    let mut out = csv::Writer::from_writer(w);
    let mut header = coord_header("", n, d);
    header.extend(["T", "v", "hj_residual", "momentum_mismatch", "step_halving_change"].map(String::from));
    header.extend(coord_header("grad_", n, d));
    header.push("status".into());
    out.write_record(&header).map_err(csv_err)?;
    let blanks = 5 + n * d;
    for e in entries {
        let mut row: Vec<String> = e.x0.as_slice().iter().map(|&v| fmt(v)).collect();
        match &e.sample {
            Some(s) => {
                row.extend([fmt(s.t), fmt(s.v_value), fmt(s.hj_residual), fmt(s.momentum_mismatch)]);
                row.push(s.step_halving_change.map_or(String::new(), fmt));
                row.extend(s.grad_v.as_slice().iter().map(|&v| fmt(v)));
                row.push("ok".into());
            }
            None => {
                row.extend(std::iter::repeat_n(String::new(), blanks));
                row.push(e.error.clone().unwrap_or_default());
            }
        }
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Everything in a [`SolveReport`] except the path and the trace, which go
/// to their own tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    #[serde(rename = "T_max")]
    pub t_max: f64,
    pub nodes: usize,
    pub action: ActionBreakdown,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub min_separation: (f64, f64),
    pub energy_residual: f64,
    pub el_residual: f64,
    pub converged: bool,
    pub hardy_violations: usize,
    pub selected_start: usize,
    pub starts: Vec<StartSummary>,
}

impl From<&SolveReport> for SolveSummary {
    fn from(r: &SolveReport) -> Self {
        Self {
            t_max: r.path.grid.t_max(),
            nodes: r.path.grid.n(),
            action: r.action.clone(),
            iterations: r.iterations,
            final_grad_norm: r.final_grad_norm,
            min_separation: r.min_separation,
            energy_residual: r.energy_residual,
            el_residual: r.el_residual,
            converged: r.converged,
            hardy_violations: r.hardy_violations,
            selected_start: r.selected_start,
            starts: r.starts.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub problem: ProblemSpec,
    pub central_configs: Vec<CentralConfigResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hj: Option<Vec<HjEntry>>,
}

impl Report {
    pub fn new(problem: &ProblemSpec, reference: &ReferenceMotion) -> Self {
        Self {
            problem: problem.clone(),
            central_configs: reference.cluster_configs.iter().flatten().cloned().collect(),
            solve: None,
            verification: None,
            hj: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}
