//! Problem files: a TOML document declaring the field, the barriers, the
//! Nagumo function and the solver settings of one problem.
//!
//! ```toml
//! name = "pendulum"
//! f = "c*v + a*sin(u)"
//! period = "2*pi"
//! phi = "0.2*v + 1"
//! unique = true
//! alpha = "pi/2"
//! beta = "3*pi/2"
//!
//! [params]
//! c = 0.2
//! a = 1.0
//! ```
//!
//! Numbers may be written as TOML numbers or as constant expressions.
//! Barriers are a number, an expression in `t`, or a list of pieces
//! `{ start = .., expr = ".." }` covering `[0, T)`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use ludyn::asymptotic::{AsymptoticOptions, BandProblem, Direction};
use ludyn::curves::{Band, Curve};
use ludyn::expr::parse_expr;
use ludyn::modify::{build_modified, ModifiedField};
use ludyn::{Field, NagumoSpec};

use crate::error::{io_err, CliError, CliResult};

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Num {
    Value(f64),
    Expr(String),
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Piece {
    pub start: Num,
    pub expr: String,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum CurveDecl {
    Value(f64),
    Expr(String),
    Pieces(Vec<Piece>),
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PartialsDecl {
    pub du: String,
    pub dv: String,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverDecl {
    pub steps_per_period: usize,
    pub n_scan: usize,
    pub segment_steps: usize,
    pub horizon: usize,
    pub tol_conv: f64,
    pub grid_u: usize,
    pub grid_v: usize,
    /// Velocity bracket when no Nagumo function is given.
    pub v_max: Option<f64>,
    pub verify_samples: usize,
}

impl Default for SolverDecl {
    fn default() -> Self {
        SolverDecl {
            steps_per_period: 2048,
            n_scan: 512,
            segment_steps: 256,
            horizon: 8,
            tol_conv: 1e-4,
            grid_u: 32,
            grid_v: 32,
            v_max: None,
            verify_samples: 64,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DirichletDecl {
    pub a: Num,
    pub b: Num,
    pub y_a: Num,
    pub y_b: Num,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum TargetDecl {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum DirectionDecl {
    Future,
    Past,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AsymptoticDecl {
    pub u0: Vec<Num>,
    #[serde(default = "default_directions")]
    pub directions: Vec<DirectionDecl>,
    #[serde(default = "default_target")]
    pub target: TargetDecl,
}

fn default_directions() -> Vec<DirectionDecl> {
    vec![DirectionDecl::Future]
}

fn default_target() -> TargetDecl {
    TargetDecl::Min
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyDecl {
    pub positions: usize,
    pub epsilons: Option<Vec<Num>>,
    /// Also construct the run toward the receiving endpoint.
    pub witness: bool,
}

impl Default for ClassifyDecl {
    fn default() -> Self {
        ClassifyDecl {
            positions: 5,
            epsilons: None,
            witness: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DegeneracyDecl {
    pub grid_s: usize,
    pub sub_grid: usize,
    pub n_scan: usize,
}

impl Default for DegeneracyDecl {
    fn default() -> Self {
        DegeneracyDecl {
            grid_s: 129,
            sub_grid: 64,
            n_scan: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum StartDecl {
    Alpha,
    Beta,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LocatorDecl {
    pub epsilon: f64,
    #[serde(default = "default_start")]
    pub start: StartDecl,
    #[serde(default = "default_max_periods")]
    pub max_periods: usize,
}

fn default_start() -> StartDecl {
    StartDecl::Alpha
}

fn default_max_periods() -> usize {
    2000
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ReportDecl {
    /// Commands run by `report`, in order.
    pub commands: Vec<String>,
}

/// An expected value checked by the `report` command.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FixtureDecl {
    pub quantity: String,
    pub value: Option<Num>,
    pub tol: Option<f64>,
    pub expect: Option<String>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub name: String,
    pub f: String,
    pub period: Num,
    pub phi: Option<String>,
    #[serde(default)]
    pub unique: bool,
    /// Declared independence of `v`; checked against the expression.
    pub conservative: Option<bool>,
    pub partials: Option<PartialsDecl>,
    pub alpha: CurveDecl,
    pub beta: CurveDecl,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub solver: SolverDecl,
    pub dirichlet: Option<DirichletDecl>,
    pub asymptotic: Option<AsymptoticDecl>,
    pub classify: Option<ClassifyDecl>,
    pub degeneracy: Option<DegeneracyDecl>,
    pub locator: Option<LocatorDecl>,
    pub report: Option<ReportDecl>,
    #[serde(default)]
    pub fixtures: Vec<FixtureDecl>,
}

/// A loaded problem with its mathematical objects built.
pub struct Problem {
    pub path: PathBuf,
    pub decl: ProblemFile,
    /// Problem text followed by the applied overrides.
    pub canonical_input: String,
    pub field: Field,
    pub phi: Option<NagumoSpec>,
    pub band: Band,
}

/// 1-based line of the first `key = ..` assignment.
fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        l.trim_start()
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

fn parse_override(raw: &str) -> CliResult<(Vec<String>, toml::Value)> {
    let (key, value) = raw.split_once('=').ok_or_else(|| CliError::Override(raw.to_string()))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Override(raw.to_string()));
    }
    let value = value.trim();
    // bare words are taken as strings
    let parsed = toml::from_str::<toml::Table>(&format!("x = {value}"))
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((path, parsed))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> CliResult<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut node = table;
    for key in parents {
        let entry = node
            .entry(key.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Override(format!("{} is not a table", key)))?;
    }
    node.insert(last.clone(), value);
    Ok(())
}

impl Problem {
    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Problem> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Problem::from_text(path, &text, overrides)
    }

    pub fn from_text(path: &Path, text: &str, overrides: &[String]) -> CliResult<Problem> {
        let fail = |message: String| CliError::Problem {
            path: path.to_path_buf(),
            message,
        };
        // parse the file as written first so errors carry its positions
        let mut decl: ProblemFile = toml::from_str(text).map_err(|e| fail(e.to_string()))?;
        let mut canonical_input = text.to_string();
        if !overrides.is_empty() {
            let mut table: toml::Table = toml::from_str(text).map_err(|e| fail(e.to_string()))?;
            for raw in overrides {
                let (key, value) = parse_override(raw)?;
                apply_override(&mut table, &key, value)?;
                canonical_input.push_str("\n# --set ");
                canonical_input.push_str(raw);
            }
            decl = toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| fail(format!("after overrides: {e}")))?;
        }
        let at = |key: &str, e: String| match line_of(text, key) {
            Some(line) => fail(format!("line {line}: {key}: {e}")),
            None => fail(format!("{key}: {e}")),
        };
        let params = &decl.params;
        let period = eval_num(&decl.period, params).map_err(|e| at("period", e))?;
        let mut field = Field::from_expr(&decl.f, params, period).map_err(|e| at("f", e.to_string()))?;
        if let Some(p) = &decl.partials {
            field = field
                .with_partial_exprs(&p.du, &p.dv, params)
                .map_err(|e| at("partials", e.to_string()))?;
        }
        if decl.conservative == Some(true) && !field.is_conservative() {
            return Err(at("conservative", "declared conservative but f depends on v".into()));
        }
        let phi = decl
            .phi
            .as_deref()
            .map(|src| NagumoSpec::from_expr(src, params))
            .transpose()
            .map_err(|e| at("phi", e.to_string()))?;
        if phi.is_none() && decl.solver.v_max.is_none() {
            return Err(fail("either phi or solver.v_max is required".into()));
        }
        let alpha = build_curve(&decl.alpha, period, params).map_err(|e| at("alpha", e))?;
        let beta = build_curve(&decl.beta, period, params).map_err(|e| at("beta", e))?;
        let band = Band::new(alpha, beta).map_err(|e| fail(e.to_string()))?;
        Ok(Problem {
            path: path.to_path_buf(),
            decl,
            canonical_input,
            field,
            phi,
            band,
        })
    }

    pub fn name(&self) -> &str {
        &self.decl.name
    }

    pub fn period(&self) -> f64 {
        self.field.period()
    }

    pub fn num(&self, n: &Num) -> CliResult<f64> {
        eval_num(n, &self.decl.params).map_err(|message| CliError::Problem {
            path: self.path.clone(),
            message,
        })
    }

    pub fn modified(&self) -> CliResult<Option<ModifiedField>> {
        match &self.phi {
            Some(phi) => Ok(Some(build_modified(&self.field, &self.band, phi)?)),
            None => Ok(None),
        }
    }

    pub fn band_problem(&self) -> CliResult<BandProblem> {
        Ok(BandProblem::new(self.field.clone(), self.band.clone(), self.modified()?))
    }

    pub fn asymptotic_options(&self) -> AsymptoticOptions {
        let s = &self.decl.solver;
        AsymptoticOptions {
            horizon: s.horizon,
            tol_conv: s.tol_conv,
            steps_per_period: s.steps_per_period,
            n_scan: s.n_scan,
            segment_steps: s.segment_steps,
            v_max: s.v_max,
        }
    }

    /// Velocity bracket: `K` of the truncated field, else `solver.v_max`.
    pub fn speed_bound(&self, modified: Option<&ModifiedField>) -> f64 {
        match modified {
            Some(m) => m.k(),
            None => self.decl.solver.v_max.unwrap_or(f64::NAN),
        }
    }

    pub fn h(&self) -> f64 {
        self.period() / self.decl.solver.steps_per_period as f64
    }

    pub fn directions(&self) -> Vec<Direction> {
        self.decl
            .asymptotic
            .as_ref()
            .map(|a| a.directions.clone())
            .unwrap_or_else(default_directions)
            .into_iter()
            .map(|d| match d {
                DirectionDecl::Future => Direction::Future,
                DirectionDecl::Past => Direction::Past,
            })
            .collect()
    }
}

pub fn eval_num(n: &Num, params: &BTreeMap<String, f64>) -> Result<f64, String> {
    match n {
        Num::Value(x) => Ok(*x),
        Num::Expr(src) => {
            let ast = parse_expr(src, &[], params).map_err(|e| e.to_string())?;
            ast.constant_value()
                .ok_or_else(|| format!("`{src}` is not a constant"))
        }
    }
}

fn build_curve(decl: &CurveDecl, period: f64, params: &BTreeMap<String, f64>) -> Result<Curve, String> {
    match decl {
        CurveDecl::Value(x) => Curve::constant(*x, period).map_err(|e| e.to_string()),
        CurveDecl::Expr(src) => Curve::from_exprs(period, &[(0.0, src.as_str())], params).map_err(|e| e.to_string()),
        CurveDecl::Pieces(pieces) => {
            let starts = pieces
                .iter()
                .map(|p| eval_num(&p.start, params))
                .collect::<Result<Vec<_>, _>>()?;
            let spec: Vec<(f64, &str)> = starts.iter().zip(pieces).map(|(&s, p)| (s, p.expr.as_str())).collect();
            Curve::from_exprs(period, &spec, params).map_err(|e| e.to_string())
        }
    }
}
