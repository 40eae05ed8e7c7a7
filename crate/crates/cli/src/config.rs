//! Experiment configuration: a TOML tree with dotted-path overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use hjreg::grid::{Boundary, Grid};
use hjreg::lagrangian::{
    AnisotropicQuadratic, Drift, FreeParticle, Mechanical, PotentialKind, TonelliLagrangian,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Experiment families, one per subcommand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Fundamental,
    Operators,
    Discounted,
    Regularize,
    Singularity,
    Propcheck,
    LambdaSweep,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::Fundamental,
        Kind::Operators,
        Kind::Discounted,
        Kind::Regularize,
        Kind::Singularity,
        Kind::Propcheck,
        Kind::LambdaSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Fundamental => "fundamental",
            Kind::Operators => "operators",
            Kind::Discounted => "discounted",
            Kind::Regularize => "regularize",
            Kind::Singularity => "singularity",
            Kind::Propcheck => "propcheck",
            Kind::LambdaSweep => "lambda-sweep",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Kind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown experiment kind `{s}`")))
    }
}

/// A catalog Lagrangian by key with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagrangianSpec {
    /// `free_particle`, `drift`, `mechanical`, `double_well` or `anisotropic`.
    pub key: String,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tilt: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diag: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<f64>,
}

fn one() -> usize {
    1
}

impl Default for LagrangianSpec {
    fn default() -> Self {
        Self::named("free_particle", 1)
    }
}

impl LagrangianSpec {
    pub fn named(key: &str, dim: usize) -> Self {
        Self {
            key: key.to_string(),
            dim,
            drift: None,
            potential: None,
            amplitude: None,
            shift: None,
            frequency: None,
            tilt: None,
            diag: None,
            coupling: None,
        }
    }

    pub fn is_free_particle(&self) -> bool {
        self.key == "free_particle"
    }

    fn vector(&self, name: &str, v: &Option<Vec<f64>>) -> Result<Option<Vec<f64>>, CliError> {
        match v {
            Some(v) if v.len() != self.dim => Err(CliError::Config(format!(
                "lagrangian.{name} has length {} but dim is {}",
                v.len(),
                self.dim
            ))),
            Some(v) => Ok(Some(v.clone())),
            None => Ok(None),
        }
    }

    fn reject(&self, allowed: &[&str]) -> Result<(), CliError> {
        let present = [
            ("drift", self.drift.is_some()),
            ("potential", self.potential.is_some()),
            ("amplitude", self.amplitude.is_some()),
            ("shift", self.shift.is_some()),
            ("frequency", self.frequency.is_some()),
            ("tilt", self.tilt.is_some()),
            ("diag", self.diag.is_some()),
            ("coupling", self.coupling.is_some()),
        ];
        for (name, set) in present {
            if set && !allowed.contains(&name) {
                return Err(CliError::Config(format!(
                    "lagrangian `{}` does not take parameter `{name}`",
                    self.key
                )));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Arc<dyn TonelliLagrangian>, CliError> {
        if self.dim == 0 {
            return Err(CliError::Config("lagrangian.dim must be positive".into()));
        }
        let mech = |m: Mechanical| -> Result<Mechanical, CliError> {
            let mut m = m;
            if let Some(a) = self.amplitude {
                m = m.with_amplitude(a);
            }
            if let Some(s) = self.shift {
                m = m.with_shift(s);
            }
            if let Some(f) = self.frequency {
                m = m.with_frequency(f);
            }
            if let Some(t) = self.vector("tilt", &self.tilt)? {
                m = m.with_tilt(t);
            }
            Ok(m)
        };
        let l: Arc<dyn TonelliLagrangian> = match self.key.as_str() {
            "free_particle" => {
                self.reject(&[])?;
                Arc::new(FreeParticle::new(self.dim))
            }
            "drift" => {
                self.reject(&["drift"])?;
                let b = self
                    .vector("drift", &self.drift)?
                    .ok_or_else(|| CliError::Config("lagrangian `drift` needs `drift`".into()))?;
                Arc::new(Drift::new(b))
            }
            "mechanical" => {
                self.reject(&["potential", "amplitude", "shift", "frequency", "tilt"])?;
                let kind = self
                    .potential
                    .ok_or_else(|| CliError::Config("lagrangian `mechanical` needs `potential`".into()))?;
                Arc::new(mech(Mechanical::new(self.dim, kind))?)
            }
            "double_well" => {
                self.reject(&["tilt"])?;
                Arc::new(mech(Mechanical::double_well_cost(self.dim))?)
            }
            "anisotropic" => {
                self.reject(&["diag", "coupling"])?;
                let diag = self.vector("diag", &self.diag)?.unwrap_or_else(|| vec![1.0; self.dim]);
                if diag.iter().any(|d| !(*d > 0.0)) {
                    return Err(CliError::Config("lagrangian.diag entries must be positive".into()));
                }
                Arc::new(AnisotropicQuadratic::new(diag, self.coupling.unwrap_or(0.0)))
            }
            other => {
                return Err(CliError::Config(format!("unknown lagrangian key `{other}`")));
            }
        };
        Ok(l)
    }
}

/// Box, node counts and boundary policy of a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: Vec<usize>,
    #[serde(default = "constant_extend")]
    pub boundary: Boundary,
}

fn constant_extend() -> Boundary {
    Boundary::ConstantExtend
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid, CliError> {
        Grid::new(self.lower.clone(), self.upper.clone(), self.nodes.clone(), self.boundary)
            .map_err(|e| CliError::Config(format!("grid: {e}")))
    }
}

/// A time grid: explicit values or `max·ratio^k` for `k < count`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TGridSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

impl TGridSpec {
    pub fn geometric(max: f64, ratio: f64, count: usize) -> Self {
        Self {
            values: None,
            max: Some(max),
            ratio: Some(ratio),
            count: Some(count),
        }
    }

    pub fn build(&self) -> Result<Vec<f64>, CliError> {
        let ts = match (&self.values, self.max, self.count) {
            (Some(v), None, None) if self.ratio.is_none() => v.clone(),
            (None, Some(max), Some(count)) => {
                let ratio = self.ratio.unwrap_or(0.5);
                if !(ratio > 0.0 && ratio < 1.0) {
                    return Err(CliError::Config("t_grid.ratio must lie in (0, 1)".into()));
                }
                (0..count).map(|k| max * ratio.powi(k as i32)).collect()
            }
            _ => {
                return Err(CliError::Config(
                    "t_grid takes either `values` or `max` and `count` (with optional `ratio`)".into(),
                ))
            }
        };
        if ts.is_empty() || ts.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(CliError::Config("t_grid values must be positive and finite".into()));
        }
        Ok(ts)
    }
}

/// Parameters of the `fundamental` experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FundamentalParams {
    /// `oracle` compares against the closed form, `gradients` against finite differences.
    pub mode: String,
    pub samples: usize,
    pub gap: [f64; 2],
    pub half_width: f64,
    /// Discount rates; non-empty selects the discounted-kernel oracle.
    pub lambdas: Vec<f64>,
    pub n_segments: usize,
    pub solver_tol: f64,
    pub fd_step: f64,
    /// Lagrangians for the gradient mode; defaults to the configured one.
    pub catalog: Vec<LagrangianSpec>,
}

impl Default for FundamentalParams {
    fn default() -> Self {
        Self {
            mode: "oracle".into(),
            samples: 100,
            gap: [0.05, 0.5],
            half_width: 1.0,
            lambdas: Vec::new(),
            n_segments: 16,
            solver_tol: 1e-10,
            fd_step: 1e-5,
            catalog: Vec::new(),
        }
    }
}

/// Initial datum for the operator experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    /// `neg_abs`, `abs`, `quadratic`, `cos`, `constant`.
    pub kind: String,
    #[serde(default = "unit")]
    pub scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for FunctionSpec {
    fn default() -> Self {
        Self {
            kind: "neg_abs".into(),
            scale: 1.0,
        }
    }
}

impl FunctionSpec {
    pub fn eval(&self) -> Result<impl Fn(&[f64]) -> f64, CliError> {
        let a = self.scale;
        let f: fn(&[f64]) -> f64 = match self.kind.as_str() {
            "neg_abs" => |x| -x.iter().map(|c| c * c).sum::<f64>().sqrt(),
            "abs" => |x| x.iter().map(|c| c * c).sum::<f64>().sqrt(),
            "quadratic" => |x| 0.5 * x.iter().map(|c| c * c).sum::<f64>(),
            "cos" => |x| x.iter().map(|c| c.cos()).sum(),
            "constant" => |_| 1.0,
            other => return Err(CliError::Config(format!("unknown function kind `{other}`"))),
        };
        Ok(move |x: &[f64]| a * f(x))
    }
}

/// Parameters of the `operators` experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorsParams {
    /// `lax_plus`, `lax_minus` or `kappa0`.
    pub operator: String,
    pub initial: FunctionSpec,
    pub taus: Vec<f64>,
    /// Compare with the Moreau closed form of `u = −|x|`.
    pub moreau_oracle: bool,
    /// Scales `α` applied to the datum by the `kappa0` study.
    pub scales: Vec<f64>,
    pub sample_points: Vec<Vec<f64>>,
}

impl Default for OperatorsParams {
    fn default() -> Self {
        Self {
            operator: "lax_plus".into(),
            initial: FunctionSpec::default(),
            taus: vec![0.1, 0.2, 0.4],
            moreau_oracle: false,
            scales: vec![1.0, 2.0],
            sample_points: Vec::new(),
        }
    }
}

/// Parameters of the `discounted` experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscountedParams {
    pub dt: f64,
    pub tol_fp: f64,
    /// Refinement factor of the reference solution; zero skips it.
    pub reference_refine: usize,
    /// Also solve `L = v²/2 + a` with this `a` and compare with `a/λ`.
    pub constant_case: Option<f64>,
    /// Horizon of the lift check `T⁻_t u = e^{λt} u`; zero skips it.
    pub lift_t: f64,
    pub lift_steps: usize,
    pub calibrated_points: Vec<Vec<f64>>,
    pub calibrated_horizon: f64,
}

impl Default for DiscountedParams {
    fn default() -> Self {
        Self {
            dt: 0.05,
            tol_fp: 1e-10,
            reference_refine: 0,
            constant_case: None,
            lift_t: 0.0,
            lift_steps: 1,
            calibrated_points: Vec::new(),
            calibrated_horizon: 1.0,
        }
    }
}

/// Parameters shared by `regularize` and `singularity`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizeParams {
    pub dt: f64,
    pub tol_fp: f64,
    /// Explicit probe points; when empty, every detected singular node plus
    /// `smooth_probes` seeded random smooth nodes.
    pub probes: Vec<Vec<f64>>,
    pub smooth_probes: usize,
    /// Start point of the singularity trace.
    pub x0: Option<Vec<f64>>,
    pub probe_samples: usize,
}

impl Default for RegularizeParams {
    fn default() -> Self {
        Self {
            dt: 0.02,
            tol_fp: 1e-10,
            probes: Vec::new(),
            smooth_probes: 8,
            x0: None,
            probe_samples: 200,
        }
    }
}

/// Parameters of the `propcheck` experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropcheckParams {
    /// Lagrangians to probe; defaults to the built-in catalog.
    pub catalog: Vec<LagrangianSpec>,
    pub samples: usize,
    pub cone: f64,
    pub gaps: Vec<f64>,
    pub radius: f64,
    pub containment_t: f64,
}

impl Default for PropcheckParams {
    fn default() -> Self {
        Self {
            catalog: Vec::new(),
            samples: 120,
            cone: 1.0,
            gaps: vec![0.1, 0.2, 0.3],
            radius: 0.5,
            containment_t: 0.3,
        }
    }
}

/// Parameters of the `lambda-sweep` experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaSweepParams {
    pub lambdas: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub dt: f64,
    /// Known `q_x` per point, when available.
    pub reference: Option<Vec<Vec<f64>>>,
}

impl Default for LambdaSweepParams {
    fn default() -> Self {
        Self {
            lambdas: vec![1.0, 0.5, 0.25],
            points: vec![vec![0.0]],
            dt: 0.05,
            reference: None,
        }
    }
}

/// The full experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<Kind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lagrangian: LagrangianSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<TGridSpec>,
    /// Acceptance bounds by name; see each experiment for the recognised keys.
    #[serde(default)]
    pub tol: BTreeMap<String, f64>,
    #[serde(default)]
    pub fundamental: FundamentalParams,
    #[serde(default)]
    pub operators: OperatorsParams,
    #[serde(default)]
    pub discounted: DiscountedParams,
    #[serde(default)]
    pub regularize: RegularizeParams,
    #[serde(default)]
    pub propcheck: PropcheckParams,
    #[serde(default)]
    pub lambda_sweep: LambdaSweepParams,
}

impl ExperimentConfig {
    pub fn require_lambda(&self) -> Result<f64, CliError> {
        match self.lambda {
            Some(l) if l > 0.0 && l.is_finite() => Ok(l),
            Some(l) => Err(CliError::Config(format!("lambda must be positive, got {l}"))),
            None => Err(CliError::Config("this experiment needs `lambda`".into())),
        }
    }

    pub fn require_grid(&self) -> Result<Grid, CliError> {
        self.grid
            .as_ref()
            .ok_or_else(|| CliError::Config("this experiment needs a `[grid]` section".into()))?
            .build()
    }

    pub fn require_t_grid(&self) -> Result<Vec<f64>, CliError> {
        self.t_grid
            .as_ref()
            .ok_or_else(|| CliError::Config("this experiment needs a `[t_grid]` section".into()))?
            .build()
    }

    /// Bound `name`, or `default` when not configured.
    pub fn tol(&self, name: &str, default: f64) -> f64 {
        self.tol.get(name).copied().unwrap_or(default)
    }
}

/// Parses `key=value`, reading the value as a TOML literal and falling back
/// to a bare string.
pub fn parse_assignment(s: &str) -> Result<(String, toml::Value), CliError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("expected KEY=VALUE, got `{s}`")))?;
    let key = k.trim();
    if key.is_empty() {
        return Err(CliError::Config(format!("empty key in `{s}`")));
    }
    let raw = v.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// Sets `path` (dot separated) in a TOML tree, creating tables as needed.
pub fn set_path(root: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = path.split('.').collect();
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{part}` in `{path}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Reads a config file (or starts empty), applies overrides and validates.
pub fn load(
    path: Option<&Path>,
    kind: Kind,
    sets: &[String],
    tols: &[String],
    seed: Option<u64>,
) -> Result<ExperimentConfig, CliError> {
    let mut tree = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for s in sets {
        let (k, v) = parse_assignment(s)?;
        set_path(&mut tree, &k, v)?;
    }
    for s in tols {
        let (k, v) = parse_assignment(s)?;
        let v = match v {
            toml::Value::Integer(i) => toml::Value::Float(i as f64),
            other => other,
        };
        set_path(&mut tree, &format!("tol.{k}"), v)?;
    }
    if let Some(seed) = seed {
        tree.insert("seed".into(), toml::Value::Integer(seed as i64));
    }
    let mut cfg: ExperimentConfig = tree
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
    match cfg.kind {
        Some(k) if k != kind => {
            return Err(CliError::Config(format!(
                "config is for experiment `{k}` but `{kind}` was requested"
            )))
        }
        _ => cfg.kind = Some(kind),
    }
    for (k, v) in &cfg.tol {
        if !(*v > 0.0 && v.is_finite()) {
            return Err(CliError::Config(format!("tolerance `{k}` must be positive, got {v}")));
        }
    }
    Ok(cfg)
}
