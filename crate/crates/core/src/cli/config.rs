//! JSON run configuration.
//!
//! Parsed by hand from a `serde_json::Value` so every rejection can name the
//! offending key with its full dotted path.

use nalgebra::DMatrix;
use serde_json::{Map, Value};

use crate::bounds::Flavor;
use crate::integrate::IntegrationConfig;
use crate::matrix_bounds::{make_linear_gaussian_vector_model, MatrixFlavor, PsiComponent, VectorModel, VectorPsi};
use crate::model::{make_model, ModelSpec, ScalarModel};
use crate::testfn::{PsiFamily, PsiSpec};

/// A configuration problem at `key`.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid config: `{key}`: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

type Result<T> = std::result::Result<T, ConfigError>;

fn err<T>(key: impl Into<String>, message: impl Into<String>) -> Result<T> {
    Err(ConfigError {
        key: key.into(),
        message: message.into(),
    })
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().map_or_else(|| err(path, "expected an object"), Ok)
}

fn only_keys(map: &Map<String, Value>, allowed: &[&str], path: &str) -> Result<()> {
    match map.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => err(join(path, k), "unknown key"),
        None => Ok(()),
    }
}

fn number(v: &Value, path: &str) -> Result<f64> {
    match v.as_f64() {
        Some(x) if x.is_finite() => Ok(x),
        _ => err(path, "expected a finite number"),
    }
}

fn req<'a>(map: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value> {
    map.get(key).map_or_else(|| err(join(path, key), "missing required key"), Ok)
}

fn req_number(map: &Map<String, Value>, key: &str, path: &str) -> Result<f64> {
    number(req(map, key, path)?, &join(path, key))
}

fn positive(map: &Map<String, Value>, key: &str, path: &str) -> Result<f64> {
    let x = req_number(map, key, path)?;
    if x > 0.0 {
        Ok(x)
    } else {
        err(join(path, key), format!("must be positive, got {x}"))
    }
}

fn string<'a>(v: &'a Value, path: &str) -> Result<&'a str> {
    v.as_str().map_or_else(|| err(path, "expected a string"), Ok)
}

fn array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array().map_or_else(|| err(path, "expected an array"), Ok)
}

fn numbers(v: &Value, path: &str) -> Result<Vec<f64>> {
    array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, x)| number(x, &format!("{path}[{i}]")))
        .collect()
}

fn pair(v: &Value, path: &str) -> Result<(f64, f64)> {
    let xs = numbers(v, path)?;
    match xs[..] {
        [a, b] if a < b => Ok((a, b)),
        [_, _] => err(path, "expected an increasing pair"),
        _ => err(path, "expected two numbers"),
    }
}

fn matrix(v: &Value, path: &str) -> Result<DMatrix<f64>> {
    let rows = array(v, path)?;
    if rows.is_empty() {
        return err(path, "expected a nonempty array of rows");
    }
    let mut vals = Vec::new();
    let mut cols = None;
    for (i, row) in rows.iter().enumerate() {
        let r = numbers(row, &format!("{path}[{i}]"))?;
        if r.is_empty() || cols.is_some_and(|c| c != r.len()) {
            return err(format!("{path}[{i}]"), "rows must be nonempty and of equal length");
        }
        cols = Some(r.len());
        vals.extend(r);
    }
    Ok(DMatrix::from_row_slice(rows.len(), cols.unwrap_or(0), &vals))
}

/// Linear-Gaussian vector model with optional target matrix.
#[derive(Debug, Clone)]
pub struct VectorConfig {
    pub model: VectorModel,
}

#[derive(Debug, Clone)]
pub enum ModelConfig {
    Scalar(ScalarModel),
    Vector(VectorConfig),
}

/// The `bound` section, interpreted against the model kind.
#[derive(Debug, Clone, Default)]
pub struct BoundSection {
    pub family: Option<PsiFamily>,
    pub flavor: Option<String>,
    pub h: Option<f64>,
    pub s: Option<f64>,
    pub y: Option<Vec<f64>>,
    pub shifts: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct SweepSection {
    pub h_grid: Vec<f64>,
    pub s_grid: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OptimizeSection {
    pub h_range: (f64, f64),
    pub s_range: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct OutputSection {
    pub csv_path: Option<String>,
    pub precision: usize,
}

pub const DEFAULT_PRECISION: usize = 10;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub bound: Option<BoundSection>,
    pub integration: IntegrationConfig,
    pub sweep: Option<SweepSection>,
    pub optimize: Option<OptimizeSection>,
    pub output: OutputSection,
}

const TOP_KEYS: &[&str] = &["model", "bound", "integration", "sweep", "optimize", "output"];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).or_else(|e| err("", format!("not valid JSON: {e}")))?;
        let top = object(&v, "")?;
        only_keys(top, TOP_KEYS, "")?;
        let integration = match top.get("integration") {
            Some(v) => parse_integration(v)?,
            None => IntegrationConfig::default(),
        };
        let model = parse_model(req(top, "model", "")?)?;
        let bound = top
            .get("bound")
            .map(|v| parse_bound(v, &model))
            .transpose()?;
        let sweep = top.get("sweep").map(parse_sweep).transpose()?;
        let optimize = top.get("optimize").map(parse_optimize).transpose()?;
        let output = match top.get("output") {
            Some(v) => parse_output(v)?,
            None => OutputSection {
                csv_path: None,
                precision: DEFAULT_PRECISION,
            },
        };
        Ok(RunConfig {
            model,
            bound,
            integration,
            sweep,
            optimize,
            output,
        })
    }

    pub fn scalar_model(&self, command: &str) -> Result<&ScalarModel> {
        match &self.model {
            ModelConfig::Scalar(m) => Ok(m),
            ModelConfig::Vector(_) => err("model.kind", format!("`{command}` needs a scalar model")),
        }
    }

    /// Non-fatal remarks: `s = 1` with the joint-ratio family.
    pub fn warnings(&self) -> Vec<String> {
        let Some(b) = &self.bound else {
            return Vec::new();
        };
        if b.family != Some(PsiFamily::Ww) {
            return Vec::new();
        }
        let mut out = Vec::new();
        if b.s == Some(1.0) {
            out.push("bound.s = 1 with family ww; the ww flavor requires s < 1".to_string());
        }
        if self.sweep.as_ref().is_some_and(|sw| sw.s_grid.contains(&1.0)) {
            out.push("sweep.s_grid contains 1 with family ww".to_string());
        }
        if self.optimize.as_ref().is_some_and(|o| o.s_range.1 == 1.0) {
            out.push("optimize.s_range reaches 1 with family ww".to_string());
        }
        out
    }

    pub fn require_bound(&self) -> Result<&BoundSection> {
        self.bound.as_ref().map_or_else(|| err("bound", "missing required section"), Ok)
    }
}

fn parse_integration(v: &Value) -> Result<IntegrationConfig> {
    let map = object(v, "integration")?;
    only_keys(map, &["nodes_per_axis", "tail_sigmas", "mc_samples", "seed"], "integration")?;
    let mut cfg = IntegrationConfig::default();
    let uint = |key: &str| -> Result<Option<u64>> {
        map.get(key)
            .map(|x| x.as_u64().map_or_else(|| err(join("integration", key), "expected a nonnegative integer"), Ok))
            .transpose()
    };
    if let Some(n) = uint("nodes_per_axis")? {
        if n < 33 {
            return err("integration.nodes_per_axis", format!("must be at least 33, got {n}"));
        }
        cfg.nodes_per_axis = n as usize;
    }
    if let Some(t) = map.get("tail_sigmas") {
        let t = number(t, "integration.tail_sigmas")?;
        if t < 4.0 {
            return err("integration.tail_sigmas", format!("must be at least 4, got {t}"));
        }
        cfg.tail_sigmas = t;
    }
    if let Some(n) = uint("mc_samples")? {
        cfg.mc_samples = n as usize;
    }
    if let Some(n) = uint("seed")? {
        cfg.seed = n;
    }
    Ok(cfg)
}

/// A positive model parameter accepted under either of two names.
fn aliased(map: &Map<String, Value>, key: &str, alias: &str) -> Result<f64> {
    match (map.contains_key(key), map.contains_key(alias)) {
        (true, true) => err(join("model", alias), format!("conflicts with model.{key}")),
        (false, true) => positive(map, alias, "model"),
        _ => positive(map, key, "model"),
    }
}

fn parse_model(v: &Value) -> Result<ModelConfig> {
    let map = object(v, "model")?;
    let kind = string(req(map, "kind", "model")?, "model.kind")?;
    let spec = match kind {
        "gaussian_gaussian" => {
            only_keys(
                map,
                &["kind", "var_prior", "var_noise", "sigma_theta2", "sigma_n2", "n_obs"],
                "model",
            )?;
            let n = req(map, "n_obs", "model")?;
            let n_obs = match n.as_u64() {
                Some(n) if n >= 1 => n as usize,
                _ => return err("model.n_obs", "expected a positive integer"),
            };
            ModelSpec::GaussianGaussian {
                var_prior: aliased(map, "var_prior", "sigma_theta2")?,
                var_noise: aliased(map, "var_noise", "sigma_n2")?,
                n_obs,
            }
        }
        "discrete_channel" => {
            only_keys(map, &["kind", "flip_prob"], "model")?;
            let p = req_number(map, "flip_prob", "model")?;
            if !(p > 0.0 && p < 0.5) {
                return err("model.flip_prob", format!("must lie in (0, 0.5), got {p}"));
            }
            ModelSpec::DiscreteChannel { flip_prob: p }
        }
        "uniform_location" => {
            only_keys(map, &["kind", "prior_var", "width"], "model")?;
            ModelSpec::UniformLocation {
                prior_var: positive(map, "prior_var", "model")?,
                width: positive(map, "width", "model")?,
            }
        }
        "linear_gaussian" => {
            only_keys(map, &["kind", "h_matrix", "prior_cov", "noise_cov", "target_matrix"], "model")?;
            let h = matrix(req(map, "h_matrix", "model")?, "model.h_matrix")?;
            let p = matrix(req(map, "prior_cov", "model")?, "model.prior_cov")?;
            let r = matrix(req(map, "noise_cov", "model")?, "model.noise_cov")?;
            let mut vm = make_linear_gaussian_vector_model(h, p, r).or_else(|e| err("model", e.to_string()))?;
            if let Some(g) = map.get("target_matrix") {
                vm = vm
                    .with_target(matrix(g, "model.target_matrix")?)
                    .or_else(|e| err("model.target_matrix", e.to_string()))?;
            }
            return Ok(ModelConfig::Vector(VectorConfig { model: vm }));
        }
        other => return err("model.kind", format!("unknown model kind `{other}`")),
    };
    make_model(spec)
        .map(ModelConfig::Scalar)
        .or_else(|e| err("model", e.to_string()))
}

const SCALAR_FLAVORS: &[&str] = &[
    "global",
    "conditional",
    "avg_conditional",
    "avg_theta",
    "ww",
    "ww_conditional",
    "asymptotic",
    "exact_risk",
];
const MATRIX_FLAVORS: &[&str] = &["global", "conditional", "avg_conditional", "avg_theta"];

fn parse_bound(v: &Value, model: &ModelConfig) -> Result<BoundSection> {
    let map = object(v, "bound")?;
    only_keys(map, &["family", "flavor", "h", "s", "y", "shifts"], "bound")?;
    let mut b = BoundSection::default();
    if let Some(f) = map.get("family") {
        let f = string(f, "bound.family")?;
        b.family = Some(f.parse().or_else(|_| err("bound.family", format!("unknown family `{f}`")))?);
        if b.family == Some(PsiFamily::Custom) {
            return err("bound.family", "custom test functions cannot be configured from JSON");
        }
    }
    let vector = matches!(model, ModelConfig::Vector(_));
    if let Some(f) = map.get("flavor") {
        let f = string(f, "bound.flavor")?;
        let allowed = if vector { MATRIX_FLAVORS } else { SCALAR_FLAVORS };
        if !allowed.contains(&f) {
            return err("bound.flavor", format!("unknown flavor `{f}` for this model"));
        }
        b.flavor = Some(f.to_string());
    }
    if let Some(h) = map.get("h") {
        let h = number(h, "bound.h")?;
        if h == 0.0 {
            return err("bound.h", "must be nonzero");
        }
        b.h = Some(h);
    }
    if let Some(s) = map.get("s") {
        let s = number(s, "bound.s")?;
        let ww_flavor = matches!(b.flavor.as_deref(), Some("ww" | "ww_conditional"));
        if !(s > 0.0 && (s < 1.0 || (s == 1.0 && !ww_flavor))) {
            return err("bound.s", format!("must lie in (0, 1], and in (0, 1) for ww flavors; got {s}"));
        }
        b.s = Some(s);
    }
    if let Some(y) = map.get("y") {
        b.y = Some(match y {
            Value::Array(_) => numbers(y, "bound.y")?,
            _ => vec![number(y, "bound.y")?],
        });
    }
    if let Some(sh) = map.get("shifts") {
        if !vector {
            return err("bound.shifts", "only vector models take shift vectors");
        }
        let rows = array(sh, "bound.shifts")?;
        b.shifts = Some(
            rows.iter()
                .enumerate()
                .map(|(i, r)| numbers(r, &format!("bound.shifts[{i}]")))
                .collect::<Result<_>>()?,
        );
    }
    if let ModelConfig::Vector(vc) = model {
        let (p, m) = (vc.model.parameter_dim(), vc.model.observation_dim());
        if let Some(y) = &b.y {
            if y.len() != m {
                return err("bound.y", format!("expected {m} entries"));
            }
        }
        if let Some(sh) = &b.shifts {
            if let Some(i) = sh.iter().position(|r| r.len() != p || r.iter().all(|x| *x == 0.0)) {
                return err(format!("bound.shifts[{i}]"), format!("expected {p} entries, not all zero"));
            }
        }
    } else if let Some(y) = &b.y {
        if y.len() != 1 {
            return err("bound.y", "expected a single number for a scalar model");
        }
    }
    Ok(b)
}

fn parse_sweep(v: &Value) -> Result<SweepSection> {
    let map = object(v, "sweep")?;
    only_keys(map, &["h_grid", "s_grid"], "sweep")?;
    let h_grid = numbers(req(map, "h_grid", "sweep")?, "sweep.h_grid")?;
    let s_grid = numbers(req(map, "s_grid", "sweep")?, "sweep.s_grid")?;
    if h_grid.is_empty() {
        return err("sweep.h_grid", "must be nonempty");
    }
    if s_grid.is_empty() {
        return err("sweep.s_grid", "must be nonempty");
    }
    if let Some(i) = h_grid.iter().position(|h| *h == 0.0) {
        return err(format!("sweep.h_grid[{i}]"), "must be nonzero");
    }
    if let Some(i) = s_grid.iter().position(|s| !(*s > 0.0 && *s <= 1.0)) {
        return err(format!("sweep.s_grid[{i}]"), "must lie in (0, 1]");
    }
    Ok(SweepSection { h_grid, s_grid })
}

fn parse_optimize(v: &Value) -> Result<OptimizeSection> {
    let map = object(v, "optimize")?;
    only_keys(map, &["h_range", "s_range"], "optimize")?;
    let h_range = pair(req(map, "h_range", "optimize")?, "optimize.h_range")?;
    let s_range = pair(req(map, "s_range", "optimize")?, "optimize.s_range")?;
    if h_range.0 <= 0.0 && h_range.1 >= 0.0 {
        return err("optimize.h_range", "must not contain 0");
    }
    if !(s_range.0 > 0.0 && s_range.1 <= 1.0) {
        return err("optimize.s_range", "must lie in (0, 1]");
    }
    Ok(OptimizeSection { h_range, s_range })
}

fn parse_output(v: &Value) -> Result<OutputSection> {
    let map = object(v, "output")?;
    only_keys(map, &["csv_path", "precision"], "output")?;
    let csv_path = map
        .get("csv_path")
        .map(|p| string(p, "output.csv_path").map(str::to_string))
        .transpose()?;
    let precision = match map.get("precision") {
        None => DEFAULT_PRECISION,
        Some(p) => match p.as_u64() {
            Some(n) if (1..=17).contains(&n) => n as usize,
            _ => return err("output.precision", "expected an integer in 1..=17"),
        },
    };
    Ok(OutputSection { csv_path, precision })
}

impl BoundSection {
    pub fn require_family(&self) -> Result<PsiFamily> {
        self.family.map_or_else(|| err("bound.family", "missing required key"), Ok)
    }

    pub fn require_flavor(&self) -> Result<&str> {
        self.flavor.as_deref().map_or_else(|| err("bound.flavor", "missing required key"), Ok)
    }

    pub fn scalar_flavor(&self) -> Result<Flavor> {
        let f = self.require_flavor()?;
        f.parse().or_else(|_| err("bound.flavor", format!("unknown flavor `{f}`")))
    }

    pub fn require_h(&self) -> Result<f64> {
        self.h.map_or_else(|| err("bound.h", "missing required key"), Ok)
    }

    pub fn require_s(&self) -> Result<f64> {
        self.s.map_or_else(|| err("bound.s", "missing required key"), Ok)
    }

    pub fn scalar_y(&self) -> Result<f64> {
        match self.y.as_deref() {
            Some([y]) => Ok(*y),
            _ => err("bound.y", "missing required key"),
        }
    }

    /// The scalar test function described by `family`, `h` and `s`.
    pub fn scalar_psi(&self) -> Result<PsiSpec> {
        let spec = match self.require_family()? {
            PsiFamily::Optimal => Ok(PsiSpec::optimal()),
            PsiFamily::Ww => PsiSpec::ww(self.require_h()?, self.require_s()?),
            PsiFamily::Cond => PsiSpec::cond(self.require_h()?, self.require_s()?),
            PsiFamily::Custom => return err("bound.family", "custom test functions cannot be configured"),
        };
        spec.or_else(|e| err("bound", e.to_string()))
    }

    /// The vector test function: `optimal`, or one component per shift.
    pub fn vector_psi(&self) -> Result<VectorPsi> {
        match self.require_family()? {
            PsiFamily::Optimal => Ok(VectorPsi::Optimal),
            family @ (PsiFamily::Ww | PsiFamily::Cond) => {
                let s = self.require_s()?;
                let shifts = self.shifts.clone().map_or_else(|| err("bound.shifts", "missing required key"), Ok)?;
                if shifts.is_empty() {
                    return err("bound.shifts", "must be nonempty");
                }
                VectorPsi::stacked(
                    shifts
                        .into_iter()
                        .map(|shift| PsiComponent { family, shift, s })
                        .collect(),
                )
                .or_else(|e| err("bound", e.to_string()))
            }
            PsiFamily::Custom => err("bound.family", "custom test functions cannot be configured"),
        }
    }

    pub fn matrix_flavor(&self) -> Result<MatrixFlavor> {
        Ok(match self.require_flavor()? {
            "global" => MatrixFlavor::Global,
            "avg_conditional" => MatrixFlavor::AvgConditional,
            "avg_theta" => MatrixFlavor::AvgTheta,
            "conditional" => MatrixFlavor::Conditional(
                self.y.clone().map_or_else(|| err("bound.y", "missing required key"), Ok)?,
            ),
            other => return err("bound.flavor", format!("unknown matrix flavor `{other}`")),
        })
    }
}
