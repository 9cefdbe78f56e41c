//! Flat JSON run configuration with dotted override keys.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ctilqr::models::{convex_problem_with, lq_double_integrator, nonconvex_problem_with, CartpoleSetup};
use ctilqr::ocp::ProblemDef;
use ctilqr::odeint::{Method, StepperConfig};
use ctilqr::solver::SolverParams;
use nalgebra::DVector;
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    CartpoleConvex,
    CartpoleNonconvex,
    LqDoubleIntegrator,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::CartpoleConvex, ModelKind::CartpoleNonconvex, ModelKind::LqDoubleIntegrator];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::CartpoleConvex => "cartpole-convex",
            ModelKind::CartpoleNonconvex => "cartpole-nonconvex",
            ModelKind::LqDoubleIntegrator => "lq-double-integrator",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| {
                let names: Vec<_> = ModelKind::ALL.iter().map(|m| m.name()).collect();
                anyhow!("unknown model `{name}` (expected one of {})", names.join(", "))
            })
    }

    fn is_cartpole(self) -> bool {
        !matches!(self, ModelKind::LqDoubleIntegrator)
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelKind,
    /// Cart-pole parameters, horizon and initial state; only the horizon and
    /// initial state apply to the LQ model.
    pub setup: CartpoleSetup,
    pub solver: SolverParams,
    pub output_dir: PathBuf,
    pub samples: usize,
    /// When false, `wall_ms` is written as 0 so repeated runs are byte-identical.
    pub timing: bool,
}

pub const DEFAULT_OUTPUT_DIR: &str = "out";

impl RunConfig {
    pub fn defaults(model: ModelKind) -> Self {
        let mut setup = CartpoleSetup::default();
        if model == ModelKind::LqDoubleIntegrator {
            let lq = lq_double_integrator();
            setup.t0 = lq.t0;
            setup.tf = lq.tf;
            setup.x0 = lq.x0.clone();
        }
        RunConfig {
            model,
            setup,
            solver: SolverParams::default(),
            output_dir: PathBuf::from(DEFAULT_OUTPUT_DIR),
            samples: 401,
            timing: true,
        }
    }

    /// Parses a config document; `model_override` replaces its `model` key.
    pub fn from_json(text: &str, model_override: Option<&str>) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).context("malformed configuration JSON")?;
        let Value::Object(map) = doc else {
            bail!("configuration must be a JSON object");
        };
        let model = match (model_override, map.get("model")) {
            (Some(name), _) => ModelKind::from_name(name)?,
            (None, Some(Value::String(name))) => ModelKind::from_name(name)?,
            (None, Some(_)) => bail!("key `model`: expected a string"),
            (None, None) => bail!("configuration has no `model` key and no --model was given"),
        };
        let mut cfg = RunConfig::defaults(model);
        for (key, value) in &map {
            cfg.apply(key, value).with_context(|| format!("key `{key}`"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, model_override: Option<&str>) -> Result<Self> {
        match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
                RunConfig::from_json(&text, model_override).with_context(|| format!("in {}", path.display()))
            }
            None => {
                let name = model_override.ok_or_else(|| anyhow!("either a config file or --model is required"))?;
                let cfg = RunConfig::defaults(ModelKind::from_name(name)?);
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    fn apply(&mut self, key: &str, v: &Value) -> Result<()> {
        let (section, field) = key.split_once('.').unwrap_or(("", key));
        match (section, field) {
            ("", "model") => {}
            ("", "x0") => {
                let arr = v.as_array().ok_or_else(|| anyhow!("expected an array of numbers"))?;
                let xs = arr
                    .iter()
                    .map(|e| e.as_f64().ok_or_else(|| anyhow!("expected an array of numbers")))
                    .collect::<Result<Vec<_>>>()?;
                self.setup.x0 = DVector::from_vec(xs);
            }
            ("cartpole", _) => {
                if !self.model.is_cartpole() {
                    bail!("cart-pole parameters do not apply to model `{}`", self.model.name());
                }
                let p = &mut self.setup.params;
                let slot = match field {
                    "m_cart" => &mut p.m_cart,
                    "m_tip" => &mut p.m_tip,
                    "l" => &mut p.l,
                    "g" => &mut p.g,
                    _ => bail!("unknown configuration key"),
                };
                *slot = number(v)?;
            }
            ("horizon", "t0") => self.setup.t0 = number(v)?,
            ("horizon", "tf") => self.setup.tf = number(v)?,
            ("solver", "eps") => self.solver.eps = number(v)?,
            ("solver", "beta") => self.solver.beta = number(v)?,
            ("solver", "rho") => self.solver.rho = number(v)?,
            ("solver", "alpha_min") => self.solver.alpha_min = number(v)?,
            ("solver", "max_iter") => self.solver.max_iter = count(v)?,
            ("solver", "dv_tol") => self.solver.dv_tol = Some(number(v)?),
            ("solver", "regularize") => self.solver.regularize = boolean(v)?,
            ("backward", f) => apply_stepper(&mut self.solver.backward, f, v)?,
            ("forward", f) => apply_stepper(&mut self.solver.forward, f, v)?,
            ("output", "dir") => self.output_dir = PathBuf::from(v.as_str().ok_or_else(|| anyhow!("expected a string"))?),
            ("output", "samples") => self.samples = count(v)?,
            ("output", "timing") => self.timing = boolean(v)?,
            _ => bail!("unknown configuration key"),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        self.setup.params.validate()?;
        if !(self.setup.t0.is_finite() && self.setup.tf.is_finite() && self.setup.tf > self.setup.t0) {
            bail!("horizon must satisfy t0 < tf");
        }
        let n_x = if self.model.is_cartpole() { 4 } else { 2 };
        if self.setup.x0.len() != n_x {
            bail!("x0 must have {n_x} entries for model `{}`", self.model.name());
        }
        if self.samples < 2 {
            bail!("output.samples must be at least 2");
        }
        self.solver.validate()?;
        Ok(())
    }

    pub fn problem(&self) -> Result<ProblemDef> {
        Ok(match self.model {
            ModelKind::CartpoleConvex => convex_problem_with(&self.setup)?,
            ModelKind::CartpoleNonconvex => nonconvex_problem_with(&self.setup)?,
            ModelKind::LqDoubleIntegrator => {
                let mut p = lq_double_integrator();
                p.t0 = self.setup.t0;
                p.tf = self.setup.tf;
                p.x0 = self.setup.x0.clone();
                p
            }
        })
    }

    /// Every resolved setting under its config key.
    pub fn echo(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("model".into(), json!(self.model.name()));
        if self.model.is_cartpole() {
            let p = &self.setup.params;
            m.insert("cartpole.m_cart".into(), json!(p.m_cart));
            m.insert("cartpole.m_tip".into(), json!(p.m_tip));
            m.insert("cartpole.l".into(), json!(p.l));
            m.insert("cartpole.g".into(), json!(p.g));
        }
        m.insert("horizon.t0".into(), json!(self.setup.t0));
        m.insert("horizon.tf".into(), json!(self.setup.tf));
        m.insert("x0".into(), json!(self.setup.x0.as_slice()));
        let s = &self.solver;
        m.insert("solver.eps".into(), json!(s.eps));
        m.insert("solver.beta".into(), json!(s.beta));
        m.insert("solver.rho".into(), json!(s.rho));
        m.insert("solver.alpha_min".into(), json!(s.alpha_min));
        m.insert("solver.max_iter".into(), json!(s.max_iter));
        m.insert("solver.dv_tol".into(), s.dv_tol.map_or(Value::Null, |v| json!(v)));
        m.insert("solver.regularize".into(), json!(s.regularize));
        for (name, c) in [("backward", &s.backward), ("forward", &s.forward)] {
            m.insert(format!("{name}.reltol"), json!(c.reltol));
            m.insert(format!("{name}.abstol"), json!(c.abstol));
            m.insert(format!("{name}.method"), json!(c.method.name()));
            m.insert(format!("{name}.max_steps"), json!(c.max_steps));
        }
        m.insert("output.samples".into(), json!(self.samples));
        m.insert("output.timing".into(), json!(self.timing));
        m
    }
}

fn apply_stepper(c: &mut StepperConfig, field: &str, v: &Value) -> Result<()> {
    match field {
        "reltol" => c.reltol = number(v)?,
        "abstol" => c.abstol = number(v)?,
        "max_steps" => c.max_steps = count(v)?,
        "method" => {
            let name = v.as_str().ok_or_else(|| anyhow!("expected a string"))?;
            c.method = Method::from_name(name).ok_or_else(|| {
                anyhow!(
                    "unknown integration method `{name}` (expected {} or {})",
                    Method::Explicit54.name(),
                    Method::RosenbrockStiff.name()
                )
            })?;
        }
        _ => bail!("unknown configuration key"),
    }
    Ok(())
}

fn number(v: &Value) -> Result<f64> {
    v.as_f64().ok_or_else(|| anyhow!("expected a number, found {v}"))
}

fn count(v: &Value) -> Result<usize> {
    v.as_u64()
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| anyhow!("expected a non-negative integer, found {v}"))
}

fn boolean(v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| anyhow!("expected true or false, found {v}"))
}
