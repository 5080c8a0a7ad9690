//! Run configuration: a JSON file, overridden key by key by command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use pavg_core::averaging::{DEFAULT_NODES, DEFAULT_ROOT_TOL};
use pavg_core::expr::{field_from_spec, FieldSpec};
use pavg_core::odeint::{IntegratorConfig, DEFAULT_STEPS_PER_PERIOD};
use pavg_core::orbit::{OrbitConfig, DEFAULT_MAX_ITERATIONS, DEFAULT_RESIDUAL_TOL};
use pavg_core::vdp::{ForcingParams, VdpField, VdpModel};
use pavg_core::{LinearTestField, PeriodicField};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    /// `g = -x + cos t`, period 2π.
    Linear,
    NonsmoothVdp,
    ClassicalVdp,
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Builtin::Linear => "linear",
            Builtin::NonsmoothVdp => "nonsmooth_vdp",
            Builtin::ClassicalVdp => "classical_vdp",
        })
    }
}

impl FromStr for Builtin {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Builtin::Linear),
            "nonsmooth_vdp" => Ok(Builtin::NonsmoothVdp),
            "classical_vdp" => Ok(Builtin::ClassicalVdp),
            other => bail!("unknown builtin system {other:?} (expected linear, nonsmooth_vdp or classical_vdp)"),
        }
    }
}

/// A builtin name, or a field written in the expression language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Builtin(Builtin),
    Dsl(FieldSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntegratorSettings {
    /// Fixed step: either `h` or `steps_per_period` (default T/2000).
    Rk4 {
        h: Option<f64>,
        steps_per_period: Option<usize>,
        max_steps: Option<usize>,
    },
    Rk45 {
        abs_tol: f64,
        rel_tol: f64,
        max_steps: Option<usize>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: Option<SystemSpec>,
    /// Forcing parameters `a`, `lambda` for the oscillators, or rebinding of
    /// the parameters of a text field.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub integrator: Option<IntegratorSettings>,
    pub quadrature_nodes: Option<usize>,
    pub root_tol: Option<f64>,
    pub residual_tol: Option<f64>,
    pub max_iterations: Option<usize>,
    pub seed: Option<u64>,
    /// Point for `avg`, `certify` and `verify`.
    pub point: Option<Vec<f64>>,
    /// Decreasing small-parameter values for `verify`.
    pub eps: Option<Vec<f64>>,
    /// Sampling radius of the `certify` diagnostics.
    pub delta: Option<f64>,
    pub lipschitz_samples: Option<usize>,
    pub pairwise_samples: Option<usize>,
    /// Main output (JSON or CSV depending on the command); stdout if absent.
    pub output: Option<PathBuf>,
    /// JSON summary of `verify`.
    pub summary: Option<PathBuf>,
    /// SVG plot of `resonance`.
    pub svg: Option<PathBuf>,
}

/// Flag values that override configuration keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub system: Option<SystemSpec>,
    pub params: Vec<(String, f64)>,
    pub quadrature_nodes: Option<usize>,
    pub root_tol: Option<f64>,
    pub residual_tol: Option<f64>,
    pub seed: Option<u64>,
    pub point: Option<Vec<f64>>,
    pub eps: Option<Vec<f64>>,
    pub delta: Option<f64>,
    pub lipschitz_samples: Option<usize>,
    pub pairwise_samples: Option<usize>,
    pub output: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub svg: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn apply(mut self, o: Overrides) -> Self {
        if o.system.is_some() {
            self.system = o.system;
        }
        self.params.extend(o.params);
        macro_rules! take {
            ($($k:ident),*) => { $( if o.$k.is_some() { self.$k = o.$k; } )* };
        }
        take!(
            quadrature_nodes,
            root_tol,
            residual_tol,
            seed,
            point,
            eps,
            delta,
            lipschitz_samples,
            pairwise_samples,
            output,
            summary,
            svg
        );
        self
    }

    pub fn nodes(&self) -> usize {
        self.quadrature_nodes.unwrap_or(DEFAULT_NODES)
    }

    pub fn root_tol(&self) -> f64 {
        self.root_tol.unwrap_or(DEFAULT_ROOT_TOL)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Checks every key that does not need the field itself.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes();
        if n < 16 || !n.is_multiple_of(2) {
            bail!("quadrature_nodes must be even and at least 16, got {n}");
        }
        for (name, v) in [
            ("root_tol", self.root_tol),
            ("residual_tol", self.residual_tol),
            ("delta", self.delta),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    bail!("{name} must be positive, got {v}");
                }
            }
        }
        for (name, v) in [
            ("max_iterations", self.max_iterations),
            ("lipschitz_samples", self.lipschitz_samples),
            ("pairwise_samples", self.pairwise_samples),
        ] {
            if v == Some(0) {
                bail!("{name} must be positive");
            }
        }
        if let Some(p) = &self.point {
            if p.is_empty() || p.iter().any(|x| !x.is_finite()) {
                bail!("point must be a non-empty list of finite numbers");
            }
        }
        if let Some(eps) = &self.eps {
            if eps.len() < 3 {
                bail!("eps needs at least 3 values for the order fit, got {}", eps.len());
            }
            if eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                bail!("eps values must be positive and finite");
            }
            if eps.windows(2).any(|w| w[1] >= w[0]) {
                bail!("eps values must be strictly decreasing");
            }
        }
        for (k, v) in &self.params {
            if !v.is_finite() {
                bail!("parameter {k} must be finite, got {v}");
            }
        }
        if let Some(s) = &self.integrator {
            match *s {
                IntegratorSettings::Rk4 {
                    h: Some(_),
                    steps_per_period: Some(_),
                    ..
                } => bail!("integrator: give either h or steps_per_period, not both"),
                IntegratorSettings::Rk4 {
                    steps_per_period: Some(0),
                    ..
                } => bail!("integrator: steps_per_period must be positive"),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn build_field(&self) -> Result<Box<dyn PeriodicField>> {
        let system = self
            .system
            .as_ref()
            .ok_or_else(|| anyhow!("no system given (set \"system\" in the config or pass --system)"))?;
        match system {
            SystemSpec::Builtin(Builtin::Linear) => {
                if let Some(k) = self.params.keys().next() {
                    bail!("the linear system takes no parameters (got {k})");
                }
                Ok(Box::new(LinearTestField))
            }
            SystemSpec::Builtin(b) => {
                let model = match b {
                    Builtin::NonsmoothVdp => VdpModel::Nonsmooth,
                    _ => VdpModel::Classical,
                };
                Ok(Box::new(VdpField {
                    model,
                    params: self.forcing()?,
                }))
            }
            SystemSpec::Dsl(spec) => {
                let mut field = field_from_spec(spec)?;
                for (k, v) in &self.params {
                    field.set_param(k, *v)?;
                }
                Ok(Box::new(field))
            }
        }
    }

    fn forcing(&self) -> Result<ForcingParams> {
        let mut p = ForcingParams::default();
        for (k, v) in &self.params {
            match k.as_str() {
                "a" => p.a = *v,
                "lambda" => p.lambda = *v,
                other => bail!("unknown oscillator parameter {other:?} (expected a or lambda)"),
            }
        }
        Ok(p)
    }

    pub fn integrator_for(&self, f: &dyn PeriodicField) -> Result<IntegratorConfig> {
        let cfg = match self.integrator {
            None => IntegratorConfig::for_field(f),
            Some(IntegratorSettings::Rk4 {
                h,
                steps_per_period,
                max_steps,
            }) => {
                let mut c = match h {
                    Some(h) => IntegratorConfig::rk4(h),
                    None => IntegratorConfig::rk4_per_period(
                        f.period(),
                        steps_per_period.unwrap_or(DEFAULT_STEPS_PER_PERIOD),
                    ),
                };
                if let Some(m) = max_steps {
                    c.max_steps = m;
                }
                c
            }
            Some(IntegratorSettings::Rk45 {
                abs_tol,
                rel_tol,
                max_steps,
            }) => {
                let mut c = IntegratorConfig::rk45(abs_tol, rel_tol);
                if let Some(m) = max_steps {
                    c.max_steps = m;
                }
                c
            }
        };
        cfg.validate().map_err(|e| anyhow!("integrator: {e}"))?;
        Ok(cfg)
    }

    pub fn orbit_config(&self, f: &dyn PeriodicField) -> Result<OrbitConfig> {
        Ok(OrbitConfig {
            integrator: Some(self.integrator_for(f)?),
            residual_tol: self.residual_tol.unwrap_or(DEFAULT_RESIDUAL_TOL),
            max_iterations: self.max_iterations.unwrap_or(DEFAULT_MAX_ITERATIONS),
        })
    }
}

/// Parses `name=value`.
pub fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=value, got {s:?}"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("{k}: {e}"))?;
    Ok((k.trim().to_string(), v))
}

/// `--system` accepts a builtin name or a path to a JSON field spec.
pub fn parse_system(s: &str) -> Result<SystemSpec, String> {
    if let Ok(b) = s.parse::<Builtin>() {
        return Ok(SystemSpec::Builtin(b));
    }
    let text =
        std::fs::read_to_string(s).map_err(|e| format!("{s:?} is neither a builtin nor a readable file: {e}"))?;
    serde_json::from_str::<FieldSpec>(&text)
        .map(SystemSpec::Dsl)
        .map_err(|e| format!("{s}: {e}"))
}
