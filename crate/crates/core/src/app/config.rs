//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curvature::{CurvatureFamily, CurvatureSpec, SamplingDensity, Tabulated};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{ChartedDomain, LevelSetFn};
use crate::nonlinear::{parse_seed_expression, SolverConfig};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    /// Seed for the uniqueness probe.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub verification: VerificationConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub dimension: usize,
    pub domain: DomainConfig,
    #[serde(default)]
    pub pole: PoleConfig,
    pub curvature: CurvatureConfig,
    pub grid_spacing: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    /// Geodesic cap; give exactly one of `theta0` (radians) or `theta0_deg`.
    /// `center` is a point of Sⁿ, default −e_{n+1}.
    Cap {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta0: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta0_deg: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
    },
    /// {φ < 0} in chart coordinates x1 … xn, inside the box center ± extent.
    LevelSet {
        phi: String,
        extent: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoleKeyword {
    #[default]
    #[serde(rename = "auto_antipodal")]
    AutoAntipodal,
}

/// Projection pole: "auto_antipodal" or an explicit point of Sⁿ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoleConfig {
    Keyword(PoleKeyword),
    Explicit(Vec<f64>),
}

impl Default for PoleConfig {
    fn default() -> Self {
        PoleConfig::Keyword(PoleKeyword::AutoAntipodal)
    }
}

/// Curvature family with its parameters. Families and their fields:
/// `constant` (c), `radial_power` (c, gamma), `separable` (f over rho,
/// g over q1 … q_{n+1}), `tabulated` (value and gradient over X1 … X_{n+1}).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvatureConfig {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient: Option<Vec<String>>,
    pub r1: f64,
    pub r2: f64,
    #[serde(default)]
    pub epsilon: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Report destination; stdout when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mesh_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile_path: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub n_starts: usize,
    /// Extra initial fields over x1 … xn, q1 … q_{n+1} and theta.
    pub seed_fields: Vec<String>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { n_starts: 5, seed_fields: Vec::new() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationConfig {
    /// Curvature mismatch threshold constant C in C·h².
    pub curvature_constant: f64,
    /// Compare against the radial ODE reference when H is radial on a cap.
    pub ode_reference: bool,
    pub collocation_degree: usize,
    pub profile_samples: usize,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        VerificationConfig { curvature_constant: 10.0, ode_reference: true, collocation_degree: 48, profile_samples: 201 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Range checks beyond the schema.
    pub fn check(&self) -> Result<()> {
        let p = &self.problem;
        if p.dimension < 2 {
            return Err(Error::Config(format!("dimension must be ≥ 2, got {}", p.dimension)));
        }
        if !(p.grid_spacing > 0.0 && p.grid_spacing.is_finite()) {
            return Err(Error::Config(format!("grid_spacing must be positive, got {}", p.grid_spacing)));
        }
        self.solver.validate()?;
        if !(self.verification.curvature_constant > 0.0) || self.verification.collocation_degree < 4 {
            return Err(Error::Config("verification needs curvature_constant > 0 and collocation_degree ≥ 4".into()));
        }
        if let DomainConfig::Cap { theta0, theta0_deg, .. } = &p.domain {
            if theta0.is_some() == theta0_deg.is_some() {
                return Err(Error::Config("cap needs exactly one of theta0 or theta0_deg".into()));
            }
        }
        Ok(())
    }

    /// Fills in defaulted fields so reports show the configuration actually used.
    pub fn resolved(&self) -> RunConfig {
        let mut c = self.clone();
        let n = c.problem.dimension;
        match &mut c.problem.domain {
            DomainConfig::Cap { center, .. } if center.is_none() => *center = Some(south_pole(n)),
            DomainConfig::LevelSet { center, .. } if center.is_none() => *center = Some(vec![0.0; n]),
            _ => {}
        }
        c
    }

    pub fn cap_radius(&self) -> Option<f64> {
        match &self.problem.domain {
            DomainConfig::Cap { theta0: Some(t), .. } => Some(*t),
            DomainConfig::Cap { theta0_deg: Some(d), .. } => Some(d.to_radians()),
            _ => None,
        }
    }

    pub fn domain(&self) -> Result<ChartedDomain> {
        let n = self.problem.dimension;
        let h = self.problem.grid_spacing;
        let explicit = match &self.problem.pole {
            PoleConfig::Explicit(p) => Some(p.clone()),
            PoleConfig::Keyword(_) => None,
        };
        match &self.problem.domain {
            DomainConfig::Cap { center, .. } => {
                let c = center.clone().unwrap_or_else(|| south_pole(n));
                if c.len() != n + 1 {
                    return Err(Error::Config(format!("cap center needs {} coordinates", n + 1)));
                }
                let radius = self.cap_radius().expect("checked");
                match explicit {
                    Some(p) => ChartedDomain::cap_with_pole(&c, radius, &p, h),
                    None => ChartedDomain::cap(&c, radius, h),
                }
            }
            DomainConfig::LevelSet { phi, extent, center } => {
                let names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
                let refs: Vec<&str> = names.iter().map(String::as_str).collect();
                let e = Expr::parse(phi, &refs)?;
                let c = center.clone().unwrap_or_else(|| vec![0.0; n]);
                let mut north = vec![0.0; n + 1];
                north[n] = 1.0;
                let pole = explicit.unwrap_or(north);
                ChartedDomain::level_set(&pole, LevelSetFn::new(move |x| e.eval(x)), &c, *extent, h)
            }
        }
    }

    pub fn curvature(&self) -> Result<CurvatureSpec> {
        let c = &self.problem.curvature;
        let n = self.problem.dimension;
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Error::Config(format!("family {} needs {name}", c.family)));
        let family = match c.family.as_str() {
            "constant" => CurvatureFamily::Constant { c: need(c.c, "c")? },
            "radial_power" => CurvatureFamily::RadialPower { c: need(c.c, "c")?, gamma: need(c.gamma, "gamma")? },
            "separable" => {
                let f = c.f.as_deref().ok_or_else(|| Error::Config("separable needs f".into()))?;
                CurvatureFamily::separable(f, c.g.as_deref().unwrap_or("1"), n)?
            }
            "tabulated" => {
                let names: Vec<String> = (1..=n + 1).map(|i| format!("X{i}")).collect();
                let refs: Vec<&str> = names.iter().map(String::as_str).collect();
                let value = Expr::parse(c.value.as_deref().ok_or_else(|| Error::Config("tabulated needs value".into()))?, &refs)?;
                let grads = c.gradient.as_ref().ok_or_else(|| Error::Config("tabulated needs gradient".into()))?;
                if grads.len() != n + 1 {
                    return Err(Error::Config(format!("tabulated gradient needs {} components", n + 1)));
                }
                let grads: Vec<Expr> = grads.iter().map(|g| Expr::parse(g, &refs)).collect::<Result<_>>()?;
                let label = format!("H = {}", value.source());
                CurvatureFamily::Tabulated(Tabulated::new(label, move |x| value.eval(x), move |x| grads.iter().map(|g| g.eval(x)).collect()))
            }
            other => return Err(Error::Config(format!("unknown curvature family {other:?}"))),
        };
        CurvatureSpec::with_epsilon(family, c.r1, c.r2, c.epsilon)
    }

    pub fn seed_expressions(&self) -> Result<Vec<Expr>> {
        self.probe.seed_fields.iter().map(|s| parse_seed_expression(s, self.problem.dimension)).collect()
    }

    pub fn hypothesis_density(&self) -> SamplingDensity {
        self.solver.hypothesis_density
    }

    /// Overrides one sweepable parameter.
    pub fn set_parameter(&mut self, name: &str, value: f64) -> Result<()> {
        let name = name.strip_prefix("curvature.").unwrap_or(name);
        match name {
            "grid_spacing" | "h" => self.problem.grid_spacing = value,
            "epsilon" => self.problem.curvature.epsilon = value,
            "r1" => self.problem.curvature.r1 = value,
            "r2" => self.problem.curvature.r2 = value,
            "c" => self.problem.curvature.c = Some(value),
            "gamma" => self.problem.curvature.gamma = Some(value),
            "theta0" | "theta0_deg" => match &mut self.problem.domain {
                DomainConfig::Cap { theta0, theta0_deg, .. } => {
                    if name == "theta0" {
                        (*theta0, *theta0_deg) = (Some(value), None);
                    } else {
                        (*theta0, *theta0_deg) = (None, Some(value));
                    }
                }
                _ => return Err(Error::Config(format!("{name} needs a cap domain"))),
            },
            "extent" => match &mut self.problem.domain {
                DomainConfig::LevelSet { extent, .. } => *extent = value,
                _ => return Err(Error::Config("extent needs a level-set domain".into())),
            },
            other => return Err(Error::Config(format!("unknown sweep parameter {other:?}"))),
        }
        self.check()
    }
}

fn south_pole(n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n + 1];
    c[n] = -1.0;
    c
}
