//! JSON run configuration shared by the CLI subcommands and experiments.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{DeformationKernel, GrassmannKernel, SpatialKernel, VarifoldKernel};
use crate::optimize::LbfgsConfig;
use crate::registration::RegistrationConfig;
use crate::shooting::DEFAULT_STEPS;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub memory: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        let d = LbfgsConfig::default();
        OptimizerSettings { memory: d.memory, max_iters: d.max_iters, grad_tol: d.grad_tol }
    }
}

impl OptimizerSettings {
    pub fn lbfgs(&self) -> LbfgsConfig {
        LbfgsConfig { memory: self.memory, max_iters: self.max_iters, grad_tol: self.grad_tol, ..LbfgsConfig::default() }
    }
}

/// Every key is optional; missing keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sigma_rho: f64,
    pub gamma: GrassmannKernel,
    pub sigma_v: f64,
    pub lambda: f64,
    pub steps: usize,
    pub optimizer: OptimizerSettings,
    pub reduce_momentum: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sigma_rho: 1.0,
            gamma: GrassmannKernel::OrientedGaussian { sigma_g: 1.0 },
            sigma_v: 1.0,
            lambda: 1.0,
            steps: DEFAULT_STEPS,
            optimizer: OptimizerSettings::default(),
            reduce_momentum: true,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        SpatialKernel::gaussian(self.sigma_rho)?;
        DeformationKernel::gaussian(self.sigma_v)?;
        self.gamma.validate()?;
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Validation(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.steps == 0 {
            return Err(Error::Validation("steps must be at least 1".into()));
        }
        self.optimizer.lbfgs().validate()
    }

    pub fn varifold_kernel(&self) -> Result<VarifoldKernel> {
        Ok(VarifoldKernel::new(SpatialKernel::gaussian(self.sigma_rho)?, self.gamma))
    }

    pub fn deformation_kernel(&self) -> Result<DeformationKernel> {
        DeformationKernel::gaussian(self.sigma_v)
    }

    pub fn registration(&self) -> Result<RegistrationConfig> {
        let mut cfg = RegistrationConfig::new(self.varifold_kernel()?, self.deformation_kernel()?);
        cfg.lambda = self.lambda;
        cfg.steps = self.steps;
        cfg.optimizer = self.optimizer.lbfgs();
        cfg.reduce_momentum = self.reduce_momentum;
        cfg.seed = self.seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn read_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    RunConfig::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_config_parses() {
        let text = r#"{"sigma_rho":0.5,"gamma":{"kind":"binet"},"sigma_v":2,"lambda":10,"steps":8,
            "optimizer":{"memory":5,"max_iters":50,"grad_tol":1e-6},"reduce_momentum":false,"seed":3}"#;
        let cfg = RunConfig::from_json(text).unwrap();
        assert_eq!(cfg.gamma, GrassmannKernel::Binet);
        assert_eq!(cfg.optimizer.memory, 5);
        let reg = cfg.registration().unwrap();
        assert_eq!((reg.lambda, reg.steps, reg.reduce_momentum), (10.0, 8, false));
    }

    #[test]
    fn defaults_fill_missing_keys() {
        let cfg = RunConfig::from_json(r#"{"gamma":{"kind":"oriented_gaussian"}}"#).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"lambda":0}"#), Err(Error::Validation(_))));
        assert!(matches!(RunConfig::from_json(r#"{"lambda":-1}"#), Err(Error::Validation(_))));
        assert!(RunConfig::from_json(r#"{"steps":0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"sigma_v":0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"bogus":1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"gamma":{"kind":"cubic"}}"#).is_err());
    }
}
