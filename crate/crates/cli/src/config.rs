//! Experiment configuration file (TOML).

use std::path::{Path, PathBuf};

use iflat_core::families::{Discretization, FamilyKind, FamilySpec};
use iflat_core::flatbound::PipelineConfig;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub family: FamilySection,
    #[serde(default)]
    pub discretization: DiscretizationSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySection {
    pub kind: FamilyKind,
    pub j: Vec<u32>,
    /// Well radius; `j⁻²` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// Well depth.
    #[serde(rename = "R", default = "one")]
    pub depth: f64,
    /// Cinch floor; family default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h0: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationSection {
    pub resolution: usize,
    pub stencil: usize,
    pub quadrature: usize,
}

impl Default for DiscretizationSection {
    fn default() -> Self {
        let d = Discretization::default();
        Self {
            resolution: d.resolution,
            stencil: d.stencil,
            quadrature: d.quadrature,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub kappa: Vec<f64>,
    pub lambda_prime: Vec<f64>,
    pub landmarks: usize,
    pub diameter_landmarks: usize,
    pub seed: u64,
    pub allow_rescale: bool,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            kappa: vec![2.0, 4.0, 8.0],
            lambda_prime: vec![0.1, 0.2, 0.4, 0.8],
            landmarks: p.landmarks,
            diameter_landmarks: p.diameter_landmarks,
            seed: p.seed,
            allow_rescale: p.allow_rescale,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CachePolicy {
    /// Never read or write the cache.
    Off,
    /// Reuse entries and store misses.
    #[default]
    ReadWrite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub cache: CachePolicy,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("iflat-out"),
            cache_dir: None,
            cache: CachePolicy::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn new(kind: FamilyKind, j: Vec<u32>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            family: FamilySection {
                kind,
                j,
                rho: None,
                depth: 1.0,
                h0: None,
            },
            discretization: Default::default(),
            pipeline: Default::default(),
            output: Default::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let f = &self.family;
        if f.j.is_empty() || f.j.contains(&0) {
            return Err("family.j must be a non-empty list of positive integers".into());
        }
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(format!("{name} must be positive and finite, got {x}"))
            }
        };
        positive("family.R", f.depth)?;
        if let Some(r) = f.rho {
            positive("family.rho", r)?;
        }
        if let Some(h) = f.h0 {
            positive("family.h0", h)?;
        }
        let d = &self.discretization;
        if d.resolution < iflat_core::mesh::MIN_RESOLUTION || d.resolution > 1024 {
            return Err(format!("discretization.resolution {} outside [8, 1024]", d.resolution));
        }
        if !(1..=4).contains(&d.stencil) {
            return Err(format!("discretization.stencil {} outside [1, 4]", d.stencil));
        }
        if !(1..=16).contains(&d.quadrature) {
            return Err(format!("discretization.quadrature {} outside [1, 16]", d.quadrature));
        }
        let p = &self.pipeline;
        if p.kappa.is_empty() || p.lambda_prime.is_empty() {
            return Err("pipeline.kappa and pipeline.lambda_prime must be non-empty".into());
        }
        for &k in &p.kappa {
            if !(k > 1.0 && k.is_finite()) {
                return Err(format!("κ must exceed 1, got {k}"));
            }
        }
        for &l in &p.lambda_prime {
            positive("λ'", l)?;
        }
        if p.landmarks < 2 || p.diameter_landmarks < 2 {
            return Err("landmark counts must be at least 2".into());
        }
        Ok(())
    }

    pub fn spec(&self, j: u32) -> FamilySpec {
        FamilySpec {
            kind: self.family.kind,
            j,
            rho: self.family.rho,
            depth: self.family.depth,
            h0: self.family.h0,
        }
    }

    pub fn discretization(&self) -> Discretization {
        Discretization {
            resolution: self.discretization.resolution,
            stencil: self.discretization.stencil,
            quadrature: self.discretization.quadrature,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            landmarks: self.pipeline.landmarks,
            diameter_landmarks: self.pipeline.diameter_landmarks,
            seed: self.pipeline.seed,
            allow_rescale: self.pipeline.allow_rescale,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let mut c = ExperimentConfig::new(FamilyKind::Ilmanen, vec![1, 2, 4, 8]);
        c.family.rho = Some(0.3);
        c.output.cache_dir = Some("cache".into());
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn defaults_fill_sections() {
        let c = ExperimentConfig::from_toml("schema_version = 1\n[family]\nkind = \"finsler-torus\"\nj = [2]\n").unwrap();
        assert_eq!(c.discretization.resolution, 48);
        assert_eq!(c.family.depth, 1.0);
    }

    #[test]
    fn rejects_unknown_and_bad_values() {
        let base = "schema_version = 1\n[family]\nkind = \"ilmanen\"\nj = [1]\n";
        assert!(ExperimentConfig::from_toml(&format!("{base}bogus = 3\n")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("{base}[pipeline]\nkappa = [0.5]\nlambda_prime = [0.1]\nlandmarks = 10\ndiameter_landmarks = 4\nseed = 1\nallow_rescale = false\n")).is_err());
        assert!(ExperimentConfig::from_toml(&base.replace("= 1\n[", "= 7\n[")).is_err());
        assert!(ExperimentConfig::from_toml(&base.replace("[1]", "[]")).is_err());
    }
}
