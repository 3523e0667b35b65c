//! Declarative run configuration (TOML).

use std::path::{Path, PathBuf};

use atlas_core::boundary::axis;
use atlas_core::{
    AxisSpacing, Detection, FockCutoff, NoiseReference, ProtocolConfig, ProtocolSpec, Region,
    SweepGrid,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub protocols: Vec<String>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyConfig>,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub refine: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t_min: f64,
    pub t_max: f64,
    pub t_steps: usize,
    pub xi_min: f64,
    pub xi_max: f64,
    pub xi_steps: usize,
    #[serde(default)]
    pub xi_spacing: AxisSpacing,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub alpha_steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            t_min: 0.0,
            t_max: 1.0,
            t_steps: 50,
            xi_min: 0.001,
            xi_max: 0.5,
            xi_steps: 50,
            xi_spacing: AxisSpacing::Linear,
            alpha_min: 0.1,
            alpha_max: 0.5,
            alpha_steps: 40,
        }
    }
}

impl GridConfig {
    pub fn alpha_axis(&self) -> Vec<f64> {
        axis(self.alpha_min, self.alpha_max, self.alpha_steps, AxisSpacing::Linear)
    }

    pub fn build(&self) -> Result<SweepGrid, CliError> {
        let bad = |m: String| CliError::Usage(format!("grid: {m}"));
        if self.xi_spacing == AxisSpacing::Log && self.xi_min <= 0.0 {
            return Err(bad("log xi spacing needs xi_min > 0".into()));
        }
        SweepGrid::new(
            axis(self.t_min, self.t_max, self.t_steps, AxisSpacing::Linear),
            axis(self.xi_min, self.xi_max, self.xi_steps, self.xi_spacing),
            self.alpha_axis(),
        )
        .map_err(|e| bad(e.to_string()))
    }
}

/// `"auto"` or a fixed truncation dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CutoffSetting {
    Fixed(usize),
    Named(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Default for CutoffSetting {
    fn default() -> Self {
        CutoffSetting::Named(AutoTag::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub beta: f64,
    #[serde(default)]
    pub detection: Detection,
    #[serde(default)]
    pub noise_reference: NoiseReference,
    #[serde(default)]
    pub fock_cutoff: CutoffSetting,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            beta: 0.95,
            detection: Detection::Heterodyne,
            noise_reference: NoiseReference::Input,
            fock_cutoff: CutoffSetting::default(),
        }
    }
}

impl EngineConfig {
    pub fn build(&self) -> Result<ProtocolConfig, CliError> {
        let cfg = ProtocolConfig {
            beta: self.beta,
            detection: self.detection,
            fock_cutoff: match self.fock_cutoff {
                CutoffSetting::Fixed(n) => FockCutoff::Fixed(n),
                CutoffSetting::Named(AutoTag::Auto) => FockCutoff::Auto,
            },
            noise_reference: self.noise_reference,
        };
        cfg.validate()
            .map_err(|e| CliError::Usage(format!("engine: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Also write every `(T, xi, alpha)` breakdown as JSON lines.
    #[serde(default)]
    pub breakdown: bool,
}

/// Region used for the fit and level comparison after a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub name: String,
    pub t_range: [f64; 2],
    pub xi_range: [f64; 2],
}

impl StudyConfig {
    pub fn region(&self) -> Result<Region, CliError> {
        Region::new(
            (self.t_range[0], self.t_range[1]),
            (self.xi_range[0], self.xi_range[1]),
        )
        .map_err(|e| CliError::Usage(format!("study: {e}")))
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            protocols: vec!["apsk16".into()],
            grid: GridConfig::default(),
            engine: EngineConfig::default(),
            output: OutputConfig::default(),
            study: None,
            threads: 0,
            refine: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn protocol_specs(&self) -> Result<Vec<ProtocolSpec>, CliError> {
        if self.protocols.is_empty() {
            return Err(CliError::Usage("no protocols configured".into()));
        }
        self.protocols
            .iter()
            .map(|p| {
                p.parse::<ProtocolSpec>()
                    .map_err(|e| CliError::Usage(format!("protocol '{p}': {e}")))
            })
            .collect()
    }

    /// Checks every section without running anything.
    pub fn validate(&self) -> Result<(), CliError> {
        self.protocol_specs()?;
        self.grid.build()?;
        self.engine.build()?;
        if let Some(s) = &self.study {
            s.region()?;
        }
        Ok(())
    }

    /// Hash of everything that shapes the results.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        c.threads = 0;
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    /// Hash of the grid and engine only. Meshes sharing it are comparable
    /// whatever their protocol.
    pub fn comparison_hash(&self) -> String {
        let key = serde_json::json!({
            "grid": self.grid,
            "engine": self.engine,
            "refine": self.refine,
        });
        sha256_hex(key.to_string().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
protocols = ["apsk16", "qam16-gauss0.2"]
threads = 2

[grid]
t_min = 0.0
t_max = 1.0
t_steps = 20
xi_min = 0.001
xi_max = 0.1
xi_steps = 10
xi_spacing = "log"
alpha_min = 0.1
alpha_max = 0.5
alpha_steps = 5

[engine]
beta = 0.9
noise_reference = "output"
fock_cutoff = 40

[study]
name = "demo"
t_range = [0.0, 1.0]
xi_range = [0.0, 0.042]
"#;

    #[test]
    fn round_trip() {
        let cfg = RunConfig::parse(SAMPLE).unwrap();
        let again = RunConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.engine.fock_cutoff, CutoffSetting::Fixed(40));
        cfg.validate().unwrap();

        let d = RunConfig::default();
        assert_eq!(RunConfig::parse(&d.to_toml()).unwrap(), d);
    }

    #[test]
    fn defaults_match_reference_table() {
        let cfg = RunConfig::parse("protocols = [\"psk16\"]").unwrap();
        let grid = cfg.grid.build().unwrap();
        assert_eq!(grid, SweepGrid::reference());
        let engine = cfg.engine.build().unwrap();
        assert_eq!(engine, ProtocolConfig::default());
        assert_eq!(engine.beta, 0.95);
        assert_eq!(engine.detection, Detection::Heterodyne);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::parse("protocols = [\"psk16\"]\nbogus = 1").is_err());
        let cfg = RunConfig::parse("protocols = [\"apsk20\"]").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::parse("protocols = [\"psk16\"]\n[engine]\nbeta = 1.5").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::parse("protocols = [\"psk16\"]\n[engine]\nbeta = 0.9\nfock_cutoff = \"manual\"");
        assert!(cfg.is_err());
    }

    #[test]
    fn hashes_ignore_output_settings() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output.dir = Some("elsewhere".into());
        b.threads = 8;
        assert_eq!(a.config_hash(), b.config_hash());
        b.protocols = vec!["psk16".into()];
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.comparison_hash(), b.comparison_hash());
        b.engine.beta = 0.9;
        assert_ne!(a.comparison_hash(), b.comparison_hash());
    }
}
