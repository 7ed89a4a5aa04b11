//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::{PatternKind, DEFAULT_TAU};
use crate::mesh::TankSpec;
use crate::regularization::{EpsilonMode, DEFAULT_GAMMA_LAGGED, DEFAULT_GAMMA_ONE_STEP, DEFAULT_SMOOTHING};
use crate::sampling::{RandomDrawConfig, DEFAULT_NOISE_FRACTION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Generated phantom used for inversion and the studies.
    #[serde(default = "default_tank")]
    pub tank: TankSpec,
    /// Refinement level of the mesh the synthetic data are simulated on.
    /// Defaults to one level finer than `tank`.
    #[serde(default)]
    pub data_refinement_level: Option<u32>,
    /// Mesh file replacing the generated inversion mesh.
    #[serde(default)]
    pub mesh_file: Option<PathBuf>,
    /// Mesh file replacing the generated data mesh.
    #[serde(default)]
    pub data_mesh_file: Option<PathBuf>,
    #[serde(default)]
    pub background: Background,
    #[serde(default = "default_patterns")]
    pub patterns: PatternKind,
    #[serde(default)]
    pub inclusion: Option<Inclusion>,
    #[serde(default)]
    pub contact_perturbation: Option<ContactPerturbation>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub random: RandomStudyConfig,
    #[serde(default)]
    pub reconstruction: ReconstructionConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
}

fn default_tank() -> TankSpec {
    TankSpec::single_ring(0.115, 0.043, 16, 0.005, 1)
}

fn default_patterns() -> PatternKind {
    PatternKind::Adjacent
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tank: default_tank(),
            data_refinement_level: None,
            mesh_file: None,
            data_mesh_file: None,
            background: Background::default(),
            patterns: default_patterns(),
            inclusion: None,
            contact_perturbation: None,
            noise: NoiseConfig::default(),
            random: RandomStudyConfig::default(),
            reconstruction: ReconstructionConfig::default(),
            thresholds: Thresholds::default(),
        }
    }
}

/// Reference parameters `(σ₀, ζ₀)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Background {
    /// Constant background conductivity (S/m).
    pub sigma: f64,
    /// Peak contact conductivity shared by all electrodes (S/m²).
    pub contact_peak: f64,
    /// Per-electrode peaks overriding `contact_peak`.
    pub contact_peaks: Option<Vec<f64>>,
    pub tau: f64,
}

impl Default for Background {
    fn default() -> Self {
        Self { sigma: 0.0491, contact_peak: 500.0, contact_peaks: None, tau: DEFAULT_TAU }
    }
}

/// Vertical cylinder of constant conductivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inclusion {
    /// Horizontal position of the axis (m).
    pub center: [f64; 2],
    pub radius: f64,
    /// Vertical extent `[bottom, top]`; the full water height if omitted.
    #[serde(default)]
    pub z_range: Option<[f64; 2]>,
    pub conductivity: f64,
}

impl Inclusion {
    pub fn contains(&self, x: &crate::mesh::Vec3) -> bool {
        let d = self.axis_distance(x);
        let inside_z = self.z_range.is_none_or(|[lo, hi]| x.z >= lo && x.z <= hi);
        d <= self.radius && inside_z
    }

    /// Horizontal distance from the inclusion axis.
    pub fn axis_distance(&self, x: &crate::mesh::Vec3) -> f64 {
        ((x.x - self.center[0]).powi(2) + (x.y - self.center[1]).powi(2)).sqrt()
    }
}

/// Multiplicative worsening of the contact peaks of some electrodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactPerturbation {
    /// Zero-based electrode indices.
    pub electrodes: Vec<usize>,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Noise standard deviation relative to the range of the background
    /// measurement.
    pub fraction: f64,
    /// Add a noise realization to the simulated measurements.
    pub add: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { fraction: DEFAULT_NOISE_FRACTION, add: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    None,
    Zeta,
    ZetaPhi,
    ZetaThetaPhi,
}

impl ProjectionKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Zeta => "zeta",
            Self::ZetaPhi => "zeta_phi",
            Self::ZetaThetaPhi => "zeta_theta_phi",
        }
    }
}

impl std::str::FromStr for ProjectionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "zeta" => Ok(Self::Zeta),
            "zeta_phi" => Ok(Self::ZetaPhi),
            "zeta_theta_phi" => Ok(Self::ZetaThetaPhi),
            _ => Err(Error::Config(format!("unknown projection kind `{s}`"))),
        }
    }
}

/// Where the perturbed parameters of the signal study come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalSource {
    /// Inclusion and contact perturbation of the config, simulated on the
    /// data mesh.
    Phantom,
    /// Random draws of `(σ, ζ)`, simulated on the study mesh.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomStudyConfig {
    pub draws: RandomDrawConfig,
    /// The random field lives on the sub-cylinder of this radius about the
    /// tank axis.
    pub region_radius: f64,
    pub n_draws: usize,
    /// Projection whose range stability the angle study measures.
    pub angle_projection: ProjectionKind,
    pub signal_source: SignalSource,
    pub signal_draws: usize,
}

impl Default for RandomStudyConfig {
    fn default() -> Self {
        Self {
            draws: RandomDrawConfig::default(),
            region_radius: 0.05,
            n_draws: 100,
            angle_projection: ProjectionKind::Zeta,
            signal_source: SignalSource::Phantom,
            signal_draws: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    OneStep,
    LaggedDiffusivity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructionConfig {
    pub algorithm: Algorithm,
    /// Defaults to 1e-2 for one step and 1e2 for lagged diffusivity.
    pub gamma: Option<f64>,
    pub n_iter: usize,
    pub smoothing: f64,
    pub epsilon: EpsilonMode,
    pub projections: Vec<ProjectionKind>,
    /// Heights of the exported horizontal slices (m).
    pub slice_heights: Vec<f64>,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::LaggedDiffusivity,
            gamma: None,
            n_iter: 10,
            smoothing: DEFAULT_SMOOTHING,
            epsilon: EpsilonMode::Heuristic,
            projections: vec![ProjectionKind::None, ProjectionKind::Zeta, ProjectionKind::ZetaPhi],
            slice_heights: vec![0.01, 0.02, 0.025, 0.035],
        }
    }
}

impl ReconstructionConfig {
    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(match self.algorithm {
            Algorithm::OneStep => DEFAULT_GAMMA_ONE_STEP,
            Algorithm::LaggedDiffusivity => DEFAULT_GAMMA_LAGGED,
        })
    }
}

/// Pass limits of the studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Largest admissible principal angle in any draw (degrees).
    pub max_angle_deg: f64,
    /// Smallest admissible mean relative Jacobian change over the draws.
    pub min_mean_err_f: f64,
    /// Largest admissible `‖P_ζ s(ζ)‖/‖s(ζ)‖`.
    pub max_zeta_residual: f64,
    /// Smallest admissible `‖P_ζ s(σ)‖/‖s(σ)‖`.
    pub min_sigma_retention: f64,
    /// Largest admissible relative gap between `‖P s(σ,ζ)‖` and `‖P s(σ)‖`.
    pub max_combined_gap: f64,
    /// Fraction of nodes with the largest `|w|` used for localization.
    pub localization_fraction: f64,
    /// Localization tolerance in inclusion radii.
    pub localization_radii: f64,
    /// Artifact energy counts nodes farther than this many inclusion radii
    /// from the inclusion axis.
    pub artifact_radii: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            max_angle_deg: 2.0,
            min_mean_err_f: 0.5,
            max_zeta_residual: 0.01,
            min_sigma_retention: 0.3,
            max_combined_gap: 0.02,
            localization_fraction: 0.1,
            localization_radii: 1.0,
            artifact_radii: 2.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // mesh paths are relative to the config file
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.mesh_file, &mut cfg.data_mesh_file].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        crate::mesh::hex_string(&Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn electrode_count(&self) -> usize {
        self.tank.rings.iter().map(|r| r.count).sum()
    }

    pub fn data_level(&self) -> u32 {
        self.data_refinement_level.unwrap_or(self.tank.refinement_level + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.background;
        if !(b.sigma > 0.0 && b.sigma.is_finite()) {
            return Err(Error::Config(format!("background conductivity must be positive, got {}", b.sigma)));
        }
        if !(b.contact_peak > 0.0 && b.contact_peak.is_finite()) {
            return Err(Error::Config(format!("contact peak must be positive, got {}", b.contact_peak)));
        }
        let generated = self.mesh_file.is_none();
        if let Some(peaks) = &b.contact_peaks {
            if generated && peaks.len() != self.electrode_count() {
                return Err(Error::Config(format!(
                    "{} contact peaks given for {} electrodes",
                    peaks.len(),
                    self.electrode_count()
                )));
            }
        }
        if let Some(inc) = &self.inclusion {
            if !(inc.radius > 0.0 && inc.conductivity > 0.0) {
                return Err(Error::Config("inclusion radius and conductivity must be positive".into()));
            }
            if generated {
                let reach = (inc.center[0].powi(2) + inc.center[1].powi(2)).sqrt() + inc.radius;
                if reach >= self.tank.radius {
                    return Err(Error::Config(format!(
                        "inclusion reaches {reach} m from the axis, outside the tank of radius {}",
                        self.tank.radius
                    )));
                }
                if let Some([lo, hi]) = inc.z_range {
                    if !(lo < hi && lo < self.tank.height && hi > 0.0) {
                        return Err(Error::Config(format!("inclusion height range [{lo}, {hi}] misses the tank")));
                    }
                }
            }
        }
        if let Some(cp) = &self.contact_perturbation {
            if !(cp.multiplier > 0.0 && cp.multiplier.is_finite()) {
                return Err(Error::Config(format!("contact multiplier must be positive, got {}", cp.multiplier)));
            }
            if generated {
                if let Some(&bad) = cp.electrodes.iter().find(|&&m| m >= self.electrode_count()) {
                    return Err(Error::Config(format!(
                        "perturbed electrode {bad} does not exist ({} electrodes)",
                        self.electrode_count()
                    )));
                }
            }
        }
        if !(self.noise.fraction > 0.0 && self.noise.fraction.is_finite()) {
            return Err(Error::Config(format!("noise fraction must be positive, got {}", self.noise.fraction)));
        }
        self.random.draws.validate()?;
        if !(self.random.region_radius > 0.0) {
            return Err(Error::Config("random field region radius must be positive".into()));
        }
        if self.random.angle_projection == ProjectionKind::None {
            return Err(Error::Config("the angle study needs a projection".into()));
        }
        let r = &self.reconstruction;
        let g = r.gamma();
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {g}")));
        }
        if !(r.smoothing > 0.0) {
            return Err(Error::Config(format!("smoothing parameter must be positive, got {}", r.smoothing)));
        }
        if let EpsilonMode::Fixed(e) = r.epsilon {
            if !(e > 0.0) {
                return Err(Error::Config(format!("epsilon must be positive, got {e}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
        assert_eq!(cfg.reconstruction.gamma(), 1e2);
    }

    #[test]
    fn partial_config() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            seed = 4
            patterns = "fourier"
            [inclusion]
            center = [0.03, 0.0]
            radius = 0.015
            conductivity = 4.73
            [contact_perturbation]
            electrodes = [0, 2, 4, 6, 8]
            multiplier = 0.05
            [reconstruction]
            algorithm = "one_step"
            epsilon = { mode = "fixed", value = 0.5 }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.reconstruction.gamma(), 1e-2);
        assert_eq!(cfg.reconstruction.epsilon, EpsilonMode::Fixed(0.5));
        assert_eq!(cfg.electrode_count(), 16);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            "[inclusion]\ncenter = [0.11, 0.0]\nradius = 0.015\nconductivity = 1.0",
            "[contact_perturbation]\nelectrodes = [16]\nmultiplier = 0.5",
            "[noise]\nfraction = 0.0",
            "unknown_key = 1",
            "[background]\nsigma = -1.0",
        ];
        for text in bad {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }
}
