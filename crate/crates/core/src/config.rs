//! Run configuration: one TOML document with dotted-key overrides.

use crate::error::{Error, Result};
use crate::model::{Architecture, ScalingConfig, ScalingMode};
use crate::physics::{MaterialLibrary, MaterialProps, MaterialSpace, ProcessConfig};
use crate::sampling::{BatchSpec, GridSpec, Profile};
use crate::train::{OptimizerConfig, ResidualUnits};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub architecture: Architecture,
    pub scaling: ScalingMode,
    pub kappa: f64,
    pub epsilon: f64,
    pub clip_ceiling: f64,
    pub residual_units: ResidualUnits,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let s = ScalingConfig::default();
        Self {
            architecture: Architecture::Decoupled,
            scaling: s.mode,
            kappa: s.kappa,
            epsilon: s.epsilon,
            clip_ceiling: s.clip_ceiling,
            residual_units: ResidualUnits::Millimetre,
        }
    }
}

impl NetworkConfig {
    pub fn scaling_config(&self) -> ScalingConfig {
        ScalingConfig {
            mode: self.scaling,
            kappa: self.kappa,
            epsilon: self.epsilon,
            clip_ceiling: self.clip_ceiling,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub profile: Profile,
    pub seed: u64,
    pub adam_batch: BatchSpec,
    pub lbfgs_batch: BatchSpec,
    /// re-jitter the pools every Adam epoch (L-BFGS always re-jitters on
    /// resampling)
    #[serde(default)]
    pub adam_jitter: bool,
    /// jitter half-width as a fraction of each grid spacing and time step
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// train on one named alloy instead of drawing over the material space
    pub train_material: String,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Paper,
            seed: 0,
            adam_batch: BatchSpec::ADAM,
            lbfgs_batch: BatchSpec::LBFGS,
            adam_jitter: false,
            jitter: default_jitter(),
            train_material: String::new(),
        }
    }
}

fn default_jitter() -> f64 {
    0.25
}

impl SamplingConfig {
    pub fn grid(&self) -> GridSpec {
        GridSpec {
            jitter: self.jitter,
            ..self.profile.grid()
        }
    }

    pub fn fixed_material(&self) -> Result<Option<MaterialProps>> {
        if self.train_material.is_empty() {
            Ok(None)
        } else {
            MaterialLibrary::default().get(&self.train_material).map(Some)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub materials: Vec<String>,
    /// probe locations in metres
    pub probes: Vec<[f64; 3]>,
    /// times at which full fields are exported
    pub snapshot_times: Vec<f64>,
    /// oracle grid spacing in metres
    pub grid_spacing: f64,
    /// oracle output interval in seconds
    pub output_interval: f64,
    /// evaluate relative L2 every this many epochs during training (0 = never)
    pub eval_every: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            materials: ["Ti-6Al-4V", "Inconel-718", "SS-316L", "AlSi10Mg", "Copper"]
                .map(String::from)
                .to_vec(),
            probes: vec![[0.012, 0.005, 0.006], [0.009, 0.005, 0.006]],
            snapshot_times: vec![0.5, 1.5, 2.5],
            grid_spacing: 0.5e-3,
            output_interval: 0.1,
            eval_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub process: ProcessConfig,
    pub materials: MaterialSpace,
    pub network: NetworkConfig,
    pub optimizer: OptimizerConfig,
    pub sampling: SamplingConfig,
    pub evaluation: EvaluationConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            process: ProcessConfig::default(),
            materials: MaterialSpace::default(),
            network: NetworkConfig::default(),
            optimizer: OptimizerConfig::default(),
            sampling: SamplingConfig::default(),
            evaluation: EvaluationConfig::default(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

/// Overrides that turn the default configuration into the reduced desk
/// profile.
pub const DESK_OVERRIDES: &[&str] = &[
    "sampling.profile=\"desk\"",
    "optimizer.total_epochs=1500",
    "optimizer.adam_epochs=1000",
    "optimizer.curriculum_epochs=200",
    "sampling.adam_batch.bc=1000",
    "sampling.adam_batch.ic=132",
    "sampling.adam_batch.pde=1500",
    "sampling.lbfgs_batch.bc=2800",
    "sampling.lbfgs_batch.ic=132",
    "sampling.lbfgs_batch.pde=5000",
    "sampling.jitter=0.5",
    "sampling.adam_jitter=true",
    "optimizer.lr_adam=1e-3",
    "optimizer.max_iter=5",
    "optimizer.max_eval=7",
    "optimizer.stale_decrease=1e-3",
];

impl RunConfig {
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.apply_overrides(DESK_OVERRIDES).expect("desk overrides are valid");
        c
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Applies `section.key=value` overrides; values use TOML syntax, with
    /// bare words taken as strings.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        let mut pairs = Vec::with_capacity(overrides.len());
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            pairs.push((key.trim().to_string(), parse_value(raw.trim())));
        }
        self.set_values(pairs)
    }

    /// Overlays a possibly partial TOML document on this configuration.
    pub fn overlay(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut pairs = Vec::new();
        flatten("", toml::Value::Table(table), &mut pairs);
        self.set_values(pairs)
    }

    pub fn overlay_file(&mut self, path: &Path) -> Result<()> {
        self.overlay(&std::fs::read_to_string(path)?)
    }

    fn set_values(&mut self, pairs: Vec<(String, toml::Value)>) -> Result<()> {
        if pairs.is_empty() {
            return Ok(());
        }
        let mut doc: toml::Value = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        for (key, value) in pairs {
            let path: Vec<&str> = key.split('.').collect();
            let mut node = &mut doc;
            for (i, part) in path.iter().enumerate() {
                let table = node
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("`{key}` does not name a field")))?;
                if i + 1 == path.len() {
                    if !table.contains_key(*part) {
                        return Err(Error::Config(format!("unknown key `{key}`")));
                    }
                    table.insert(part.to_string(), value);
                    break;
                }
                node = table
                    .get_mut(*part)
                    .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
            }
        }
        *self = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.process.validate()?;
        self.materials.validate()?;
        self.optimizer.validate()?;
        self.network.scaling_config().validate(&self.process)?;
        self.sampling.fixed_material()?;
        if self.network.architecture == Architecture::NPinn && self.sampling.train_material.is_empty() {
            return Err(Error::Config("the coordinate-only network needs sampling.train_material".into()));
        }
        let lib = MaterialLibrary::default();
        for m in &self.evaluation.materials {
            lib.get(m)?;
        }
        if !(self.evaluation.grid_spacing > 0.0 && self.evaluation.output_interval > 0.0) {
            return Err(Error::Config("evaluation grid spacing and interval must be positive".into()));
        }
        Ok(())
    }
}

/// Named ablation arms; each maps to a set of overrides on a base run.
pub const ABLATION_ARMS: &[&str] = &[
    "physics-guided",
    "softplus-only",
    "learned-tmax",
    "fixed-tmax",
    "raw",
    "monolithic",
    "decoupled-film",
    "adam-only",
    "n-pinn",
];

/// Named groups of arms run by one ablation sweep. Arms of the form
/// `kappa-<value>` set the scaling margin.
pub const ABLATION_SUITES: &[(&str, &[&str])] = &[
    ("scaling", &["physics-guided", "softplus-only", "learned-tmax", "fixed-tmax", "raw"]),
    ("kappa", &["kappa-1.0", "kappa-1.25", "kappa-1.5", "kappa-1.75", "kappa-2.0"]),
    ("optimizer", &["physics-guided", "adam-only"]),
    ("architecture", &["physics-guided", "monolithic", "decoupled-film", "n-pinn"]),
];

pub fn ablation_suite(name: &str) -> Result<&'static [&'static str]> {
    ABLATION_SUITES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, arms)| *arms)
        .ok_or_else(|| {
            let known: Vec<&str> = ABLATION_SUITES.iter().map(|(n, _)| *n).collect();
            Error::Config(format!("unknown ablation suite `{name}`; known: {}", known.join(", ")))
        })
}

/// Applies the named ablation arm to `cfg`.
pub fn apply_arm(cfg: &mut RunConfig, arm: &str) -> Result<()> {
    match arm {
        "physics-guided" => {}
        "softplus-only" => cfg.network.scaling = ScalingMode::SoftplusOnly,
        "learned-tmax" => cfg.network.scaling = ScalingMode::LearnedTmax,
        "fixed-tmax" => cfg.network.scaling = ScalingMode::FixedTmax(3000.0),
        "raw" => cfg.network.scaling = ScalingMode::Raw,
        "monolithic" => cfg.network.architecture = Architecture::PPinn,
        "decoupled-film" => cfg.network.architecture = Architecture::DecoupledFilm,
        "adam-only" => cfg.optimizer.adam_epochs = cfg.optimizer.total_epochs,
        "n-pinn" => {
            cfg.network.architecture = Architecture::NPinn;
            if cfg.sampling.train_material.is_empty() {
                cfg.sampling.train_material = cfg
                    .evaluation
                    .materials
                    .first()
                    .cloned()
                    .ok_or_else(|| Error::Config("n-pinn arm needs an evaluation material".into()))?;
            }
        }
        _ => match arm.strip_prefix("kappa-").map(str::parse::<f64>) {
            Some(Ok(k)) => cfg.network.kappa = k,
            _ => return Err(Error::Config(format!("unknown ablation arm `{arm}`"))),
        },
    }
    Ok(())
}

fn flatten(prefix: &str, value: toml::Value, out: &mut Vec<(String, toml::Value)>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        leaf => out.push((prefix.to_string(), leaf)),
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let c = RunConfig::desk();
        let text = c.to_toml();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut text = RunConfig::default().to_toml();
        text.push_str("\nbogus = 1\n");
        assert!(RunConfig::parse(&text).is_err());
        let mut c = RunConfig::default();
        assert!(c.apply_overrides(&["optimizer.lr_adamm=1"]).is_err());
        assert!(c.apply_overrides(&["optimizer.lr_adam"]).is_err());
    }

    #[test]
    fn overrides() {
        let mut c = RunConfig::default();
        c.apply_overrides(&[
            "optimizer.lr_adam=1e-3",
            "network.scaling=softplus-only",
            "network.architecture=\"p-pinn\"",
            "sampling.seed=7",
        ])
        .unwrap();
        assert_eq!(c.optimizer.lr_adam, 1e-3);
        assert_eq!(c.network.scaling, ScalingMode::SoftplusOnly);
        assert_eq!(c.network.architecture, Architecture::PPinn);
        assert_eq!(c.sampling.seed, 7);
    }

    #[test]
    fn partial_overlay() {
        let mut c = RunConfig::desk();
        c.overlay("[optimizer]\nlr_adam = 5e-4\n[sampling.adam_batch]\npde = 64\n").unwrap();
        assert_eq!(c.optimizer.lr_adam, 5e-4);
        assert_eq!(c.sampling.adam_batch.pde, 64);
        assert_eq!(c.optimizer.total_epochs, 1500);
        assert!(c.overlay("[optimizer]\nlr = 1\n").is_err());
    }

    #[test]
    fn arms() {
        for arm in ABLATION_ARMS {
            let mut c = RunConfig::desk();
            apply_arm(&mut c, arm).unwrap();
            c.validate().unwrap();
        }
        let mut c = RunConfig::desk();
        apply_arm(&mut c, "adam-only").unwrap();
        assert_eq!(c.optimizer.adam_epochs, c.optimizer.total_epochs);
        assert!(apply_arm(&mut c, "nope").is_err());
        assert!(apply_arm(&mut c, "kappa-x").is_err());
        for (_, arms) in ABLATION_SUITES {
            for arm in *arms {
                let mut c = RunConfig::desk();
                apply_arm(&mut c, arm).unwrap();
                c.validate().unwrap();
            }
        }
        let mut c = RunConfig::desk();
        apply_arm(&mut c, "kappa-1.75").unwrap();
        assert_eq!(c.network.kappa, 1.75);
        assert!(ablation_suite("kappa").unwrap().contains(&"kappa-2.0"));
        assert!(ablation_suite("nope").is_err());
    }

    #[test]
    fn npinn_needs_material() {
        let mut c = RunConfig::default();
        c.network.architecture = Architecture::NPinn;
        assert!(c.validate().is_err());
        c.sampling.train_material = "Ti-6Al-4V".into();
        c.validate().unwrap();
    }
}
