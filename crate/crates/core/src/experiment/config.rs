use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::metrics::AttackMethod;
use crate::nn::{Architecture, TrainConfig};

/// Attack scenario: which knowledge the adversary holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Test samples and model parameters known (white-box).
    A,
    /// Test samples known, model replaced by a surrogate.
    B,
    /// Test samples unknown; universal perturbation from training data.
    C,
}

impl Scenario {
    /// Methods permitted in this scenario; `none` and `awgn` are baselines everywhere.
    pub fn allows(self, method: AttackMethod) -> bool {
        use AttackMethod::*;
        matches!(
            (self, method),
            (_, None | Awgn) | (Scenario::A | Scenario::B, Fgsm | Mifgsm | Pgd) | (Scenario::C, Uap)
        )
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Scenario::A),
            "B" => Ok(Scenario::B),
            "C" => Ok(Scenario::C),
            _ => Err(invalid(format!("unknown scenario `{s}` (expected A, B or C)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train_ebn0_db: Vec<f64>,
    pub test_ebn0_db: Vec<f64>,
    pub train_per_ebn0: usize,
    pub test_per_ebn0: usize,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train_ebn0_db: (0..=8).map(f64::from).collect(),
            test_ebn0_db: (0..=16).map(|k| f64::from(k) * 0.5).collect(),
            train_per_ebn0: 20_000,
            test_per_ebn0: 2_000,
            train_path: "data/train.aird".into(),
            test_path: "data/test.aird".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub architecture: String,
    pub checkpoint: PathBuf,
    pub surrogate_architecture: String,
    pub surrogate_checkpoint: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            architecture: Architecture::CompactConv.id().into(),
            checkpoint: "models/receiver.airm".into(),
            surrogate_architecture: Architecture::ResnetLike.id().into(),
            surrogate_checkpoint: None,
        }
    }
}

/// Training hyper-parameters; the seed comes from the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub loss_csv: Option<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            batch_size: d.batch_size,
            epochs: d.epochs,
            initial_lr: d.initial_lr,
            lr_decay: d.lr_decay,
            lr_decay_every: d.lr_decay_every,
            loss_csv: None,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            initial_lr: self.initial_lr,
            lr_decay: self.lr_decay,
            lr_decay_every: self.lr_decay_every,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub scenario: Scenario,
    pub methods: Vec<String>,
    pub psr_db: Vec<f64>,
    pub papr_db: Vec<f64>,
    pub iterations: Vec<usize>,
    pub csv: PathBuf,
    /// Directory receiving one `AIRD` file of adversarial frames per grid point.
    pub dump_dir: Option<PathBuf>,
    /// Universal perturbation used by scenario C.
    pub uap_file: PathBuf,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            scenario: Scenario::A,
            methods: ["awgn", "fgsm", "mifgsm", "pgd"].map(String::from).to_vec(),
            psr_db: vec![-5.0],
            papr_db: vec![2.0],
            iterations: vec![3],
            csv: "results/ber.csv".into(),
            dump_dir: None,
            uap_file: "results/uap.airu".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UapSection {
    pub subset_fraction: f64,
    pub desired_ber: f64,
    pub psr_db: f64,
    pub papr_db: f64,
    pub inner_step: f64,
    pub max_epochs: usize,
    pub out: PathBuf,
}

impl Default for UapSection {
    fn default() -> Self {
        Self {
            subset_fraction: 0.25,
            desired_ber: 0.2,
            psr_db: -5.0,
            papr_db: 2.0,
            inner_step: 0.1,
            max_epochs: 10,
            out: "results/uap.airu".into(),
        }
    }
}

/// One run, as read from TOML. Every field has a default, so an empty file
/// describes the white-box sweep at PSR -5 dB, PAPR 2 dB and three iterations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; every random stream of the run is derived from it.
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub attack: AttackSection,
    pub uap: UapSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn architecture(&self) -> Result<Architecture> {
        self.model.architecture.parse()
    }

    pub fn surrogate_architecture(&self) -> Result<Architecture> {
        self.model.surrogate_architecture.parse()
    }

    pub fn methods(&self) -> Result<Vec<AttackMethod>> {
        self.attack.methods.iter().map(|m| m.parse()).collect()
    }

    /// Checks grids and the scenario/method pairing.
    pub fn validate(&self) -> Result<()> {
        let grid_ok = |g: &[f64]| !g.is_empty() && g.iter().all(|x| x.is_finite());
        if !grid_ok(&self.data.train_ebn0_db) || !grid_ok(&self.data.test_ebn0_db) {
            return Err(invalid("Eb/N0 grids must be non-empty and finite"));
        }
        if self.data.train_per_ebn0 == 0 || self.data.test_per_ebn0 == 0 {
            return Err(invalid("per-Eb/N0 sample counts must be positive"));
        }
        self.architecture()?;
        self.surrogate_architecture()?;
        self.train.to_train_config(self.seed).validate()?;
        if !grid_ok(&self.attack.psr_db) || !grid_ok(&self.attack.papr_db) || self.attack.iterations.is_empty() {
            return Err(invalid("attack budget grids must be non-empty"));
        }
        if self.attack.papr_db.iter().any(|&p| p < 0.0) {
            return Err(invalid("PAPR limits below 0 dB are unreachable"));
        }
        if self.attack.iterations.contains(&0) {
            return Err(invalid("iteration counts must be positive"));
        }
        let methods = self.methods()?;
        if methods.is_empty() {
            return Err(invalid("method list is empty"));
        }
        for m in methods {
            if !self.attack.scenario.allows(m) {
                return Err(invalid(format!(
                    "method `{m}` is not available in scenario {:?}",
                    self.attack.scenario
                )));
            }
        }
        Ok(())
    }
}

/// Command-line overrides; `None` keeps the configured value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub psr_db: Option<Vec<f64>>,
    pub papr_db: Option<Vec<f64>>,
    pub iters: Option<Vec<usize>>,
    pub method: Option<Vec<String>>,
    pub scenario: Option<Scenario>,
    pub surrogate: Option<PathBuf>,
}

impl Overrides {
    /// Applies the overrides that do not depend on the command.
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(v) = &self.psr_db {
            cfg.attack.psr_db = v.clone();
            if let [single] = v.as_slice() {
                cfg.uap.psr_db = *single;
            }
        }
        if let Some(v) = &self.papr_db {
            cfg.attack.papr_db = v.clone();
            if let [single] = v.as_slice() {
                cfg.uap.papr_db = *single;
            }
        }
        if let Some(v) = &self.iters {
            cfg.attack.iterations = v.clone();
        }
        if let Some(v) = &self.method {
            cfg.attack.methods = v.clone();
        }
        if let Some(s) = self.scenario {
            cfg.attack.scenario = s;
        }
        if let Some(p) = &self.surrogate {
            cfg.model.surrogate_checkpoint = Some(p.clone());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.data.train_ebn0_db.len(), 9);
        assert_eq!(cfg.data.test_ebn0_db.len(), 17);
        assert_eq!(cfg.data.test_ebn0_db[16], 8.0);
        assert_eq!(cfg.train.batch_size, 256);
        assert_eq!(cfg.attack.iterations, vec![3]);
        assert_eq!(cfg.uap.subset_fraction, 0.25);
        cfg.validate().unwrap();
    }

    #[test]
    fn toml_roundtrip() {
        let mut cfg = ExperimentConfig::default();
        cfg.attack.scenario = Scenario::B;
        cfg.model.surrogate_checkpoint = Some("s.airm".into());
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn scenario_method_pairing() {
        let mut cfg = ExperimentConfig::from_toml("[attack]\nscenario = \"C\"\nmethods = [\"uap\", \"awgn\"]").unwrap();
        cfg.validate().unwrap();
        cfg.attack.methods = vec!["pgd".into()];
        assert!(matches!(cfg.validate(), Err(Error::InvalidArgument(_))));
        cfg.attack.scenario = Scenario::A;
        cfg.validate().unwrap();
        cfg.attack.methods = vec!["uap".into()];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(ExperimentConfig::from_toml("sede = 3"), Err(Error::Config(_))));
    }
}
