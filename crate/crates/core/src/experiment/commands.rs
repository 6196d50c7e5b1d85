use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{ExperimentConfig, Scenario};
use crate::attack::{power_normalize, AttackBudget};
use crate::error::{invalid, Error, Result};
use crate::metrics::{adversarial_signal, evaluate_attack, AttackMethod, BerCurve};
use crate::nn::{
    build_receiver, load_checkpoint, load_checkpoint_as, save_checkpoint, train, ReceiverModel, TrainHistory,
};
use crate::rng::derive_seed;
use crate::signal::dataset::group_by_ebn0;
use crate::signal::{generate_dataset, load_dataset, save_dataset, IqSignal, LabeledSample};
use crate::uap::{build_uap, decode_uap, encode_uap, uap_subset_indices, UapArtifact, UapConfig, UapReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(invalid(format!("unknown split `{s}` (expected train or test)"))),
        }
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => Ok(std::fs::create_dir_all(dir)?),
        _ => Ok(()),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

/// Writes the effective configuration as `<output>.config.toml`.
fn record_config(output: &Path, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::write(sibling(output, ".config.toml"), cfg.to_toml()?)?;
    Ok(())
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{what} {} not found", path.display()),
        )))
    }
}

#[derive(Clone, Debug)]
pub struct GenSummary {
    pub path: PathBuf,
    pub total: usize,
    /// `(Eb/N0 dB, records)` in ascending Eb/N0.
    pub per_ebn0: Vec<(f64, usize)>,
}

impl std::fmt::Display for GenSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "wrote {} records to {}", self.total, self.path.display())?;
        for (e, n) in &self.per_ebn0 {
            writeln!(f, "  Eb/N0 {e:>5.1} dB: {n}")?;
        }
        Ok(())
    }
}

pub fn cmd_gen_data(cfg: &ExperimentConfig, split: Split, out: Option<&Path>) -> Result<GenSummary> {
    cfg.validate()?;
    let (grid, count, default_path, purpose) = match split {
        Split::Train => (
            &cfg.data.train_ebn0_db,
            cfg.data.train_per_ebn0,
            &cfg.data.train_path,
            "train-data",
        ),
        Split::Test => (
            &cfg.data.test_ebn0_db,
            cfg.data.test_per_ebn0,
            &cfg.data.test_path,
            "test-data",
        ),
    };
    let path = out.unwrap_or(default_path).to_path_buf();
    let samples = generate_dataset::<f32>(grid, count, derive_seed(cfg.seed, purpose))?;
    ensure_parent(&path)?;
    save_dataset(&path, &samples)?;
    record_config(&path, cfg)?;
    let per_ebn0 = group_by_ebn0(&samples)
        .into_values()
        .map(|g| (g[0].ebn0_db, g.len()))
        .collect();
    Ok(GenSummary {
        path,
        total: samples.len(),
        per_ebn0,
    })
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub history: TrainHistory,
}

/// Trains the configured receiver, or the surrogate architecture when
/// `surrogate_out` is given, and writes the checkpoint plus a per-epoch loss CSV.
pub fn cmd_train(cfg: &ExperimentConfig, out: Option<&Path>, surrogate_out: Option<&Path>) -> Result<TrainSummary> {
    cfg.validate()?;
    let (arch, checkpoint, purpose) = match surrogate_out {
        Some(p) => (cfg.surrogate_architecture()?, p.to_path_buf(), "surrogate"),
        None => (
            cfg.architecture()?,
            out.unwrap_or(&cfg.model.checkpoint).to_path_buf(),
            "receiver",
        ),
    };
    require_file(&cfg.data.train_path, "training set")?;
    let dataset = load_dataset::<f32>(&cfg.data.train_path)?;
    let model = build_receiver::<f32>(arch, derive_seed(cfg.seed, &format!("{purpose}-init")))?;
    let tcfg = cfg
        .train
        .to_train_config(derive_seed(cfg.seed, &format!("{purpose}-train")));
    let (model, history) = train(model, &dataset, &tcfg)?;

    ensure_parent(&checkpoint)?;
    save_checkpoint(&model, &checkpoint)?;
    let loss_csv = match (&cfg.train.loss_csv, surrogate_out) {
        (Some(p), None) => p.clone(),
        _ => sibling(&checkpoint, ".loss.csv"),
    };
    ensure_parent(&loss_csv)?;
    let mut text = String::from("epoch,learning_rate,mean_loss\n");
    for (e, (lr, loss)) in history.learning_rate.iter().zip(&history.epoch_loss).enumerate() {
        writeln!(text, "{},{lr},{loss}", e + 1).expect("writing to a String");
    }
    std::fs::write(&loss_csv, text)?;
    record_config(&checkpoint, cfg)?;
    Ok(TrainSummary {
        checkpoint,
        loss_csv,
        history,
    })
}

/// Budgets swept for one method; parameters a method ignores are not expanded.
fn budget_grid(cfg: &ExperimentConfig, method: AttackMethod, uap_beta: Option<f64>) -> Result<Vec<AttackBudget>> {
    let a = &cfg.attack;
    let mut grid = Vec::new();
    match method {
        AttackMethod::None => grid.push(AttackBudget::from_db(a.psr_db[0], 0.0, 1)?),
        AttackMethod::Awgn => {
            for &psr in &a.psr_db {
                grid.push(AttackBudget::from_db(psr, 0.0, 1)?);
            }
        }
        AttackMethod::Uap => {
            let papr_db = 10.0 * uap_beta.expect("perturbation loaded for uap").log10();
            for &psr in &a.psr_db {
                grid.push(AttackBudget::from_db(psr, papr_db, 1)?);
            }
        }
        AttackMethod::Fgsm => {
            for &psr in &a.psr_db {
                for &papr in &a.papr_db {
                    grid.push(AttackBudget::from_db(psr, papr, 1)?);
                }
            }
        }
        AttackMethod::Mifgsm | AttackMethod::Pgd => {
            for &psr in &a.psr_db {
                for &papr in &a.papr_db {
                    for &t in &a.iterations {
                        grid.push(AttackBudget::from_db(psr, papr, t)?);
                    }
                }
            }
        }
    }
    Ok(grid)
}

pub fn load_uap(path: &Path) -> Result<UapArtifact<f64>> {
    require_file(path, "universal perturbation")?;
    let mut art = decode_uap::<f64>(&std::fs::read(path)?)?;
    // stored in single precision; restore unit power at working precision
    art.delta = power_normalize(&art.delta)?;
    Ok(art)
}

fn dump_name(method: AttackMethod, b: &AttackBudget) -> String {
    format!(
        "{}_psr{}_papr{}_t{}.aird",
        method.id(),
        b.psr_db.unwrap_or(0.0),
        b.papr_db(),
        b.iterations
    )
}

/// Runs the configured method and budget grid over the test set and merges the rows
/// into the BER CSV (`out` overrides its path).
pub fn cmd_attack(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<BerCurve> {
    cfg.validate()?;
    let methods = cfg.methods()?;
    require_file(&cfg.model.checkpoint, "checkpoint")?;
    require_file(&cfg.data.test_path, "test set")?;
    let target = load_checkpoint_as::<f64>(&cfg.model.checkpoint, cfg.architecture()?)?;
    let surrogate: Option<ReceiverModel<f64>> = match cfg.attack.scenario {
        Scenario::B => {
            let path = cfg
                .model
                .surrogate_checkpoint
                .as_ref()
                .ok_or_else(|| invalid("scenario B needs a surrogate checkpoint"))?;
            require_file(path, "surrogate checkpoint")?;
            let s = load_checkpoint::<f64>(path)?;
            if s.m_bits() != target.m_bits() || s.input_len() != target.input_len() {
                return Err(invalid("surrogate and target disagree on frame dimensions"));
            }
            Some(s)
        }
        _ => None,
    };
    let uap = if methods.contains(&AttackMethod::Uap) {
        Some(load_uap(&cfg.attack.uap_file)?)
    } else {
        None
    };
    let test = load_dataset::<f64>(&cfg.data.test_path)?;
    let seed = derive_seed(cfg.seed, "attack");

    let mut curve = BerCurve::default();
    for &method in &methods {
        for budget in budget_grid(cfg, method, uap.as_ref().map(|u| u.beta))? {
            let delta = uap.as_ref().map(|u| &u.delta);
            let eval = evaluate_attack(&target, surrogate.as_ref(), &test, method, &budget, seed, delta)?;
            if let Some(dir) = &cfg.attack.dump_dir {
                dump_adversarial(
                    dir,
                    surrogate.as_ref().unwrap_or(&target),
                    &test,
                    method,
                    &budget,
                    seed,
                    delta,
                )?;
            }
            curve.rows.extend(eval.curve.rows);
        }
    }
    let csv = out.unwrap_or(&cfg.attack.csv).to_path_buf();
    ensure_parent(&csv)?;
    curve.append_to(&csv)?;
    record_config(&csv, cfg)?;
    Ok(curve)
}

fn dump_adversarial(
    dir: &Path,
    crafter: &ReceiverModel<f64>,
    test: &[LabeledSample<f64>],
    method: AttackMethod,
    budget: &AttackBudget,
    seed: u64,
    uap: Option<&IqSignal<f64>>,
) -> Result<()> {
    let adv: Vec<LabeledSample<f64>> = test
        .par_iter()
        .enumerate()
        .map(|(idx, s)| {
            let (signal, _) = adversarial_signal(crafter, s, idx, method, budget, seed, uap)?;
            Ok(LabeledSample {
                info_bits: s.info_bits.clone(),
                signal,
                ebn0_db: s.ebn0_db,
            })
        })
        .collect::<Result<_>>()?;
    std::fs::create_dir_all(dir)?;
    save_dataset(&dir.join(dump_name(method, budget)), &adv)
}

#[derive(Clone, Debug)]
pub struct UapSummary {
    pub path: PathBuf,
    pub report_path: PathBuf,
    pub report: UapReport,
}

/// Builds a universal perturbation from a seeded subset of the training set and
/// writes it with a TOML build report. `model_override` selects another checkpoint
/// (e.g. a surrogate) to build on.
pub fn cmd_uap(cfg: &ExperimentConfig, out: Option<&Path>, model_override: Option<&Path>) -> Result<UapSummary> {
    cfg.validate()?;
    let u = &cfg.uap;
    let budget = AttackBudget::from_db(u.psr_db, u.papr_db, 1)?;
    let ucfg = UapConfig {
        subset_fraction: u.subset_fraction,
        desired_ber: u.desired_ber,
        budget,
        inner_step: u.inner_step,
        max_epochs: u.max_epochs,
    };
    ucfg.validate()?;
    let model_path = model_override.unwrap_or(&cfg.model.checkpoint);
    require_file(model_path, "checkpoint")?;
    require_file(&cfg.data.train_path, "training set")?;
    let model = match model_override {
        Some(p) => load_checkpoint::<f64>(p)?,
        None => load_checkpoint_as::<f64>(&cfg.model.checkpoint, cfg.architecture()?)?,
    };
    let train_set = load_dataset::<f32>(&cfg.data.train_path)?;
    let idx = uap_subset_indices(train_set.len(), u.subset_fraction, derive_seed(cfg.seed, "uap"))?;
    let subset: Vec<LabeledSample<f64>> = idx
        .iter()
        .map(|&i| {
            let s = &train_set[i];
            LabeledSample {
                info_bits: s.info_bits.clone(),
                signal: s.signal.cast(),
                ebn0_db: s.ebn0_db,
            }
        })
        .collect();
    drop(train_set);
    let refs: Vec<&LabeledSample<f64>> = subset.iter().collect();
    let (delta, report) = build_uap(&model, &refs, &ucfg)?;

    let path = out.unwrap_or(&u.out).to_path_buf();
    let artifact = UapArtifact {
        delta,
        subset_fraction: u.subset_fraction,
        desired_ber: u.desired_ber,
        beta: budget.beta,
        epsilon: budget.epsilon,
        report: report.clone(),
    };
    ensure_parent(&path)?;
    std::fs::write(&path, encode_uap(&artifact)?)?;
    let report_path = sibling(&path, ".report.toml");
    std::fs::write(
        &report_path,
        toml::to_string(&report).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    record_config(&path, cfg)?;
    Ok(UapSummary {
        path,
        report_path,
        report,
    })
}
