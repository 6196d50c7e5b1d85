//! BER / PSR measures and batch attack evaluation over Eb/N0 buckets.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{
    awgn_attack, db_to_linear, fgsm_attack, linear_to_db, mifgsm_attack, pgd_attack, power, AttackBudget,
};
use crate::error::{invalid, Error, Result};
use crate::nn::ReceiverModel;
use crate::rng::{derive_seed, stream_rng};
use crate::scalar::Scalar;
use crate::signal::dataset::ebn0_key;
use crate::signal::{BitStream, IqSignal, LabeledSample};
use crate::uap::apply_uap;

/// Fraction of differing bits over all streams.
pub fn ber(truth: &[BitStream], recovered: &[BitStream]) -> Result<f64> {
    if truth.len() != recovered.len() || truth.is_empty() {
        return Err(invalid(format!(
            "BER needs equal, non-zero stream counts ({} vs {})",
            truth.len(),
            recovered.len()
        )));
    }
    let bits = truth[0].len();
    let mut errors = 0usize;
    for (a, b) in truth.iter().zip(recovered) {
        if a.len() != bits || b.len() != bits {
            return Err(invalid("all streams must have the same length"));
        }
        errors += a.hamming_distance(b)?;
    }
    Ok(errors as f64 / (truth.len() * bits) as f64)
}

/// Binomial standard error of a BER estimate over `samples` frames of `bits` bits.
pub fn ber_stderr(ber: f64, samples: usize, bits: usize) -> f64 {
    (ber * (1.0 - ber) / (samples * bits) as f64).sqrt()
}

/// Perturbation-to-signal power ratio (linear).
pub fn psr<T: Scalar>(perturbation: &IqSignal<T>, clean: &IqSignal<T>) -> Result<f64> {
    let ps = power(clean)?;
    if ps == 0.0 {
        return Err(Error::UndefinedInput("PSR against an all-zero signal component".into()));
    }
    let pd = power(perturbation)?;
    if pd == 0.0 {
        return Err(Error::UndefinedInput("PSR of an all-zero perturbation".into()));
    }
    Ok(pd / ps)
}

pub fn psr_db<T: Scalar>(perturbation: &IqSignal<T>, clean: &IqSignal<T>) -> Result<f64> {
    psr(perturbation, clean).map(linear_to_db)
}

/// Power limit that realizes `psr_db` against the given noise-free component.
pub fn epsilon_from_psr<T: Scalar>(psr_db: f64, clean: &IqSignal<T>) -> Result<f64> {
    let ps = power(clean)?;
    if ps == 0.0 {
        return Err(Error::UndefinedInput("PSR against an all-zero signal component".into()));
    }
    Ok(db_to_linear(psr_db) * ps)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    None,
    Awgn,
    Fgsm,
    Mifgsm,
    Pgd,
    Uap,
}

impl AttackMethod {
    pub fn id(self) -> &'static str {
        match self {
            AttackMethod::None => "none",
            AttackMethod::Awgn => "awgn",
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::Mifgsm => "mifgsm",
            AttackMethod::Pgd => "pgd",
            AttackMethod::Uap => "uap",
        }
    }

    pub fn needs_gradient(self) -> bool {
        matches!(self, AttackMethod::Fgsm | AttackMethod::Mifgsm | AttackMethod::Pgd)
    }

    fn is_iterative(self) -> bool {
        matches!(self, AttackMethod::Mifgsm | AttackMethod::Pgd)
    }
}

impl fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "clean" => Ok(AttackMethod::None),
            "awgn" => Ok(AttackMethod::Awgn),
            "fgsm" => Ok(AttackMethod::Fgsm),
            "mifgsm" | "mi-fgsm" => Ok(AttackMethod::Mifgsm),
            "pgd" => Ok(AttackMethod::Pgd),
            "uap" => Ok(AttackMethod::Uap),
            other => Err(invalid(format!("unknown attack method `{other}`"))),
        }
    }
}

/// One CSV row: `method,ebn0_db,psr_db,papr_db,iterations,num_samples,ber,stderr`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BerRow {
    pub method: String,
    pub ebn0_db: f64,
    pub psr_db: Option<f64>,
    pub papr_db: Option<f64>,
    pub iterations: Option<usize>,
    pub num_samples: usize,
    pub ber: f64,
    pub stderr: f64,
}

impl BerRow {
    fn key(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        format!(
            "{}|{}|{}|{}|{}",
            self.method,
            self.ebn0_db,
            opt(self.psr_db),
            opt(self.papr_db),
            self.iterations.map_or(String::new(), |t| t.to_string())
        )
    }
}

pub const CSV_HEADER: &str = "method,ebn0_db,psr_db,papr_db,iterations,num_samples,ber,stderr";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BerCurve {
    pub rows: Vec<BerRow>,
}

impl BerCurve {
    pub fn row(&self, method: &str, ebn0_db: f64) -> Option<&BerRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && ebn0_key(r.ebn0_db) == ebn0_key(ebn0_db))
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(CSV_HEADER.split(','))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
            .map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.join(",") != CSV_HEADER {
            return Err(Error::Parse(format!("unexpected CSV header `{}`", header.join(","))));
        }
        let rows = r.deserialize().collect::<std::result::Result<Vec<BerRow>, _>>()?;
        Ok(Self { rows })
    }

    /// Merges rows into the CSV at `path`, replacing rows with the same key, under an
    /// exclusive lock file.
    pub fn append_to(&self, path: &Path) -> Result<()> {
        let _lock = FileLock::acquire(path)?;
        let mut merged = if path.exists() {
            Self::from_csv(&std::fs::read_to_string(path)?)?
        } else {
            Self::default()
        };
        let fresh: std::collections::HashSet<String> = self.rows.iter().map(BerRow::key).collect();
        merged.rows.retain(|r| !fresh.contains(&r.key()));
        merged.rows.extend(self.rows.iter().cloned());
        std::fs::write(path, merged.to_csv()?)?;
        Ok(())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(format!("csv: {e}"))
    }
}

/// Exclusive `<path>.lock` marker, removed on drop.
pub struct FileLock {
    path: PathBuf,
}

impl FileLock {
    pub fn acquire(target: &Path) -> Result<Self> {
        let mut name = target.as_os_str().to_owned();
        name.push(".lock");
        let path = PathBuf::from(name);
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => Error::Io(std::io::Error::new(
                    e.kind(),
                    format!("{} is locked by another writer", target.display()),
                )),
                _ => Error::Io(e),
            })?;
        Ok(Self { path })
    }
}

impl Drop for FileLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Everything an evaluation run measured.
#[derive(Clone, Debug, Default)]
pub struct Evaluation {
    pub curve: BerCurve,
    /// Per Eb/N0 bucket: fraction of bits that differ from the target's clean decision.
    pub flip_rate: Vec<(f64, f64)>,
    /// Samples left unperturbed because the loss gradient vanished.
    pub degenerate: usize,
}

struct SampleOutcome {
    errors: usize,
    flips: usize,
    degenerate: bool,
}

/// Attacked version of dataset entry `idx`, crafted on `crafter`.
///
/// The flag is set when the gradient vanished and the frame was left unperturbed.
/// With a PSR in the budget the power limit is resolved against the frame's own
/// noise-free component.
pub fn adversarial_signal<T: Scalar>(
    crafter: &ReceiverModel<T>,
    sample: &LabeledSample<T>,
    idx: usize,
    method: AttackMethod,
    budget: &AttackBudget,
    seed: u64,
    uap: Option<&IqSignal<T>>,
) -> Result<(IqSignal<T>, bool)> {
    let s = sample;
    let b = if budget.psr_db.is_some() {
        budget.resolved(power(&s.clean_component()?)?)
    } else {
        *budget
    };
    let attacked = match method {
        AttackMethod::None => Ok(s.signal.clone()),
        AttackMethod::Awgn => {
            awgn_attack(s, &b, &mut stream_rng(derive_seed(seed, "awgn"), idx as u64)).map(|r| r.adversarial_signal)
        }
        AttackMethod::Fgsm => fgsm_attack(crafter, s, &b).map(|r| r.adversarial_signal),
        AttackMethod::Mifgsm => mifgsm_attack(crafter, s, &b).map(|r| r.adversarial_signal),
        AttackMethod::Pgd => pgd_attack(crafter, s, &b).map(|r| r.adversarial_signal),
        AttackMethod::Uap => match uap {
            Some(d) => apply_uap(&s.signal, d, b.epsilon),
            None => Err(invalid("uap evaluation needs a universal perturbation")),
        },
    };
    match attacked {
        Ok(sig) => Ok((sig, false)),
        Err(Error::DegenerateGradient) => Ok((s.signal.clone(), true)),
        Err(e) => Err(e),
    }
}

/// Attacks every sample and measures the target's BER per Eb/N0 bucket.
///
/// `gradient_model` is the model the perturbations are crafted on; `None` means the
/// target itself (white-box). `uap` supplies the universal perturbation for
/// [`AttackMethod::Uap`].
pub fn evaluate_attack<T: Scalar>(
    target: &ReceiverModel<T>,
    gradient_model: Option<&ReceiverModel<T>>,
    dataset: &[LabeledSample<T>],
    method: AttackMethod,
    budget: &AttackBudget,
    seed: u64,
    uap: Option<&IqSignal<T>>,
) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(invalid("evaluation dataset is empty"));
    }
    if method == AttackMethod::Uap && uap.is_none() {
        return Err(invalid("uap evaluation needs a universal perturbation"));
    }
    budget.validate()?;
    let crafter = gradient_model.unwrap_or(target);

    let outcomes: Vec<SampleOutcome> = dataset
        .par_iter()
        .enumerate()
        .map(|(idx, s)| -> Result<SampleOutcome> {
            let clean_bits = target.predict_bits(&s.signal)?;
            let (signal, degenerate) = adversarial_signal(crafter, s, idx, method, budget, seed, uap)?;
            let bits = target.predict_bits(&signal)?;
            Ok(SampleOutcome {
                errors: bits.hamming_distance(&s.info_bits)?,
                flips: bits.hamming_distance(&clean_bits)?,
                degenerate,
            })
        })
        .collect::<Result<_>>()?;

    let mut buckets: BTreeMap<i64, (f64, usize, usize, usize)> = BTreeMap::new();
    let mut degenerate = 0;
    for (s, o) in dataset.iter().zip(&outcomes) {
        let e = buckets.entry(ebn0_key(s.ebn0_db)).or_insert((s.ebn0_db, 0, 0, 0));
        e.1 += 1;
        e.2 += o.errors;
        e.3 += o.flips;
        degenerate += usize::from(o.degenerate);
    }
    let m_bits = target.m_bits();
    let mut eval = Evaluation {
        degenerate,
        ..Evaluation::default()
    };
    for (ebn0_db, n, errors, flips) in buckets.into_values() {
        let total_bits = (n * m_bits) as f64;
        let ber = errors as f64 / total_bits;
        let attacked = method != AttackMethod::None;
        eval.curve.rows.push(BerRow {
            method: method.id().to_string(),
            ebn0_db,
            psr_db: if attacked {
                Some(budget.psr_db.unwrap_or_else(|| linear_to_db(budget.epsilon)))
            } else {
                None
            },
            papr_db: (attacked && method != AttackMethod::Awgn).then(|| budget.papr_db()),
            iterations: method.is_iterative().then_some(budget.iterations),
            num_samples: n,
            ber,
            stderr: ber_stderr(ber, n, m_bits),
        });
        eval.flip_rate.push((ebn0_db, flips as f64 / total_bits));
    }
    if eval.degenerate > 0 {
        log::warn!(
            "{}: {} samples had a vanishing gradient and were left unperturbed",
            method,
            eval.degenerate
        );
    }
    for (e, f) in &eval.flip_rate {
        log::debug!("{method} Eb/N0 {e} dB: flip rate vs clean decisions {f:.4}");
    }
    Ok(eval)
}
