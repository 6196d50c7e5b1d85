//! Power/PAPR-constrained perturbation synthesis against the neural receiver.

pub mod constraints;
pub mod methods;

pub use constraints::{
    db_to_linear, linear_to_db, papr, papr_clip, power, power_normalize, scale_to_power, ClipReport,
};
pub use methods::{awgn_attack, fgsm_attack, mifgsm_attack, pgd_attack, AttackBudget, AttackResult};
