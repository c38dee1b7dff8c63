pub mod ablate;
pub mod inspect;
pub mod occlude;
pub mod robust;
pub mod sweep;
pub mod synth;
pub mod train_eval;
