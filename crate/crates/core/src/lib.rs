//! GAN-based defense against adversarial examples.
//!
//! The crate bundles everything needed to study discriminator-based
//! detection and generator+discriminator cleaning of adversarial inputs at
//! desk scale:
//!
//! * [`tensor`] / [`autodiff`] — dense `f64` tensors and a tape-based
//!   reverse-mode gradient engine,
//! * [`nets`] — dense classifier/generator/discriminator networks, their
//!   trainers, and binary checkpoints,
//! * [`attacks`] — FGSM, BIM, MIM, PGDM, and VAM attack generators,
//! * [`defense`] — discriminator scoring, threshold calibration, detection,
//!   and latent-space cleaning,
//! * [`data`] — the synthetic two-Gaussian dataset and an IDX image loader.
//!
//! Per-sample work (cleaning, VAM power iteration) is data-parallel over the
//! rayon pool when the `parallel` feature (default) is enabled; disabling it
//! yields a dependency-free sequential build with identical outputs.

pub mod attacks;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod defense;
pub mod error;
pub mod nets;
pub mod par;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
