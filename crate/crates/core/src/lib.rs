//! Speech enhancement with a conditioned least-squares GAN on raw waveforms.
//!
//! The crate is organized bottom-up:
//!
//! * [`audio_io`]: WAV files, decimation, pre/deemphasis and windowing.
//! * [`dataset`]: synthetic speech-like and noise signals, SNR-controlled mixing
//!   and training pairs.
//! * [`tensor`]: a small reverse-mode autodiff engine with the convolution
//!   kernels, gradient checking, RMSprop and the checkpoint format.
//! * [`model`]: the encoder-decoder generator and the conditioned discriminator.
//! * [`trainer`]: the three-phase adversarial update and file enhancement.
//! * [`metrics`]: segmental SNR, LPC log-likelihood ratio and listening-test
//!   arithmetic.
//! * [`wiener`]: an STFT Wiener filter with decision-directed a priori SNR, used
//!   as the classical baseline.

pub mod audio_io;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod trainer;
pub mod wiener;

pub use audio_io::Waveform;
pub use error::{Error, Result};
pub use model::{Discriminator, Generator, GeneratorConfig};
pub use tensor::{Graph, ParamStore, Tensor, Var};
