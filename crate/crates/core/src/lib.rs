//! Text-line recognition: sliding-window character network, CTC training
//! and decoding, a character n-gram model and synthetic data.

pub mod alphabet;
pub mod charnet;
pub mod ctc;
pub mod decode;
mod error;
pub mod harness;
pub mod lm;
pub mod logspace;
pub mod synth;
pub mod textline;

pub use alphabet::{Alphabet, BLANK};
pub use ctc::{EmissionMatrix, LabelSequence};
pub use error::{Error, Result};
