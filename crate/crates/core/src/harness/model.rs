use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alphabet::Alphabet;
use crate::charnet::{decode_checkpoint, encode_checkpoint, NetworkParams};
use crate::ctc::EmissionMatrix;
use crate::error::{Error, Result};
use crate::textline::{extract_windows, read_pgm, GrayImage, WindowConfig};

#[derive(Serialize, Deserialize)]
struct Meta {
    alphabet: Alphabet,
    windows: WindowConfig,
}

/// A trained network together with the alphabet and window geometry it was
/// trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub params: NetworkParams,
    pub alphabet: Alphabet,
    pub windows: WindowConfig,
}

impl Model {
    pub fn new(params: NetworkParams, alphabet: Alphabet, windows: WindowConfig) -> Result<Self> {
        windows.validate()?;
        if params.classes() != alphabet.num_classes() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "network has {} classes but the alphabet needs {}",
                params.classes(),
                alphabet.num_classes()
            )));
        }
        if params.config().input_channels != windows.channels() || params.config().input_size != windows.patch_size {
            return Err(Error::IncompatibleCheckpoint(format!(
                "network expects {}x{}x{} patches, window geometry gives {}x{}x{}",
                params.config().input_channels,
                params.config().input_size,
                params.config().input_size,
                windows.channels(),
                windows.patch_size,
                windows.patch_size
            )));
        }
        Ok(Model {
            params,
            alphabet,
            windows,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_value(Meta {
            alphabet: self.alphabet.clone(),
            windows: self.windows.clone(),
        })
        .expect("model metadata serializes");
        encode_checkpoint(&self.params, &meta)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (params, meta) = decode_checkpoint(bytes)?;
        let meta: Meta = serde_json::from_value(meta)
            .map_err(|e| Error::IncompatibleCheckpoint(format!("checkpoint metadata: {e}")))?;
        Self::new(params, meta.alphabet, meta.windows)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Normalizes, windows and classifies one raw line.
    pub fn emissions(&self, raw: &GrayImage) -> Result<EmissionMatrix> {
        let line = self.windows.normalize(raw)?;
        let windows = extract_windows(&line, &self.windows)?;
        self.params.emissions_for_line(&windows)
    }

    pub fn emissions_for_file(&self, path: impl AsRef<Path>) -> Result<EmissionMatrix> {
        self.emissions(&read_pgm(path)?)
    }
}
