//! Lossless byte-level entropy stage.

use super::BitstreamError;

pub const DEFAULT_ZSTD_LEVEL: i32 = 9;

/// Entropy coder applied to the serialized sections. Encoding is
/// deterministic for a fixed backend and level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropyBackend {
    /// Pass-through, for tests and debugging.
    Identity,
    Zstd { level: i32 },
}

impl Default for EntropyBackend {
    fn default() -> Self {
        Self::Zstd {
            level: DEFAULT_ZSTD_LEVEL,
        }
    }
}

impl EntropyBackend {
    pub fn encode(&self, raw: &[u8]) -> Result<Vec<u8>, BitstreamError> {
        match self {
            Self::Identity => Ok(raw.to_vec()),
            Self::Zstd { level } => {
                zstd::bulk::compress(raw, *level).map_err(|e| BitstreamError::Entropy(e.to_string()))
            }
        }
    }

    /// Decodes at most `max_len` bytes; anything larger or undecodable is a
    /// corrupt stream.
    pub fn decode(&self, coded: &[u8], max_len: usize) -> Result<Vec<u8>, BitstreamError> {
        match self {
            Self::Identity => {
                if coded.len() > max_len {
                    return Err(BitstreamError::CorruptStream(format!(
                        "payload of {} bytes exceeds bound {max_len}",
                        coded.len()
                    )));
                }
                Ok(coded.to_vec())
            }
            Self::Zstd { .. } => zstd::bulk::decompress(coded, max_len)
                .map_err(|e| BitstreamError::CorruptStream(format!("entropy decode: {e}"))),
        }
    }
}

impl std::str::FromStr for EntropyBackend {
    type Err = String;

    /// `identity`, `zstd` or `zstd:<level>`.
    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "identity" => Ok(Self::Identity),
            None if s == "zstd" => Ok(Self::default()),
            Some(("zstd", lvl)) => lvl
                .parse()
                .map(|level| Self::Zstd { level })
                .map_err(|e| format!("bad zstd level {lvl:?}: {e}")),
            _ => Err(format!("unknown entropy backend {s:?}")),
        }
    }
}

pub fn entropy_encode(raw: &[u8]) -> Result<Vec<u8>, BitstreamError> {
    EntropyBackend::default().encode(raw)
}

pub fn entropy_decode(coded: &[u8], max_len: usize) -> Result<Vec<u8>, BitstreamError> {
    EntropyBackend::default().decode(coded, max_len)
}
