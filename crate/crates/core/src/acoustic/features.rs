use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"UPFT";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

/// A matrix of acoustic feature frames (`m×c_feat`) and its frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct AcousticFeatures {
    pub frames: Tensor,
    pub frame_rate_hz: f64,
}

impl AcousticFeatures {
    pub fn new(frames: Tensor, frame_rate_hz: f64) -> Result<Self> {
        frames.expect_2d("acoustic features")?;
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(Error::InvalidArgument(format!("frame rate {frame_rate_hz} must be positive")));
        }
        if !frames.is_finite() {
            return Err(Error::NonFinite { op: "acoustic features" });
        }
        Ok(Self { frames, frame_rate_hz })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn duration_secs(&self) -> f64 {
        self.num_frames() as f64 / self.frame_rate_hz
    }

    /// Serializes to the `.upft` layout: magic, version, rows, cols, frame
    /// rate, then row-major `f32` payload, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.frames.numel());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.num_frames() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.extend_from_slice(&(self.frame_rate_hz as f32).to_le_bytes());
        for v in self.frames.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let malformed = |reason: &str| Error::Malformed {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 4 {
            return Err(malformed("shorter than the magic bytes"));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: MAGIC,
                found: magic,
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(malformed("header truncated"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                expected: VERSION,
                found: version,
            });
        }
        let rows = word(8) as usize;
        let cols = word(12) as usize;
        let rate = f32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes"));
        let payload = &bytes[HEADER_LEN..];
        let expected = rows * cols * 4;
        if payload.len() != expected {
            return Err(Error::PayloadLength {
                path: path.to_path_buf(),
                expected,
                found: payload.len(),
            });
        }
        if rows == 0 || cols == 0 {
            return Err(malformed("feature matrix must have at least one row and column"));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Self::new(Tensor::new(vec![rows, cols], data)?, rate as f64).map_err(|e| malformed(&e.to_string()))
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<AcousticFeatures> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    AcousticFeatures::from_bytes(path, &bytes)
}

pub fn write_features(path: impl AsRef<Path>, features: &AcousticFeatures) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&features.to_bytes()).map_err(|e| Error::io(path, e))
}
