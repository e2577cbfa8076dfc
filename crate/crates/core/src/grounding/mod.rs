//! Semantic goal grounding: instruction + image → pixel target or absence.

use std::io::Cursor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, PixelTarget, Pose};

pub mod mock;
pub mod prompt;
pub mod remote;
pub mod worker;

pub use mock::MockGrounder;
pub use prompt::{build_prompt, parse_response};
pub use remote::{RemoteConfig, RemoteGrounder};
pub use worker::{GroundingWorker, Mailbox};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundingError {
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("no valid response object: {0}")]
    ParseError(String),
    #[error("pixel ({x}, {y}) outside the {width}x{height} image")]
    OutOfBounds { x: f64, y: f64, width: u32, height: u32 },
    #[error("grounding unavailable: {0}")]
    GroundingUnavailable(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
}

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, GroundingError> {
        let expected = width as usize * height as usize * 3;
        if width == 0 || height == 0 || data.len() != expected {
            return Err(GroundingError::InvalidImage(format!(
                "{width}x{height} needs {expected} bytes, got {}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_png(&self) -> Result<Vec<u8>, GroundingError> {
        let buf = image::RgbImage::from_raw(self.width, self.height, self.data.clone())
            .ok_or_else(|| GroundingError::InvalidImage("buffer size mismatch".into()))?;
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| GroundingError::InvalidImage(e.to_string()))?;
        Ok(out.into_inner())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingStatus {
    Found,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundingResult {
    pub status: GroundingStatus,
    /// Present iff `status` is `Found`.
    pub pixel: Option<PixelTarget>,
    /// Seconds, measured or simulated.
    pub latency: f64,
}

impl GroundingResult {
    pub fn found(pixel: PixelTarget) -> Self {
        Self {
            status: GroundingStatus::Found,
            pixel: Some(pixel),
            latency: 0.0,
        }
    }

    pub fn absent() -> Self {
        Self {
            status: GroundingStatus::Absent,
            pixel: None,
            latency: 0.0,
        }
    }

    pub fn with_latency(mut self, latency: f64) -> Self {
        self.latency = latency;
        self
    }
}

/// Everything a grounder may look at for one query.
#[derive(Debug, Clone)]
pub struct GroundingQuery {
    /// Rendered view; omitted when the grounder does not need pixels.
    pub image: Option<Image>,
    pub instruction: String,
    pub intrinsics: CameraIntrinsics,
    /// Camera-to-world transform at capture time.
    pub camera_pose: Pose,
    /// Zero-based index of this query within the episode.
    pub index: u64,
}

/// A grounding backend. Implementations must be usable from a worker
/// thread.
pub trait Grounder: Send {
    fn ground(&mut self, query: &GroundingQuery) -> Result<GroundingResult, GroundingError>;

    /// Whether queries must carry a rendered image.
    fn needs_image(&self) -> bool {
        true
    }
}

impl<G: Grounder + ?Sized> Grounder for Box<G> {
    fn ground(&mut self, query: &GroundingQuery) -> Result<GroundingResult, GroundingError> {
        (**self).ground(query)
    }

    fn needs_image(&self) -> bool {
        (**self).needs_image()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingConfig {
    /// Re-grounding interval (s).
    pub period: f64,
    /// Pixel noise of the mock grounder (px).
    pub pixel_noise_sigma: f64,
    /// Simulated latency per query (s).
    pub latency_model: f64,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self {
            period: 2.0,
            pixel_noise_sigma: 0.0,
            latency_model: 0.0,
        }
    }
}

impl GroundingConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.period > 0.0) {
            return Err(format!("grounding period must be positive, got {}", self.period));
        }
        if !(self.pixel_noise_sigma >= 0.0) || !(self.latency_model >= 0.0) {
            return Err("pixel noise and latency must be non-negative".into());
        }
        Ok(())
    }
}
