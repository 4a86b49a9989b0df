use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GrayImage, Phase};

/// CT display window in Hounsfield units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub level: f64,
    pub width: f64,
}

impl WindowSpec {
    /// Window used for the non-contrast phase.
    pub const PRE_CONTRAST: WindowSpec = WindowSpec {
        level: 40.0,
        width: 250.0,
    };
    /// Window used for the contrast-enhanced phases.
    pub const CONTRAST: WindowSpec = WindowSpec {
        level: 45.0,
        width: 290.0,
    };

    pub fn new(level: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) || !level.is_finite() || !width.is_finite() {
            return Err(Error::invalid(format!("window width must be > 0, got {width}")));
        }
        Ok(Self { level, width })
    }

    pub fn for_phase(phase: Phase) -> Self {
        match phase {
            Phase::Pc => Self::PRE_CONTRAST,
            _ => Self::CONTRAST,
        }
    }

    /// Maps one HU value to an 8-bit intensity.
    pub fn apply(&self, hu: f64) -> u8 {
        let floor = self.level - self.width / 2.0;
        let t = ((hu - floor) / self.width).clamp(0.0, 1.0);
        // f64::round rounds half away from zero
        (t * 255.0).round() as u8
    }
}

/// Windows a row-major HU grid into an 8-bit image.
pub fn apply_window(hu: &[f64], width: usize, height: usize, spec: WindowSpec) -> Result<GrayImage> {
    if !(spec.width > 0.0) {
        return Err(Error::invalid("window width must be > 0"));
    }
    GrayImage::new(width, height, hu.iter().map(|&v| spec.apply(v)).collect())
}
