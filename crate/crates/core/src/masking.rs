//! Periphery removal: pixels outside a gaze-centered disc are replaced by the
//! mean frame.

use crate::gazemaps::degrees_to_pixels;
use crate::{Error, GazePoint, Result, FRAME_PIXELS, FRAME_SIZE};

/// Radius of the retained focus region, in degrees of visual angle.
pub const FOCUS_RADIUS_DEG: f64 = 6.0;

/// Frame center used when no gaze has been observed yet.
pub const FRAME_CENTER: GazePoint = [
    (FRAME_SIZE as f32 - 1.0) / 2.0,
    (FRAME_SIZE as f32 - 1.0) / 2.0,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocusRegion {
    pub center: GazePoint,
    pub radius_px: f64,
}

impl FocusRegion {
    /// Disc of [`FOCUS_RADIUS_DEG`] around `center`.
    pub fn around(center: GazePoint, pixels_per_degree: f64) -> Result<Self> {
        Ok(Self {
            center,
            radius_px: degrees_to_pixels(FOCUS_RADIUS_DEG, pixels_per_degree)?,
        })
    }

    /// Whether the pixel center `(x, y)` lies inside the closed disc.
    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let dx = x as f64 - self.center[0] as f64;
        let dy = y as f64 - self.center[1] as f64;
        dx * dx + dy * dy <= self.radius_px * self.radius_px
    }
}

/// Last gaze sample of the frame, else the previous center, else the frame center.
pub fn select_gaze_center(points: &[GazePoint], previous: Option<GazePoint>) -> GazePoint {
    points
        .last()
        .copied()
        .or(previous)
        .unwrap_or(FRAME_CENTER)
}

/// Writes the masked frame into `out`; `frame`, `mean_frame` and `out` are 84 × 84.
pub fn mask_periphery_into(
    frame: &[f32],
    region: &FocusRegion,
    mean_frame: &[f32],
    out: &mut [f32],
) -> Result<()> {
    if !(region.radius_px > 0.0) {
        return Err(Error::NonPositiveRadius(region.radius_px));
    }
    debug_assert!(frame.len() == FRAME_PIXELS && mean_frame.len() == FRAME_PIXELS);
    for y in 0..FRAME_SIZE {
        let row = y * FRAME_SIZE;
        for x in 0..FRAME_SIZE {
            let i = row + x;
            out[i] = if region.contains(x, y) {
                frame[i]
            } else {
                mean_frame[i]
            };
        }
    }
    Ok(())
}

pub fn mask_periphery(frame: &[f32], region: &FocusRegion, mean_frame: &[f32]) -> Result<Vec<f32>> {
    let mut out = vec![0.0; FRAME_PIXELS];
    mask_periphery_into(frame, region, mean_frame, &mut out)?;
    Ok(out)
}
