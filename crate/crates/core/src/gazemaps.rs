//! Multi-scale Gaussian gaze maps.
//!
//! Each frame's gaze samples are summed as isotropic Gaussians evaluated at
//! pixel centers, then scaled so the map peaks at 1. Four maps are rendered
//! per frame at standard deviations of 1°, 3°, 5° and 10° of visual angle.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ingest::ReplayStore;
use crate::util::{f32s_to_le, le_to_f32s, read_file, sha256_hex, write_file};
use crate::{Error, GazePoint, Result, FRAME_PIXELS, FRAME_SIZE};

/// Standard deviations of the four gaze maps, in degrees of visual angle.
pub const GAZE_SIGMAS_DEG: [f64; 4] = [1.0, 3.0, 5.0, 10.0];
/// Number of maps in a [`GazeMapStack`].
pub const GAZE_CHANNELS: usize = GAZE_SIGMAS_DEG.len();

pub fn degrees_to_pixels(deg: f64, pixels_per_degree: f64) -> Result<f64> {
    if !(pixels_per_degree > 0.0) || !pixels_per_degree.is_finite() {
        return Err(Error::NonPositivePpd(pixels_per_degree));
    }
    Ok(deg * pixels_per_degree)
}

/// Renders one max-normalized gaze map into `out` (84 × 84, row-major).
pub fn render_gaze_map_into(points: &[GazePoint], sigma_px: f64, out: &mut [f32]) -> Result<()> {
    if !(sigma_px > 0.0) || !sigma_px.is_finite() {
        return Err(Error::NonPositiveSigma(sigma_px));
    }
    debug_assert_eq!(out.len(), FRAME_PIXELS);
    if points.is_empty() {
        out.fill(0.0);
        return Ok(());
    }
    let inv = 1.0 / (2.0 * sigma_px * sigma_px);
    let mut acc = vec![0.0f64; FRAME_PIXELS];
    let mut ex = [0.0f64; FRAME_SIZE];
    let mut ey = [0.0f64; FRAME_SIZE];
    for p in points {
        let (px, py) = (p[0] as f64, p[1] as f64);
        for k in 0..FRAME_SIZE {
            let dx = k as f64 - px;
            let dy = k as f64 - py;
            ex[k] = (-dx * dx * inv).exp();
            ey[k] = (-dy * dy * inv).exp();
        }
        for (y, row) in acc.chunks_exact_mut(FRAME_SIZE).enumerate() {
            let wy = ey[y];
            if wy == 0.0 {
                continue;
            }
            for (a, &wx) in row.iter_mut().zip(&ex) {
                *a += wy * wx;
            }
        }
    }
    let max = acc.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for (o, &a) in out.iter_mut().zip(&acc) {
            *o = (a / max) as f32;
        }
    } else {
        // every Gaussian underflowed at all pixel centers; fall back to the
        // nearest pixel of the last sample
        out.fill(0.0);
        let p = points[points.len() - 1];
        let x = (p[0].round() as usize).min(FRAME_SIZE - 1);
        let y = (p[1].round() as usize).min(FRAME_SIZE - 1);
        out[y * FRAME_SIZE + x] = 1.0;
    }
    Ok(())
}

pub fn render_gaze_map(points: &[GazePoint], sigma_px: f64) -> Result<Vec<f32>> {
    let mut out = vec![0.0; FRAME_PIXELS];
    render_gaze_map_into(points, sigma_px, &mut out)?;
    Ok(out)
}

/// Four gaze maps of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeMapStack {
    /// `4 × 84 × 84`, map-major.
    pub maps: Vec<f32>,
    pub sigmas_deg: [f64; 4],
    pub pixels_per_degree: f64,
}

impl GazeMapStack {
    pub fn map(&self, k: usize) -> &[f32] {
        &self.maps[k * FRAME_PIXELS..(k + 1) * FRAME_PIXELS]
    }
}

/// Sigma of each map in 84 × 84 pixels.
pub fn stack_sigmas_px(pixels_per_degree: f64) -> Result<[f64; 4]> {
    let mut out = [0.0; 4];
    for (o, &d) in out.iter_mut().zip(&GAZE_SIGMAS_DEG) {
        *o = degrees_to_pixels(d, pixels_per_degree)?;
    }
    Ok(out)
}

/// Renders the four maps into `out` (`4 × 84 × 84`).
pub fn build_gaze_stack_into(
    points: &[GazePoint],
    pixels_per_degree: f64,
    out: &mut [f32],
) -> Result<()> {
    let sigmas = stack_sigmas_px(pixels_per_degree)?;
    for (map, sigma) in out.chunks_exact_mut(FRAME_PIXELS).zip(sigmas) {
        render_gaze_map_into(points, sigma, map)?;
    }
    Ok(())
}

pub fn build_gaze_stack(points: &[GazePoint], pixels_per_degree: f64) -> Result<GazeMapStack> {
    let mut maps = vec![0.0; GAZE_CHANNELS * FRAME_PIXELS];
    build_gaze_stack_into(points, pixels_per_degree, &mut maps)?;
    Ok(GazeMapStack {
        maps,
        sigmas_deg: GAZE_SIGMAS_DEG,
        pixels_per_degree,
    })
}

/// Precomputed gaze maps for every state of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeMapCache {
    pub pixels_per_degree: f64,
    maps: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheManifest {
    sigmas_deg: [f64; 4],
    pixels_per_degree: f64,
    num_states: usize,
    frame_size: usize,
    file: String,
    sha256: String,
}

const CACHE_DIR: &str = "gaze_maps";

fn cache_stem(pixels_per_degree: f64) -> String {
    format!("ppd_{pixels_per_degree:.6}")
}

impl GazeMapCache {
    pub fn compute(store: &ReplayStore, pixels_per_degree: f64) -> Result<Self> {
        let stride = GAZE_CHANNELS * FRAME_PIXELS;
        let mut maps = vec![0.0f32; store.len() * stride];
        for (i, chunk) in maps.chunks_exact_mut(stride).enumerate() {
            build_gaze_stack_into(store.gaze(i), pixels_per_degree, chunk)?;
        }
        Ok(Self {
            pixels_per_degree,
            maps,
        })
    }

    pub fn num_states(&self) -> usize {
        self.maps.len() / (GAZE_CHANNELS * FRAME_PIXELS)
    }

    /// The `4 × 84 × 84` stack of state `i`.
    pub fn stack(&self, i: usize) -> &[f32] {
        let stride = GAZE_CHANNELS * FRAME_PIXELS;
        &self.maps[i * stride..(i + 1) * stride]
    }

    /// Path of the sidecar manifest for a given ppd inside a store directory.
    pub fn manifest_path(store_dir: &Path, pixels_per_degree: f64) -> PathBuf {
        store_dir
            .join(CACHE_DIR)
            .join(format!("{}.json", cache_stem(pixels_per_degree)))
    }

    /// Writes `gaze_maps/ppd_<ppd>.f32` plus its JSON sidecar.
    pub fn write(&self, store_dir: &Path) -> Result<()> {
        let dir = store_dir.join(CACHE_DIR);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let stem = cache_stem(self.pixels_per_degree);
        let file = format!("{stem}.f32");
        let bytes = f32s_to_le(&self.maps);
        write_file(&dir.join(&file), &bytes)?;
        let manifest = CacheManifest {
            sigmas_deg: GAZE_SIGMAS_DEG,
            pixels_per_degree: self.pixels_per_degree,
            num_states: self.num_states(),
            frame_size: FRAME_SIZE,
            file,
            sha256: sha256_hex(&bytes),
        };
        write_file(
            &dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )
    }

    /// Loads the cache for `pixels_per_degree` if one exists.
    pub fn load(store_dir: &Path, pixels_per_degree: f64, num_states: usize) -> Result<Option<Self>> {
        let manifest_path = Self::manifest_path(store_dir, pixels_per_degree);
        if !manifest_path.exists() {
            return Ok(None);
        }
        let manifest: CacheManifest = serde_json::from_slice(&read_file(&manifest_path)?)?;
        if manifest.num_states != num_states
            || manifest.frame_size != FRAME_SIZE
            || manifest.sigmas_deg != GAZE_SIGMAS_DEG
        {
            return Err(Error::InvalidStore(format!(
                "gaze cache {} does not match the store",
                manifest_path.display()
            )));
        }
        let path = store_dir.join(CACHE_DIR).join(&manifest.file);
        let bytes = read_file(&path)?;
        if sha256_hex(&bytes) != manifest.sha256 {
            return Err(Error::ChecksumMismatch(manifest.file));
        }
        let maps = le_to_f32s(&bytes);
        if maps.len() != num_states * GAZE_CHANNELS * FRAME_PIXELS {
            return Err(Error::InvalidStore("gaze cache has the wrong size".into()));
        }
        Ok(Some(Self {
            pixels_per_degree: manifest.pixels_per_degree,
            maps,
        }))
    }
}
