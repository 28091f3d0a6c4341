//! Square image patches centred on fixations.
//!
//! The box is centred on the fixation rounded half-up to the nearest pixel.
//! Near the border it is shifted back inside the image; no padding pixels
//! are ever produced. An even side length `s` spans `[x - s/2, x + s/2 - 1]`.

use std::path::Path;

use crate::model::{Fixation, Scanpath, StimulusImage};
use crate::{pgm, Error, Result};

pub const DEFAULT_PATCH_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    pub patch_size: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            patch_size: DEFAULT_PATCH_SIZE,
        }
    }
}

impl PatchConfig {
    pub fn check(&self, img: &StimulusImage) -> Result<()> {
        let s = self.patch_size;
        if s == 0 || s > img.width || s > img.height {
            return Err(Error::BadPatchSize {
                size: s,
                message: format!(
                    "must be positive and fit in the {}x{} stimulus {}",
                    img.width, img.height, img.stimulus_id
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub size: usize,
    pub pixels: Vec<u8>,
    pub origin_x: usize,
    pub origin_y: usize,
    pub fixation_index: usize,
}

impl Patch {
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.size + x]
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        pgm::write(path, self.size, self.size, &self.pixels)
    }
}

/// Half-up rounding, capped to the last pixel so a coordinate like 1919.6
/// on a 1920-wide image still maps inside it.
fn round_coord(v: f64, extent: usize) -> usize {
    ((v + 0.5).floor() as usize).min(extent - 1)
}

fn origin(center: usize, size: usize, extent: usize) -> usize {
    center.saturating_sub(size / 2).min(extent - size)
}

/// Top-left corner of the patch for a fixation, without copying pixels.
pub fn patch_origin(img: &StimulusImage, f: &Fixation, cfg: &PatchConfig) -> Result<(usize, usize)> {
    cfg.check(img)?;
    if !img.contains(f.x, f.y) {
        return Err(Error::OutOfBounds {
            index: f.index,
            x: f.x,
            y: f.y,
            width: img.width,
            height: img.height,
        });
    }
    let s = cfg.patch_size;
    Ok((
        origin(round_coord(f.x, img.width), s, img.width),
        origin(round_coord(f.y, img.height), s, img.height),
    ))
}

pub fn extract_patch(img: &StimulusImage, f: &Fixation, cfg: &PatchConfig) -> Result<Patch> {
    let (ox, oy) = patch_origin(img, f, cfg)?;
    let s = cfg.patch_size;
    let mut pixels = Vec::with_capacity(s * s);
    for row in oy..oy + s {
        let start = row * img.width + ox;
        pixels.extend_from_slice(&img.pixels[start..start + s]);
    }
    Ok(Patch {
        size: s,
        pixels,
        origin_x: ox,
        origin_y: oy,
        fixation_index: f.index,
    })
}

/// One patch per fixation, in fixation order.
pub fn extract_scanpath_patches(
    img: &StimulusImage,
    sp: &Scanpath,
    cfg: &PatchConfig,
) -> Result<Vec<Patch>> {
    sp.fixations.iter().map(|f| extract_patch(img, f, cfg)).collect()
}

/// Debug export: writes `<subject>_<stimulus>_<index>.pgm` for every patch.
pub fn export_patches(dir: &Path, sp: &Scanpath, patches: &[Patch]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for p in patches {
        let name = format!("{}_{}_{}.pgm", sp.subject_id, sp.stimulus_id, p.fixation_index);
        p.write_pgm(&dir.join(name))?;
    }
    Ok(())
}
