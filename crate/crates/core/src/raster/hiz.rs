//! Hierarchical max-depth pyramid.

use rayon::prelude::*;

use super::DepthMap;
use crate::cluster::LevelRect;

#[derive(Debug, Clone, PartialEq)]
pub struct HiZPyramid {
    /// Level 0 is the full-resolution depth buffer; the last level is 1x1.
    pub levels: Vec<DepthMap>,
}

impl HiZPyramid {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn max_level(&self) -> u32 {
        self.levels.len() as u32 - 1
    }

    pub fn level(&self, l: u32) -> &DepthMap {
        &self.levels[l as usize]
    }
}

/// Each texel of level `l + 1` is the max over its (up to) 2x2 footprint in
/// level `l`; odd sizes round up and reuse the last row or column.
pub fn build_hiz(depth: &DepthMap) -> HiZPyramid {
    let mut levels = vec![depth.clone()];
    loop {
        let src = levels.last().unwrap();
        if src.width <= 1 && src.height <= 1 {
            break;
        }
        let (w, h) = (src.width.div_ceil(2), src.height.div_ceil(2));
        let mut values = vec![0.0f32; w * h];
        let sw = src.width;
        values.par_chunks_mut(w).with_min_len(16).enumerate().for_each(|(v, row)| {
            let y1 = (2 * v + 1).min(src.height - 1);
            let a = &src.values[2 * v * sw..2 * v * sw + sw];
            let b = &src.values[y1 * sw..y1 * sw + sw];
            let pairs = sw / 2;
            for (u, out) in row[..pairs].iter_mut().enumerate() {
                *out = a[2 * u].max(a[2 * u + 1]).max(b[2 * u].max(b[2 * u + 1]));
            }
            if sw % 2 == 1 {
                row[pairs] = a[sw - 1].max(b[sw - 1]);
            }
        });
        levels.push(DepthMap::from_values(w, h, values));
    }
    HiZPyramid { levels }
}

/// Max over the inclusive texel rectangle, clipped to the level's extent.
/// Returns `None` when nothing of the rectangle lies inside the level.
pub fn rect_max(pyramid: &HiZPyramid, rect: &LevelRect) -> Option<f32> {
    let level = pyramid.levels.get(rect.level as usize)?;
    let x0 = rect.x_min.max(0);
    let y0 = rect.y_min.max(0);
    let x1 = rect.x_max.min(level.width as i64 - 1);
    let y1 = rect.y_max.min(level.height as i64 - 1);
    if x0 > x1 || y0 > y1 {
        return None;
    }
    let mut m = f32::NEG_INFINITY;
    for y in y0 as usize..=y1 as usize {
        let row = &level.values[y * level.width + x0 as usize..=y * level.width + x1 as usize];
        m = row.iter().fold(m, |a, &b| a.max(b));
    }
    Some(m)
}
