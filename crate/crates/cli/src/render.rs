//! PNG heatmaps from a heatmap CSV.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::output::{read_heatmap_csv, HeatmapRow};
use crate::CliError;

/// Target image width in pixels; each grid cell becomes a square block.
const TARGET_SIZE: usize = 512;
const MARKER: Rgb<u8> = Rgb([230, 30, 30]);

fn color(fraction: f64) -> Rgb<u8> {
    let c = colorous::VIRIDIS.eval_continuous(fraction.clamp(0.0, 1.0));
    Rgb([c.r, c.g, c.b])
}

fn axis(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn nearest(axis: &[f64], x: f64) -> usize {
    (0..axis.len())
        .min_by(|&a, &b| (axis[a] - x).abs().total_cmp(&(axis[b] - x).abs()))
        .unwrap_or(0)
}

/// Image for one (method, eps) group; `x₁` runs left to right and `x₂`
/// bottom to top.
pub fn heatmap_image(rows: &[&HeatmapRow], marker: Option<[f64; 2]>) -> RgbImage {
    let xs = axis(rows.iter().map(|r| r.x1));
    let ys = axis(rows.iter().map(|r| r.x2));
    let cell = (TARGET_SIZE / xs.len().max(ys.len())).max(1) as u32;
    let (w, h) = (xs.len() as u32 * cell, ys.len() as u32 * cell);
    let mut img = RgbImage::new(w, h);
    let block = |i: usize, j: usize| (i as u32 * cell, (ys.len() - 1 - j) as u32 * cell);
    for r in rows {
        let (i, j) = (nearest(&xs, r.x1), nearest(&ys, r.x2));
        let (px, py) = block(i, j);
        let c = color(r.success_fraction);
        for dy in 0..cell {
            for dx in 0..cell {
                img.put_pixel(px + dx, py + dy, c);
            }
        }
    }
    if let Some([mx, my]) = marker {
        let (px, py) = block(nearest(&xs, mx), nearest(&ys, my));
        let (cx, cy) = (px + cell / 2, py + cell / 2);
        let arm = (2 * cell).max(4);
        for d in 0..=2 * arm {
            let x = (cx + d).checked_sub(arm);
            let y = (cy + d).checked_sub(arm);
            if let Some(x) = x.filter(|x| *x < w) {
                img.put_pixel(x, cy.min(h - 1), MARKER);
            }
            if let Some(y) = y.filter(|y| *y < h) {
                img.put_pixel(cx.min(w - 1), y, MARKER);
            }
        }
    }
    img
}

/// Renders one image per `(method, eps)` found in the CSV. Files are named
/// `<stem>_<method>_eps<eps>.png` next to `png`.
pub fn render_heatmap(
    csv: &Path,
    png: &Path,
    marker: Option<[f64; 2]>,
) -> Result<Vec<PathBuf>, CliError> {
    let rows = read_heatmap_csv(csv)?;
    let mut groups: BTreeMap<(String, u64), Vec<&HeatmapRow>> = BTreeMap::new();
    for r in &rows {
        groups
            .entry((r.method.clone(), r.eps.to_bits()))
            .or_default()
            .push(r);
    }
    let stem = png
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("heatmap");
    let dir = png.parent().unwrap_or(Path::new(""));
    let mut written = Vec::new();
    for ((method, eps_bits), group) in &groups {
        let path = dir.join(format!(
            "{stem}_{method}_eps{:e}.png",
            f64::from_bits(*eps_bits)
        ));
        heatmap_image(group, marker)
            .save(&path)
            .map_err(|e| CliError::Io {
                path: path.clone(),
                source: std::io::Error::other(e),
            })?;
        written.push(path);
    }
    Ok(written)
}
