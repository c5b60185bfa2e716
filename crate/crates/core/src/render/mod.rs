//! CPU tile-based Gaussian splatting with per-Gaussian contribution counts.
//!
//! Every pixel composites the depth-sorted Gaussians front to back:
//! `C = Σ c_i α_i T_i`, `α_i = min(0.99, σ_i exp(-½ δᵀ Σ₂⁻¹ δ))`. A Gaussian is
//! skipped at a pixel when `α_i < 1/255`, and the pixel stops once `T < 1e-4`.
//! A Gaussian *contributes* to a pixel (its hit count increments) exactly when
//! it is composited there. Tiles only restrict which Gaussians are visited;
//! every skipped Gaussian would have had `α < 1/255`, so the result does not
//! depend on the tile size or the worker count.

mod project;

pub use project::{
    project_gaussian, ProjectedGaussian, LOW_PASS, MAX_ALPHA, MIN_ALPHA, MIN_TRANSMITTANCE,
    NEAR_PLANE,
};
pub(crate) use project::{project_cached, ProjectionCache};

use rayon::prelude::*;

use crate::deformation::{deform_cloud, Deformation};
use crate::error::{LgsError, Result};
use crate::image::Image;
use crate::scene::{Camera, GaussianCloud, Scene};

pub const DEFAULT_TILE_SIZE: usize = 16;

/// Fixed-point scale of the compositing-weight accumulators. Integer sums are
/// associative, which keeps `alpha_sums` bit-identical across tilings.
const WEIGHT_SCALE: f64 = (1u64 << 52) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOptions {
    pub tile_size: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            tile_size: DEFAULT_TILE_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub image: Image,
    /// Pixels each Gaussian was composited into.
    pub hit_counts: Vec<u32>,
    /// Total compositing weight `Σ_k α_i T_i` of each Gaussian.
    pub alpha_sums: Vec<f64>,
    /// Transmittance left after compositing, per pixel.
    pub final_transmittance: Vec<f64>,
}

/// Everything the backward pass needs to replay compositing.
#[derive(Debug, Clone)]
pub(crate) struct RasterState {
    pub width: usize,
    pub height: usize,
    pub tile_size: usize,
    /// Visible Gaussians in depth order.
    pub projected: Vec<ProjectedGaussian>,
    pub caches: Vec<ProjectionCache>,
    /// Per tile, positions into `projected`, front to back.
    pub tile_lists: Vec<Vec<u32>>,
    /// Per pixel, how many entries of its tile list were visited.
    pub visited: Vec<u32>,
}

impl RasterState {
    pub fn tiles_x(&self) -> usize {
        self.width.div_ceil(self.tile_size)
    }
}

struct TileResult {
    /// `(pixel index, rgb, final T, visited)` in raster order within the tile.
    pixels: Vec<(usize, [f64; 3], f64, u32)>,
    /// `(projected position, hits, fixed-point weight)`.
    contributions: Vec<(u32, u32, i128)>,
}

#[inline]
pub(crate) fn gaussian_alpha(p: &ProjectedGaussian, px: f64, py: f64) -> (f64, f64, f64, f64) {
    let dx = px - p.mean2d.x;
    let dy = py - p.mean2d.y;
    let [a, b, c] = p.conic;
    let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
    let g = power.exp();
    let raw = p.opacity * g;
    (raw.min(MAX_ALPHA), g, dx, dy)
}

#[inline]
pub(crate) fn in_bbox(p: &ProjectedGaussian, x: usize, y: usize) -> bool {
    x >= p.bbox[0] && x <= p.bbox[2] && y >= p.bbox[1] && y <= p.bbox[3]
}

fn rasterize_tile(
    projected: &[ProjectedGaussian],
    list: &[u32],
    x_range: (usize, usize),
    y_range: (usize, usize),
    width: usize,
) -> TileResult {
    let mut pixels = Vec::with_capacity((x_range.1 - x_range.0) * (y_range.1 - y_range.0));
    let mut hits = vec![0u32; list.len()];
    let mut weights = vec![0i128; list.len()];
    for y in y_range.0..y_range.1 {
        for x in x_range.0..x_range.1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut rgb = [0.0; 3];
            let mut visited = 0u32;
            for (slot, &pos) in list.iter().enumerate() {
                if t < MIN_TRANSMITTANCE {
                    break;
                }
                visited = slot as u32 + 1;
                let p = &projected[pos as usize];
                if !in_bbox(p, x, y) {
                    continue;
                }
                let (alpha, ..) = gaussian_alpha(p, px, py);
                if alpha < MIN_ALPHA {
                    continue;
                }
                let w = alpha * t;
                for (acc, c) in rgb.iter_mut().zip(p.color) {
                    *acc += c * w;
                }
                hits[slot] += 1;
                weights[slot] += (w * WEIGHT_SCALE).round() as i128;
                t *= 1.0 - alpha;
            }
            pixels.push((y * width + x, rgb, t, visited));
        }
    }
    let contributions = list
        .iter()
        .zip(hits.iter().zip(&weights))
        .filter(|(_, (h, _))| **h > 0)
        .map(|(&pos, (&h, &w))| (pos, h, w))
        .collect();
    TileResult {
        pixels,
        contributions,
    }
}

pub(crate) fn rasterize(
    cloud: &GaussianCloud,
    cam: &Camera,
    options: &RenderOptions,
) -> Result<(RenderOutput, RasterState)> {
    cam.validate()?;
    if options.tile_size == 0 {
        return Err(LgsError::invalid_argument("tile size must be positive"));
    }
    let (width, height, ts) = (cam.width, cam.height, options.tile_size);

    let mut visible: Vec<(ProjectedGaussian, ProjectionCache)> = cloud
        .gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| project_cached(g, i, cloud.sh_degree, cam))
        .collect();
    visible.sort_by(|a, b| {
        a.0.depth
            .total_cmp(&b.0.depth)
            .then(a.0.source_index.cmp(&b.0.source_index))
    });
    let (projected, caches): (Vec<_>, Vec<_>) = visible.into_iter().unzip();

    let tiles_x = width.div_ceil(ts);
    let tiles_y = height.div_ceil(ts);
    let mut tile_lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (pos, p) in projected.iter().enumerate() {
        for ty in p.bbox[1] / ts..=p.bbox[3] / ts {
            for tx in p.bbox[0] / ts..=p.bbox[2] / ts {
                tile_lists[ty * tiles_x + tx].push(pos as u32);
            }
        }
    }

    let tiles: Vec<TileResult> = tile_lists
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let (tx, ty) = (tile % tiles_x, tile / tiles_x);
            rasterize_tile(
                &projected,
                list,
                (tx * ts, ((tx + 1) * ts).min(width)),
                (ty * ts, ((ty + 1) * ts).min(height)),
                width,
            )
        })
        .collect();

    let mut image = Image::new(width, height);
    let mut final_transmittance = vec![1.0; width * height];
    let mut visited = vec![0u32; width * height];
    let mut hit_counts = vec![0u32; cloud.len()];
    let mut weight_fixed = vec![0i128; cloud.len()];
    for tile in &tiles {
        for &(k, rgb, t, v) in &tile.pixels {
            image.data[3 * k..3 * k + 3].copy_from_slice(&rgb);
            final_transmittance[k] = t;
            visited[k] = v;
        }
        for &(pos, h, w) in &tile.contributions {
            let src = projected[pos as usize].source_index;
            hit_counts[src] += h;
            weight_fixed[src] += w;
        }
    }
    let alpha_sums = weight_fixed.iter().map(|&w| w as f64 / WEIGHT_SCALE).collect();

    Ok((
        RenderOutput {
            image,
            hit_counts,
            alpha_sums,
            final_transmittance,
        },
        RasterState {
            width,
            height,
            tile_size: ts,
            projected,
            caches,
            tile_lists,
            visited,
        },
    ))
}

/// Renders a static cloud. An empty cloud yields a black image.
pub fn render(cloud: &GaussianCloud, cam: &Camera) -> Result<RenderOutput> {
    render_with(cloud, cam, &RenderOptions::default())
}

pub fn render_with(cloud: &GaussianCloud, cam: &Camera, options: &RenderOptions) -> Result<RenderOutput> {
    rasterize(cloud, cam, options).map(|(out, _)| out)
}

/// Deforms the scene to time `t`, renders it, and returns the per-Gaussian
/// deformation record alongside the image.
pub fn render_dynamic(scene: &Scene, cam: &Camera, t: f64) -> Result<(RenderOutput, Vec<Deformation>)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(LgsError::invalid_argument(format!("time {t} outside [0, 1]")));
    }
    let (deformed, record) = deform_cloud(&scene.cloud, &scene.field, t)?;
    Ok((render(&deformed, cam)?, record))
}
