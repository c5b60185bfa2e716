//! Spatio-temporal deformation module: six bilinear feature planes over
//! `(x, y, z, t)` fused by elementwise product, decoded by a small ReLU MLP into
//! per-Gaussian offsets of center, rotation and scale.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LgsError, Result};
use crate::scene::{Gaussian, GaussianCloud, Quat};

/// Lower bound applied to deformed scales so volumes stay positive.
pub const SCALE_FLOOR: f64 = 1e-6;

/// Output layout of the MLP: `Δμ (3) | Δq (4) | Δs (3)`.
pub const MLP_OUTPUTS: usize = 10;

/// Axis pair of a feature plane. Axis ids: 0 = x, 1 = y, 2 = z, 3 = t.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlaneAxes {
    XY,
    XZ,
    YZ,
    XT,
    YT,
    ZT,
}

impl PlaneAxes {
    pub const ALL: [PlaneAxes; 6] = [
        PlaneAxes::XY,
        PlaneAxes::XZ,
        PlaneAxes::YZ,
        PlaneAxes::XT,
        PlaneAxes::YT,
        PlaneAxes::ZT,
    ];

    pub fn axes(self) -> (usize, usize) {
        match self {
            PlaneAxes::XY => (0, 1),
            PlaneAxes::XZ => (0, 2),
            PlaneAxes::YZ => (1, 2),
            PlaneAxes::XT => (0, 3),
            PlaneAxes::YT => (1, 3),
            PlaneAxes::ZT => (2, 3),
        }
    }

    pub fn tag(self) -> u8 {
        Self::ALL.iter().position(|&a| a == self).unwrap() as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }
}

/// One 2D grid of `feature_dim`-channel cells, stored `[(i * res[1] + j) * d + c]`
/// with `i` along the first axis of the pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePlane {
    pub axes: PlaneAxes,
    pub res: [usize; 2],
    pub feature_dim: usize,
    pub values: Vec<f64>,
}

impl FeaturePlane {
    pub fn filled(axes: PlaneAxes, res: [usize; 2], feature_dim: usize, value: f64) -> Self {
        Self {
            axes,
            res,
            feature_dim,
            values: vec![value; res[0] * res[1] * feature_dim],
        }
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize) -> usize {
        (i * self.res[1] + j) * self.feature_dim
    }

    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        let o = self.offset(i, j);
        &self.values[o..o + self.feature_dim]
    }

    pub fn cell_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = self.offset(i, j);
        let d = self.feature_dim;
        &mut self.values[o..o + d]
    }
}

/// Scene box and time range that map world coordinates onto grid coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    pub time: [f64; 2],
}

impl Bounds {
    pub fn cube(half: f64) -> Self {
        Self {
            min: Vector3::repeat(-half),
            max: Vector3::repeat(half),
            time: [0.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0..3).all(|a| self.max[a] > self.min[a] && self.min[a].is_finite() && self.max[a].is_finite())
            && self.time[1] > self.time[0];
        if ok {
            Ok(())
        } else {
            Err(LgsError::invalid_state("deformation field bounds are empty or degenerate"))
        }
    }

    pub(crate) fn range(&self, axis: usize) -> (f64, f64) {
        if axis == 3 {
            (self.time[0], self.time[1])
        } else {
            (self.min[axis], self.max[axis])
        }
    }
}

/// Dense layer `y = W x + b`, `W` row-major `rows × cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.cols).zip(&self.bias).map(|(row, b)| {
            row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b
        }));
    }
}

/// ReLU MLP; every layer except the last is followed by ReLU. The last layer
/// produces the ten deformation outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyMlp {
    pub layers: Vec<Dense>,
}

impl TinyMlp {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.cols)
    }

    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        let Some(last) = self.layers.last() else {
            return Err(LgsError::invalid_argument("mlp has no layers"));
        };
        if last.rows != MLP_OUTPUTS {
            return Err(LgsError::invalid_argument(format!(
                "mlp output dim {} != {MLP_OUTPUTS}",
                last.rows
            )));
        }
        let mut width = feature_dim;
        for (k, l) in self.layers.iter().enumerate() {
            if l.cols != width || l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(LgsError::invalid_argument(format!("mlp layer {k} has inconsistent shape")));
            }
            width = l.rows;
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }
}

/// `(Δμ, Δq, Δs)` produced for one Gaussian at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deformation {
    pub d_center: Vector3<f64>,
    pub d_rotation: Quat,
    pub d_scale: Vector3<f64>,
}

impl Deformation {
    pub const ZERO: Deformation = Deformation {
        d_center: Vector3::new(0.0, 0.0, 0.0),
        d_rotation: [0.0; 4],
        d_scale: Vector3::new(0.0, 0.0, 0.0),
    };

    pub(crate) fn from_outputs(out: &[f64]) -> Self {
        Self {
            d_center: Vector3::new(out[0], out[1], out[2]),
            d_rotation: [out[3], out[4], out[5], out[6]],
            d_scale: Vector3::new(out[7], out[8], out[9]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    /// Always six planes, in [`PlaneAxes::ALL`] order.
    pub planes: Vec<FeaturePlane>,
    pub bounds: Bounds,
    pub mlp: TinyMlp,
}

/// Construction parameters for [`init_field`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    /// Grid cells along `(x, y, z, t)`.
    pub resolution: [usize; 4],
    pub feature_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub bounds: Bounds,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            resolution: [16, 16, 16, 25],
            feature_dim: 16,
            hidden_width: 64,
            hidden_layers: 2,
            bounds: Bounds::cube(1.0),
        }
    }
}

impl DeformationField {
    pub fn feature_dim(&self) -> usize {
        self.planes.first().map_or(0, |p| p.feature_dim)
    }

    /// Per-axis resolution `(Rx, Ry, Rz, Rt)`, read from the planes.
    pub fn resolution(&self) -> [usize; 4] {
        let mut r = [0; 4];
        for p in &self.planes {
            let (a, b) = p.axes.axes();
            r[a] = p.res[0];
            r[b] = p.res[1];
        }
        r
    }

    pub fn plane_value_count(&self) -> usize {
        self.planes.iter().map(|p| p.values.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.planes.len() != 6 {
            return Err(LgsError::invalid_argument("field must have exactly six planes"));
        }
        let d = self.feature_dim();
        if d == 0 {
            return Err(LgsError::invalid_argument("feature_dim must be at least 1"));
        }
        let res = self.resolution();
        for (p, want) in self.planes.iter().zip(PlaneAxes::ALL) {
            let (a, b) = want.axes();
            if p.axes != want {
                return Err(LgsError::invalid_argument("planes out of canonical order"));
            }
            if p.feature_dim != d {
                return Err(LgsError::invalid_argument("planes disagree on feature_dim"));
            }
            if p.res[0] < 2 || p.res[1] < 2 {
                return Err(LgsError::invalid_argument("plane resolution must be at least 2"));
            }
            if p.res != [res[a], res[b]] {
                return Err(LgsError::invalid_argument(format!(
                    "plane {:?} resolution disagrees with shared axis resolution",
                    p.axes
                )));
            }
            if p.values.len() != p.res[0] * p.res[1] * d {
                return Err(LgsError::invalid_argument("plane value count mismatch"));
            }
        }
        self.mlp.validate(d)
    }

    /// A field whose spatial planes are all `1` and whose MLP outputs exactly zero.
    pub fn identity(resolution: [usize; 4], feature_dim: usize, bounds: Bounds) -> Self {
        let planes = PlaneAxes::ALL
            .iter()
            .map(|&axes| {
                let (a, b) = axes.axes();
                FeaturePlane::filled(axes, [resolution[a], resolution[b]], feature_dim, 1.0)
            })
            .collect();
        Self {
            planes,
            bounds,
            mlp: TinyMlp {
                layers: vec![Dense::zeros(MLP_OUTPUTS, feature_dim)],
            },
        }
    }
}

/// Grid coordinate of one axis: cell index, fractional weight, and the
/// derivative of the continuous coordinate with respect to the world coordinate
/// (zero when clamped).
#[derive(Debug, Clone, Copy)]
pub(crate) struct AxisCoord {
    pub i0: usize,
    pub w: f64,
    pub du_dx: f64,
}

fn axis_coord(value: f64, lo: f64, hi: f64, res: usize) -> AxisCoord {
    let scale = (res - 1) as f64 / (hi - lo);
    let u = (value - lo) * scale;
    let max = (res - 1) as f64;
    let (u, du_dx) = if u < 0.0 {
        (0.0, 0.0)
    } else if u > max {
        (max, 0.0)
    } else {
        (u, scale)
    };
    let i0 = (u.floor() as usize).min(res - 2);
    AxisCoord {
        i0,
        w: u - i0 as f64,
        du_dx,
    }
}

/// Intermediate values of one field lookup, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct FieldSample {
    pub coords: [[AxisCoord; 2]; 6],
    /// Interpolated feature of each plane, `6 × d`.
    pub plane_features: Vec<f64>,
    pub feature: Vec<f64>,
}

pub(crate) fn bilinear(plane: &FeaturePlane, ca: &AxisCoord, cb: &AxisCoord, out: &mut [f64]) {
    let (i, j) = (ca.i0, cb.i0);
    let (wa, wb) = (ca.w, cb.w);
    let v00 = plane.cell(i, j);
    let v01 = plane.cell(i, j + 1);
    let v10 = plane.cell(i + 1, j);
    let v11 = plane.cell(i + 1, j + 1);
    for c in 0..plane.feature_dim {
        out[c] = (1.0 - wa) * ((1.0 - wb) * v00[c] + wb * v01[c]) + wa * ((1.0 - wb) * v10[c] + wb * v11[c]);
    }
}

pub(crate) fn sample_traced(field: &DeformationField, mu: &Vector3<f64>, t: f64) -> FieldSample {
    let d = field.feature_dim();
    let pos = [mu.x, mu.y, mu.z, t];
    let mut coords = [[AxisCoord { i0: 0, w: 0.0, du_dx: 0.0 }; 2]; 6];
    let mut plane_features = vec![0.0; 6 * d];
    let mut feature = vec![1.0; d];
    for (k, plane) in field.planes.iter().enumerate() {
        let (a, b) = plane.axes.axes();
        let (lo_a, hi_a) = field.bounds.range(a);
        let (lo_b, hi_b) = field.bounds.range(b);
        let ca = axis_coord(pos[a], lo_a, hi_a, plane.res[0]);
        let cb = axis_coord(pos[b], lo_b, hi_b, plane.res[1]);
        coords[k] = [ca, cb];
        let slot = &mut plane_features[k * d..(k + 1) * d];
        bilinear(plane, &ca, &cb, slot);
        for (f, v) in feature.iter_mut().zip(slot.iter()) {
            *f *= v;
        }
    }
    FieldSample {
        coords,
        plane_features,
        feature,
    }
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(LgsError::invalid_argument(format!("time {t} outside [0, 1]")))
    }
}

/// Feature `f = E(μ, t)`: product over the six planes of bilinear lookups.
/// Coordinates outside the bounds clamp to the border cells.
pub fn sample_field(field: &DeformationField, mu: &Vector3<f64>, t: f64) -> Result<Vec<f64>> {
    field.bounds.validate()?;
    check_time(t)?;
    Ok(sample_traced(field, mu, t).feature)
}

/// Activations of one MLP evaluation: `inputs[k]` feeds layer `k`, `outputs`
/// is the raw last-layer result.
#[derive(Debug, Clone)]
pub(crate) struct MlpTrace {
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
}

pub(crate) fn mlp_traced(mlp: &TinyMlp, f: &[f64]) -> MlpTrace {
    let mut inputs = Vec::with_capacity(mlp.layers.len());
    let mut x = f.to_vec();
    let last = mlp.layers.len() - 1;
    for (k, layer) in mlp.layers.iter().enumerate() {
        let mut y = Vec::with_capacity(layer.rows);
        layer.apply(&x, &mut y);
        if k != last {
            y.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        inputs.push(std::mem::replace(&mut x, y));
    }
    MlpTrace { inputs, outputs: x }
}

/// `(Δμ, Δq, Δs) = F(f)`.
pub fn mlp_forward(mlp: &TinyMlp, f: &[f64]) -> Result<Deformation> {
    if mlp.layers.is_empty() || f.len() != mlp.input_dim() {
        return Err(LgsError::invalid_argument(format!(
            "mlp expects {} inputs, got {}",
            mlp.input_dim(),
            f.len()
        )));
    }
    if mlp.layers.last().map(|l| l.rows) != Some(MLP_OUTPUTS) {
        return Err(LgsError::invalid_argument("mlp output dim must be 10"));
    }
    Ok(Deformation::from_outputs(&mlp_traced(mlp, f).outputs))
}

/// Applies one deformation: `μ' = μ + Δμ`, `q' = normalize(q + Δq)`,
/// `s' = max(s + Δs, SCALE_FLOOR)`. Opacity and SH are copied.
/// `-0.0` offsets count as zero.
pub fn apply_deformation(g: &Gaussian, d: &Deformation) -> Result<Gaussian> {
    // A zero Δq leaves the stored rotation untouched; renormalizing would
    // perturb its last bits.
    let q = if d.d_rotation == [0.0; 4] {
        g.rotation
    } else {
        let mut q = g.rotation;
        for (v, dv) in q.iter_mut().zip(d.d_rotation) {
            *v += dv;
        }
        crate::scene::normalize_quat(&q)
            .map_err(|_| LgsError::invalid_state("deformed rotation has zero norm"))?
    };
    Ok(Gaussian {
        center: g.center + d.d_center,
        rotation: q,
        scale: (g.scale + d.d_scale).map(|v| v.max(SCALE_FLOOR)),
        opacity: g.opacity,
        sh: g.sh.clone(),
    })
}

/// Deforms every Gaussian at time `t`, returning the deformed cloud (same
/// order) and each Gaussian's raw `(Δμ, Δq, Δs)`.
pub fn deform_cloud(
    cloud: &GaussianCloud,
    field: &DeformationField,
    t: f64,
) -> Result<(GaussianCloud, Vec<Deformation>)> {
    field.bounds.validate()?;
    check_time(t)?;
    if field.mlp.input_dim() != field.feature_dim() {
        return Err(LgsError::invalid_argument("mlp input dim does not match feature_dim"));
    }
    let results: Vec<Result<(Gaussian, Deformation)>> = cloud
        .gaussians
        .par_iter()
        .map(|g| {
            let sample = sample_traced(field, &g.center, t);
            let d = Deformation::from_outputs(&mlp_traced(&field.mlp, &sample.feature).outputs);
            Ok((apply_deformation(g, &d)?, d))
        })
        .collect();
    let mut gaussians = Vec::with_capacity(cloud.len());
    let mut record = Vec::with_capacity(cloud.len());
    for r in results {
        let (g, d) = r?;
        gaussians.push(g);
        record.push(d);
    }
    Ok((
        GaussianCloud {
            sh_degree: cloud.sh_degree,
            gaussians,
        },
        record,
    ))
}

/// Seeded field: plane values uniform in `[-1e-4, 1e-4]`, hidden layers with
/// uniform fan-in scaling, and a zeroed output layer so the initial
/// deformation is exactly zero.
pub fn init_field(config: &FieldConfig, seed: u64) -> Result<DeformationField> {
    if config.resolution.iter().any(|&r| r < 2) {
        return Err(LgsError::invalid_argument("field resolutions must be at least 2"));
    }
    if config.feature_dim == 0 || config.hidden_width == 0 {
        return Err(LgsError::invalid_argument("feature_dim and hidden_width must be positive"));
    }
    config.bounds.validate().map_err(|e| LgsError::invalid_argument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planes = PlaneAxes::ALL
        .iter()
        .map(|&axes| {
            let (a, b) = axes.axes();
            let res = [config.resolution[a], config.resolution[b]];
            let values = (0..res[0] * res[1] * config.feature_dim)
                .map(|_| rng.random_range(-1e-4..=1e-4))
                .collect();
            FeaturePlane {
                axes,
                res,
                feature_dim: config.feature_dim,
                values,
            }
        })
        .collect();
    let mut layers = Vec::with_capacity(config.hidden_layers + 1);
    let mut width = config.feature_dim;
    for _ in 0..config.hidden_layers {
        let bound = 1.0 / (width as f64).sqrt();
        let rows = config.hidden_width;
        layers.push(Dense {
            rows,
            cols: width,
            weights: (0..rows * width).map(|_| rng.random_range(-bound..=bound)).collect(),
            bias: (0..rows).map(|_| rng.random_range(-bound..=bound)).collect(),
        });
        width = rows;
    }
    layers.push(Dense::zeros(MLP_OUTPUTS, width));
    Ok(DeformationField {
        planes,
        bounds: config.bounds,
        mlp: TinyMlp { layers },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> FieldConfig {
        FieldConfig {
            resolution: [5, 4, 6, 7],
            feature_dim: 3,
            hidden_width: 8,
            hidden_layers: 2,
            bounds: Bounds::cube(1.0),
        }
    }

    fn randomized(seed: u64) -> DeformationField {
        let mut field = init_field(&small_config(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for p in &mut field.planes {
            p.values.iter_mut().for_each(|v| *v = rng.random_range(0.2..1.5));
        }
        for l in &mut field.mlp.layers {
            l.weights.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
            l.bias.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
        }
        field
    }

    /// Four-corner bilinear lookup written out from scratch.
    fn oracle_sample(field: &DeformationField, mu: &Vector3<f64>, t: f64) -> Vec<f64> {
        let d = field.feature_dim();
        let pos = [mu.x, mu.y, mu.z, t];
        let lo = [field.bounds.min.x, field.bounds.min.y, field.bounds.min.z, field.bounds.time[0]];
        let hi = [field.bounds.max.x, field.bounds.max.y, field.bounds.max.z, field.bounds.time[1]];
        let mut out = vec![1.0; d];
        for plane in &field.planes {
            let (a, b) = plane.axes.axes();
            let ua = ((pos[a] - lo[a]) / (hi[a] - lo[a]) * (plane.res[0] - 1) as f64)
                .clamp(0.0, (plane.res[0] - 1) as f64);
            let ub = ((pos[b] - lo[b]) / (hi[b] - lo[b]) * (plane.res[1] - 1) as f64)
                .clamp(0.0, (plane.res[1] - 1) as f64);
            let ia = (ua.floor() as usize).min(plane.res[0] - 2);
            let ib = (ub.floor() as usize).min(plane.res[1] - 2);
            let fa = ua - ia as f64;
            let fb = ub - ib as f64;
            for c in 0..d {
                let mut acc = 0.0;
                for (di, wa) in [(0, 1.0 - fa), (1, fa)] {
                    for (dj, wb) in [(0, 1.0 - fb), (1, fb)] {
                        let idx = ((ia + di) * plane.res[1] + ib + dj) * d + c;
                        acc += wa * wb * plane.values[idx];
                    }
                }
                out[c] *= acc;
            }
        }
        out
    }

    fn oracle_mlp(mlp: &TinyMlp, f: &[f64]) -> Vec<f64> {
        let mut x = f.to_vec();
        for (k, l) in mlp.layers.iter().enumerate() {
            let mut y = vec![0.0; l.rows];
            for r in 0..l.rows {
                let mut s = l.bias[r];
                for c in 0..l.cols {
                    s += l.weights[r * l.cols + c] * x[c];
                }
                y[r] = if k + 1 < mlp.layers.len() { s.max(0.0) } else { s };
            }
            x = y;
        }
        x
    }

    #[test]
    fn constant_planes_give_sixth_power() {
        let mut field = init_field(&small_config(), 1).unwrap();
        for p in &mut field.planes {
            p.values.iter_mut().for_each(|v| *v = 0.9);
        }
        let f = sample_field(&field, &Vector3::new(0.3, -0.7, 0.1), 0.42).unwrap();
        for v in f {
            assert!((v - 0.9f64.powi(6)).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_node_lookup_is_product_of_nodes() {
        let field = randomized(2);
        // Node (2, 1, 3, 4) of resolutions (5, 4, 6, 7) over [-1, 1]³ × [0, 1].
        let node = [2usize, 1, 3, 4];
        let res = field.resolution();
        let mu = Vector3::new(
            -1.0 + 2.0 * node[0] as f64 / (res[0] - 1) as f64,
            -1.0 + 2.0 * node[1] as f64 / (res[1] - 1) as f64,
            -1.0 + 2.0 * node[2] as f64 / (res[2] - 1) as f64,
        );
        let t = node[3] as f64 / (res[3] - 1) as f64;
        let f = sample_field(&field, &mu, t).unwrap();
        let mut want = vec![1.0; 3];
        for p in &field.planes {
            let (a, b) = p.axes.axes();
            let cell = p.cell(node[a], node[b]);
            for c in 0..3 {
                want[c] *= cell[c];
            }
        }
        for c in 0..3 {
            assert!((f[c] - want[c]).abs() < 1e-12 * want[c].abs().max(1.0));
        }
    }

    #[test]
    fn random_lookups_match_bilinear_oracle() {
        let field = randomized(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let mu = Vector3::new(
                rng.random_range(-1.3..1.3),
                rng.random_range(-1.3..1.3),
                rng.random_range(-1.3..1.3),
            );
            let t = rng.random_range(0.0..=1.0);
            let got = sample_field(&field, &mu, t).unwrap();
            let want = oracle_sample(&field, &mu, t);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn plane_order_does_not_matter() {
        let field = randomized(5);
        let mut reversed = field.clone();
        reversed.planes.reverse();
        let mu = Vector3::new(0.1, 0.2, -0.3);
        let a = sample_traced(&field, &mu, 0.3).feature;
        let b = sample_traced(&reversed, &mu, 0.3).feature;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
        }
    }

    #[test]
    fn lookup_is_lipschitz() {
        let field = randomized(6);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // Each plane value ≤ 1.5 and each axis has at most 6 cells per 2 units,
        // so one plane changes by ≤ 1.5·2·(5/2)·δ and the product by ≤ 6·1.5⁵ of that.
        let bound = 6.0 * 1.5f64.powi(5) * 1.5 * 2.0 * 2.5;
        for _ in 0..100 {
            let mu = Vector3::new(
                rng.random_range(-0.9..0.9),
                rng.random_range(-0.9..0.9),
                rng.random_range(-0.9..0.9),
            );
            let delta = Vector3::new(1e-6, -2e-6, 1.5e-6);
            let a = sample_field(&field, &mu, 0.5).unwrap();
            let b = sample_field(&field, &(mu + delta), 0.5).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= bound * delta.norm());
            }
        }
    }

    #[test]
    fn degenerate_bounds_are_invalid_state() {
        let mut field = randomized(9);
        field.bounds.max.x = field.bounds.min.x;
        assert!(matches!(
            sample_field(&field, &Vector3::zeros(), 0.5),
            Err(LgsError::InvalidState(_))
        ));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut mlp = randomized(1).mlp;
        for l in &mut mlp.layers {
            l.weights.iter_mut().for_each(|v| *v = 0.0);
            l.bias.iter_mut().for_each(|v| *v = 0.0);
        }
        let d = mlp_forward(&mlp, &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(d, Deformation::ZERO);
    }

    #[test]
    fn zero_input_gives_head_bias() {
        let mut mlp = TinyMlp {
            layers: vec![Dense::zeros(4, 3), Dense::zeros(MLP_OUTPUTS, 4)],
        };
        for i in 0..3 {
            mlp.layers[0].weights[i * 3 + i] = 1.0;
        }
        let head_bias: Vec<f64> = (0..10).map(|i| i as f64 * 0.1 - 0.3).collect();
        mlp.layers[1].bias = head_bias.clone();
        let d = mlp_forward(&mlp, &[0.0; 3]).unwrap();
        assert_eq!(d, Deformation::from_outputs(&head_bias));
    }

    #[test]
    fn random_network_matches_dense_oracle() {
        let mlp = randomized(12).mlp;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let f: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let got = mlp_traced(&mlp, &f).outputs;
            let want = oracle_mlp(&mlp, &f);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mlp_rejects_wrong_input_length() {
        let mlp = randomized(1).mlp;
        assert!(matches!(mlp_forward(&mlp, &[1.0; 5]), Err(LgsError::InvalidArgument(_))));
    }

    fn cloud(n: usize, seed: u64) -> GaussianCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gaussians = (0..n)
            .map(|_| {
                let mut g = Gaussian::isotropic(
                    Vector3::new(
                        rng.random_range(-0.8..0.8),
                        rng.random_range(-0.8..0.8),
                        rng.random_range(-0.8..0.8),
                    ),
                    rng.random_range(0.05..0.2),
                    rng.random_range(0.1..1.0),
                    1,
                );
                g.rotation = crate::scene::normalize_quat(&[
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    1.0,
                ])
                .unwrap();
                g.sh.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
                g
            })
            .collect();
        GaussianCloud {
            sh_degree: 1,
            gaussians,
        }
    }

    #[test]
    fn initialized_field_is_identity_deformation() {
        let field = init_field(&small_config(), 77).unwrap();
        let c = cloud(10, 1);
        for t in [0.0, 0.37, 1.0] {
            let (out, record) = deform_cloud(&c, &field, t).unwrap();
            assert_eq!(out, c);
            assert!(record.iter().all(|d| *d == Deformation::ZERO));
        }
    }

    #[test]
    fn same_seed_same_field() {
        let a = init_field(&FieldConfig::default(), 42).unwrap();
        let b = init_field(&FieldConfig::default(), 42).unwrap();
        assert_eq!(a, b);
        assert!(a.planes.iter().all(|p| p.values.iter().all(|v| v.abs() <= 1e-4)));
        let c = init_field(&FieldConfig::default(), 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_plane_count() {
        let cfg = FieldConfig {
            resolution: [16, 16, 16, 25],
            feature_dim: 16,
            ..FieldConfig::default()
        };
        let field = init_field(&cfg, 0).unwrap();
        // Three spatial planes of 16·16 cells and three temporal planes of 16·25.
        assert_eq!(field.plane_value_count(), 16 * (16 * 16 * 3 + 16 * 25 * 3));
        assert_eq!(field.plane_value_count(), 31488);
        field.validate().unwrap();
    }

    #[test]
    fn additive_scale_update() {
        let mut field = DeformationField::identity([3, 3, 3, 3], 1, Bounds::cube(1.0));
        // Head bias drives Δs_x = 0.1 regardless of input.
        field.mlp.layers[0].bias[7] = 0.1;
        let mut c = cloud(1, 2);
        c.gaussians[0].scale = Vector3::new(1.0, 1.0, 1.0);
        let (out, _) = deform_cloud(&c, &field, 0.5).unwrap();
        assert_eq!(out.gaussians[0].scale, Vector3::new(1.1, 1.0, 1.0));
        assert_eq!(out.gaussians[0].opacity, c.gaussians[0].opacity);
        assert_eq!(out.gaussians[0].sh, c.gaussians[0].sh);
    }

    #[test]
    fn deform_cloud_composes_lookup_and_network() {
        let field = randomized(21);
        let c = cloud(10, 3);
        let t = 0.61;
        let (out, record) = deform_cloud(&c, &field, t).unwrap();
        for (i, g) in c.gaussians.iter().enumerate() {
            let f = oracle_sample(&field, &g.center, t);
            let o = oracle_mlp(&field.mlp, &f);
            let d = &record[i];
            for k in 0..3 {
                assert!((d.d_center[k] - o[k]).abs() < 1e-12);
                assert!((d.d_scale[k] - o[7 + k]).abs() < 1e-12);
            }
            for k in 0..4 {
                assert!((d.d_rotation[k] - o[3 + k]).abs() < 1e-12);
            }
            let dg = &out.gaussians[i];
            assert!((dg.center - (g.center + d.d_center)).norm() < 1e-15);
            let qn: f64 = dg.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((qn - 1.0).abs() < 1e-12);
            assert!(dg.scale.iter().all(|&s| s >= SCALE_FLOOR));
            assert_eq!(dg.opacity, g.opacity);
            assert_eq!(dg.sh, g.sh);
        }
    }

    #[test]
    fn time_outside_unit_interval_rejected() {
        let field = randomized(1);
        assert!(deform_cloud(&cloud(1, 1), &field, 1.5).is_err());
        assert!(sample_field(&field, &Vector3::zeros(), -0.1).is_err());
    }
}
