//! The three compression passes applied to a trained teacher scene:
//!
//! * deformation-aware pruning (DAP): per-Gaussian deformation scores split the
//!   cloud into stable (SG) and deformed (DG) classes, each pruned by its own
//!   importance score;
//! * Gaussian-attribute pruning (GAP): truncation of high-degree SH coefficients;
//! * feature field condensation (FFC): block-mean pooling of every feature plane.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deformation::{DeformationField, FeaturePlane, SCALE_FLOOR};
use crate::error::{LgsError, Result};
use crate::io::scene_file::{size_breakdown, SizeReport};
use crate::render::render_dynamic;
use crate::scene::{sh_coeff_count, volume_unchecked, GaussianCloud, Scene, SceneDataset, MAX_SH_DEGREE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionConfig {
    /// Threshold on max-normalized deformation scores separating SG from DG.
    pub h: f64,
    /// Exponent of the normalized volume term.
    pub beta: f64,
    pub prune_ratio_sg: f64,
    pub prune_ratio_dg: f64,
    /// Highest SH degree kept by attribute pruning.
    pub sh_degree: u8,
    /// Color channels per SH basis function.
    pub n_rgb: usize,
    /// Pooling rate along `(x, y, z, t)`.
    pub pool_rates: [usize; 4],
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            h: 0.5,
            beta: 0.1,
            prune_ratio_sg: 0.7,
            prune_ratio_dg: 0.3,
            sh_degree: 2,
            n_rgb: 3,
            pool_rates: [4, 4, 4, 4],
        }
    }
}

impl CompressionConfig {
    /// Leaves every scene untouched.
    pub fn identity() -> Self {
        Self {
            prune_ratio_sg: 0.0,
            prune_ratio_dg: 0.0,
            sh_degree: MAX_SH_DEGREE,
            pool_rates: [1; 4],
            ..Self::default()
        }
    }

    pub fn without_dap(&self) -> Self {
        Self {
            prune_ratio_sg: 0.0,
            prune_ratio_dg: 0.0,
            ..self.clone()
        }
    }

    pub fn without_gap(&self) -> Self {
        Self {
            sh_degree: MAX_SH_DEGREE,
            ..self.clone()
        }
    }

    pub fn without_ffc(&self) -> Self {
        Self {
            pool_rates: [1; 4],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.h) {
            return Err(LgsError::invalid_argument(format!("h = {} outside [0, 1]", self.h)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(LgsError::invalid_argument("beta must be positive"));
        }
        check_ratio(self.prune_ratio_sg)?;
        check_ratio(self.prune_ratio_dg)?;
        if self.sh_degree > MAX_SH_DEGREE {
            return Err(LgsError::invalid_argument(format!(
                "sh_degree {} exceeds {MAX_SH_DEGREE}",
                self.sh_degree
            )));
        }
        if self.n_rgb != 3 {
            return Err(LgsError::invalid_argument("n_rgb must be 3"));
        }
        if self.pool_rates.contains(&0) {
            return Err(LgsError::invalid_argument("pool rates must be positive"));
        }
        Ok(())
    }
}

fn check_ratio(r: f64) -> Result<()> {
    if (0.0..1.0).contains(&r) {
        Ok(())
    } else {
        Err(LgsError::invalid_argument(format!("prune ratio {r} outside [0, 1)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GaussianClass {
    /// Stable: normalized deformation score ≤ h.
    SG,
    /// Deformed: normalized deformation score > h.
    DG,
}

/// Per-Gaussian hit totals and volume change accumulated over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionStats {
    /// `H_i`: pixels the Gaussian was composited into, summed over frames.
    pub hits: Vec<u64>,
    /// `ΔV_i = Σ_t |V(s_i) − V(s_i')|`.
    pub volume_change: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub hits: Vec<u64>,
    pub volume_change: Vec<f64>,
    /// `d_i = H_i · ΔV_i`.
    pub deformation: Vec<f64>,
    /// `d_i / max d`, all zero when no Gaussian deforms.
    pub normalized: Vec<f64>,
    pub importance: Vec<f64>,
    pub class: Vec<GaussianClass>,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.deformation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deformation.is_empty()
    }
}

/// Renders the scene at every frame and accumulates hits and volume change.
/// Frames are processed in parallel and reduced in frame order.
pub fn contribution_stats(scene: &Scene, dataset: &SceneDataset) -> Result<ContributionStats> {
    if dataset.frames.is_empty() {
        return Err(LgsError::invalid_argument("dataset has no frames"));
    }
    let volumes: Vec<f64> = scene.cloud.gaussians.iter().map(|g| volume_unchecked(&g.scale)).collect();
    let per_frame: Vec<Result<(Vec<u32>, Vec<f64>)>> = dataset
        .frames
        .par_iter()
        .map(|frame| {
            let (out, record) = render_dynamic(scene, &frame.camera, frame.time)?;
            let dv = scene
                .cloud
                .gaussians
                .iter()
                .zip(&record)
                .zip(&volumes)
                .map(|((g, d), &v)| {
                    let s = (g.scale + d.d_scale).map(|x| x.max(SCALE_FLOOR));
                    (v - volume_unchecked(&s)).abs()
                })
                .collect();
            Ok((out.hit_counts, dv))
        })
        .collect();
    let n = scene.cloud.len();
    let mut stats = ContributionStats {
        hits: vec![0; n],
        volume_change: vec![0.0; n],
    };
    for r in per_frame {
        let (hits, dv) = r?;
        if hits.len() != n || dv.len() != n {
            return Err(LgsError::invalid_state("per-frame statistics length mismatch"));
        }
        for i in 0..n {
            stats.hits[i] += u64::from(hits[i]);
            stats.volume_change[i] += dv[i];
        }
    }
    Ok(stats)
}

/// `d_i = H_i · ΔV_i`.
pub fn scores_from_stats(stats: &ContributionStats) -> Result<Vec<f64>> {
    if stats.hits.len() != stats.volume_change.len() {
        return Err(LgsError::invalid_state("hit and volume tables differ in length"));
    }
    Ok(stats
        .hits
        .iter()
        .zip(&stats.volume_change)
        .map(|(&h, &dv)| h as f64 * dv)
        .collect())
}

/// Deformation score of every Gaussian over the dataset.
pub fn deformation_scores(scene: &Scene, dataset: &SceneDataset) -> Result<Vec<f64>> {
    let scores = scores_from_stats(&contribution_stats(scene, dataset)?)?;
    if scores.len() != scene.cloud.len() {
        return Err(LgsError::invalid_state("score table does not match cloud"));
    }
    Ok(scores)
}

pub fn normalize_scores(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        scores.iter().map(|&d| d / max).collect()
    } else {
        vec![0.0; scores.len()]
    }
}

/// SG when `d̂ ≤ h`, DG otherwise.
pub fn classify(normalized: &[f64], h: f64) -> Vec<GaussianClass> {
    normalized
        .iter()
        .map(|&d| if d <= h { GaussianClass::SG } else { GaussianClass::DG })
        .collect()
}

/// Nearest-rank 90th percentile of the ascending volumes.
pub fn volume_percentile_90(volumes: &[f64]) -> Option<f64> {
    if volumes.is_empty() {
        return None;
    }
    let mut sorted = volumes.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (0.9 * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Class-wise importance: `H·σ·V_norm` for SG, `H·ΔV·V_norm` for DG, with
/// `V_norm = (V / V_max90)^β`.
pub fn importance_scores(
    cloud: &GaussianCloud,
    stats: &ContributionStats,
    classes: &[GaussianClass],
    beta: f64,
) -> Result<Vec<f64>> {
    let n = cloud.len();
    if stats.hits.len() != n || stats.volume_change.len() != n || classes.len() != n {
        return Err(LgsError::invalid_state("score inputs do not match cloud length"));
    }
    if !(beta > 0.0) {
        return Err(LgsError::invalid_argument("beta must be positive"));
    }
    let volumes: Vec<f64> = cloud.gaussians.iter().map(|g| volume_unchecked(&g.scale)).collect();
    let Some(v90) = volume_percentile_90(&volumes) else {
        return Ok(Vec::new());
    };
    if !(v90 > 0.0) {
        return Err(LgsError::invalid_state("90th-percentile volume is zero"));
    }
    Ok((0..n)
        .map(|i| {
            let h = stats.hits[i] as f64;
            let v_norm = (volumes[i] / v90).powf(beta);
            match classes[i] {
                GaussianClass::SG => h * cloud.gaussians[i].opacity * v_norm,
                GaussianClass::DG => h * stats.volume_change[i] * v_norm,
            }
        })
        .collect())
}

/// Builds the full score table from precomputed statistics.
pub fn score_table_from_stats(
    cloud: &GaussianCloud,
    stats: ContributionStats,
    config: &CompressionConfig,
) -> Result<ScoreTable> {
    let deformation = scores_from_stats(&stats)?;
    let normalized = normalize_scores(&deformation);
    let class = classify(&normalized, config.h);
    let importance = importance_scores(cloud, &stats, &class, config.beta)?;
    Ok(ScoreTable {
        hits: stats.hits,
        volume_change: stats.volume_change,
        deformation,
        normalized,
        importance,
        class,
    })
}

pub fn score_table(scene: &Scene, dataset: &SceneDataset, config: &CompressionConfig) -> Result<ScoreTable> {
    config.validate()?;
    let stats = contribution_stats(scene, dataset)?;
    score_table_from_stats(&scene.cloud, stats, config)
}

/// Old index → new index (`None` when pruned).
pub type IndexMap = Vec<Option<usize>>;

/// Indices removed by class-wise pruning: within each class, the
/// `⌊ρ · |class|⌋` lowest-importance members, lower index first on ties.
pub fn dap_pruned_indices(table: &ScoreTable, ratio_sg: f64, ratio_dg: f64) -> Result<Vec<usize>> {
    check_ratio(ratio_sg)?;
    check_ratio(ratio_dg)?;
    if table.importance.len() != table.class.len() {
        return Err(LgsError::invalid_state("score table columns differ in length"));
    }
    let mut removed = Vec::new();
    for (class, ratio) in [(GaussianClass::SG, ratio_sg), (GaussianClass::DG, ratio_dg)] {
        let mut members: Vec<usize> = (0..table.class.len()).filter(|&i| table.class[i] == class).collect();
        let k = (ratio * members.len() as f64).floor() as usize;
        members.sort_by(|&a, &b| table.importance[a].total_cmp(&table.importance[b]).then(a.cmp(&b)));
        removed.extend_from_slice(&members[..k]);
    }
    removed.sort_unstable();
    Ok(removed)
}

pub fn dap_prune(
    cloud: &GaussianCloud,
    table: &ScoreTable,
    config: &CompressionConfig,
) -> Result<(GaussianCloud, IndexMap)> {
    if table.len() != cloud.len() || table.importance.len() != cloud.len() {
        return Err(LgsError::invalid_state("score table does not match cloud"));
    }
    let removed = dap_pruned_indices(table, config.prune_ratio_sg, config.prune_ratio_dg)?;
    let mut keep = vec![true; cloud.len()];
    for i in removed {
        keep[i] = false;
    }
    let mut map = Vec::with_capacity(cloud.len());
    let mut gaussians = Vec::new();
    for (g, k) in cloud.gaussians.iter().zip(keep) {
        if k {
            map.push(Some(gaussians.len()));
            gaussians.push(g.clone());
        } else {
            map.push(None);
        }
    }
    Ok((
        GaussianCloud {
            sh_degree: cloud.sh_degree,
            gaussians,
        },
        map,
    ))
}

/// Drops SH coefficients of degree above `sh_degree`; the stored degree
/// becomes `min(sh_degree, current)`.
pub fn gap_prune(cloud: &GaussianCloud, sh_degree: u8) -> Result<GaussianCloud> {
    if sh_degree > MAX_SH_DEGREE {
        return Err(LgsError::invalid_argument(format!(
            "sh degree {sh_degree} exceeds {MAX_SH_DEGREE}"
        )));
    }
    if sh_degree >= cloud.sh_degree {
        return Ok(cloud.clone());
    }
    let keep = sh_coeff_count(sh_degree);
    let mut out = cloud.clone();
    out.sh_degree = sh_degree;
    for g in &mut out.gaussians {
        g.sh.truncate(keep);
    }
    Ok(out)
}

fn pool_plane(plane: &FeaturePlane, r1: usize, r2: usize) -> Result<FeaturePlane> {
    if plane.res[0] % r1 != 0 || plane.res[1] % r2 != 0 {
        return Err(LgsError::invalid_argument(format!(
            "pool rates ({r1}, {r2}) do not divide plane {:?} resolution {:?}",
            plane.axes, plane.res
        )));
    }
    let res = [plane.res[0] / r1, plane.res[1] / r2];
    if res[0] < 2 || res[1] < 2 {
        return Err(LgsError::invalid_argument(format!(
            "pooling plane {:?} would leave fewer than 2 cells per axis",
            plane.axes
        )));
    }
    let d = plane.feature_dim;
    let norm = (r1 * r2) as f64;
    let mut out = FeaturePlane::filled(plane.axes, res, d, 0.0);
    for i in 0..res[0] {
        for j in 0..res[1] {
            let cell = out.cell_mut(i, j);
            for di in 0..r1 {
                for dj in 0..r2 {
                    for (acc, v) in cell.iter_mut().zip(plane.cell(i * r1 + di, j * r2 + dj)) {
                        *acc += v;
                    }
                }
            }
            cell.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(out)
}

/// Block-mean pooling of every plane with per-axis rates `(x, y, z, t)`.
/// The MLP and bounds are carried over unchanged.
pub fn ffc_pool(field: &DeformationField, rates: [usize; 4]) -> Result<DeformationField> {
    if rates.contains(&0) {
        return Err(LgsError::invalid_argument("pool rates must be positive"));
    }
    let planes = field
        .planes
        .iter()
        .map(|p| {
            let (a, b) = p.axes.axes();
            pool_plane(p, rates[a], rates[b])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DeformationField {
        planes,
        bounds: field.bounds,
        mlp: field.mlp.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct Compressed {
    pub student: Scene,
    pub table: ScoreTable,
    pub index_map: IndexMap,
    pub before: SizeReport,
    pub after: SizeReport,
}

/// DAP → GAP → FFC.
pub fn compress(scene: &Scene, dataset: &SceneDataset, config: &CompressionConfig) -> Result<Compressed> {
    config.validate()?;
    let table = score_table(scene, dataset, config)?;
    compress_with_table(scene, table, config)
}

/// Same as [`compress`] with a score table computed beforehand.
pub fn compress_with_table(scene: &Scene, table: ScoreTable, config: &CompressionConfig) -> Result<Compressed> {
    config.validate()?;
    let (pruned, index_map) = dap_prune(&scene.cloud, &table, config)?;
    let cloud = gap_prune(&pruned, config.sh_degree)?;
    let field = ffc_pool(&scene.field, config.pool_rates)?;
    let student = Scene { cloud, field };
    Ok(Compressed {
        before: size_breakdown(scene),
        after: size_breakdown(&student),
        student,
        table,
        index_map,
    })
}
