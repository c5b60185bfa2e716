//! Flat per-group views of a scene's trainable parameters.

use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{LgsError, Result};
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Centers,
    Rotations,
    Scales,
    Opacities,
    Sh,
    Planes,
    Mlp,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::Centers,
        ParamGroup::Rotations,
        ParamGroup::Scales,
        ParamGroup::Opacities,
        ParamGroup::Sh,
        ParamGroup::Planes,
        ParamGroup::Mlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Centers => "centers",
            ParamGroup::Rotations => "rotations",
            ParamGroup::Scales => "scales",
            ParamGroup::Opacities => "opacities",
            ParamGroup::Sh => "sh",
            ParamGroup::Planes => "planes",
            ParamGroup::Mlp => "mlp",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameter count of each group, in [`ParamGroup::ALL`] order.
pub fn group_sizes(scene: &Scene) -> [usize; 7] {
    let n = scene.cloud.len();
    [
        3 * n,
        4 * n,
        3 * n,
        n,
        scene.cloud.gaussians.iter().map(|g| g.sh.len()).sum(),
        scene.field.plane_value_count(),
        scene.field.mlp.parameter_count(),
    ]
}

/// Gradients shaped like the flattened scene parameters.
///
/// Layouts: centers/rotations/scales are per-Gaussian consecutive components,
/// SH is per-Gaussian coefficient blocks, planes are concatenated in plane
/// order, and each MLP layer contributes its weights followed by its biases.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    groups: [Vec<f64>; 7],
}

impl GradientSet {
    pub fn zeros_like(scene: &Scene) -> Self {
        Self {
            groups: group_sizes(scene).map(|n| vec![0.0; n]),
        }
    }

    pub fn group(&self, g: ParamGroup) -> &[f64] {
        &self.groups[g.slot()]
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut [f64] {
        &mut self.groups[g.slot()]
    }

    pub fn add_scaled(&mut self, other: &GradientSet, k: f64) -> Result<()> {
        for (a, b) in self.groups.iter_mut().zip(&other.groups) {
            if a.len() != b.len() {
                return Err(LgsError::invalid_state("gradient sets have different shapes"));
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += k * y;
            }
        }
        Ok(())
    }

    /// First group containing a non-finite value.
    pub fn non_finite_group(&self) -> Option<ParamGroup> {
        ParamGroup::ALL
            .into_iter()
            .find(|&g| !self.group(g).iter().all(|v| v.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.groups.iter().flatten().all(|&v| v == 0.0)
    }
}

/// Copies one parameter group out of the scene in gradient layout.
pub fn get_params(scene: &Scene, group: ParamGroup) -> Vec<f64> {
    let gs = &scene.cloud.gaussians;
    match group {
        ParamGroup::Centers => gs.iter().flat_map(|g| g.center.iter().copied().collect::<Vec<_>>()).collect(),
        ParamGroup::Rotations => gs.iter().flat_map(|g| g.rotation).collect(),
        ParamGroup::Scales => gs.iter().flat_map(|g| g.scale.iter().copied().collect::<Vec<_>>()).collect(),
        ParamGroup::Opacities => gs.iter().map(|g| g.opacity).collect(),
        ParamGroup::Sh => gs.iter().flat_map(|g| g.sh.iter().copied()).collect(),
        ParamGroup::Planes => scene.field.planes.iter().flat_map(|p| p.values.iter().copied()).collect(),
        ParamGroup::Mlp => scene
            .field
            .mlp
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect(),
    }
}

/// Writes one parameter group back; `values` must have the group's length.
pub fn set_params(scene: &mut Scene, group: ParamGroup, values: &[f64]) -> Result<()> {
    if values.len() != group_sizes(scene)[group.slot()] {
        return Err(LgsError::invalid_argument(format!(
            "group {group} expects {} values, got {}",
            group_sizes(scene)[group.slot()],
            values.len()
        )));
    }
    let gs = &mut scene.cloud.gaussians;
    match group {
        ParamGroup::Centers => gs
            .iter_mut()
            .zip(values.chunks_exact(3))
            .for_each(|(g, v)| g.center.copy_from_slice(v)),
        ParamGroup::Rotations => gs
            .iter_mut()
            .zip(values.chunks_exact(4))
            .for_each(|(g, v)| g.rotation.copy_from_slice(v)),
        ParamGroup::Scales => gs
            .iter_mut()
            .zip(values.chunks_exact(3))
            .for_each(|(g, v)| g.scale.copy_from_slice(v)),
        ParamGroup::Opacities => gs.iter_mut().zip(values).for_each(|(g, &v)| g.opacity = v),
        ParamGroup::Sh => {
            let mut rest = values;
            for g in gs.iter_mut() {
                let (head, tail) = rest.split_at(g.sh.len());
                g.sh.copy_from_slice(head);
                rest = tail;
            }
        }
        ParamGroup::Planes => {
            let mut rest = values;
            for p in &mut scene.field.planes {
                let (head, tail) = rest.split_at(p.values.len());
                p.values.copy_from_slice(head);
                rest = tail;
            }
        }
        ParamGroup::Mlp => {
            let mut rest = values;
            for l in &mut scene.field.mlp.layers {
                let (w, tail) = rest.split_at(l.weights.len());
                let (b, tail) = tail.split_at(l.bias.len());
                l.weights.copy_from_slice(w);
                l.bias.copy_from_slice(b);
                rest = tail;
            }
        }
    }
    Ok(())
}

/// Hash of every parameter bit pattern and shape; detects any change to the
/// scene after a forward pass was recorded.
pub fn fingerprint(scene: &Scene) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    scene.cloud.sh_degree.hash(&mut h);
    scene.field.resolution().hash(&mut h);
    scene.field.feature_dim().hash(&mut h);
    for l in &scene.field.mlp.layers {
        (l.rows, l.cols).hash(&mut h);
    }
    let b = &scene.field.bounds;
    for v in b.min.iter().chain(b.max.iter()).chain(&b.time) {
        v.to_bits().hash(&mut h);
    }
    for g in ParamGroup::ALL {
        let values = get_params(scene, g);
        values.len().hash(&mut h);
        for v in values {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}
