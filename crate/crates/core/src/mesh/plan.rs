use serde::{Deserialize, Serialize};

use super::{analyze, fill_holes, remove_small_components, smooth, weld_vertices};
use super::{ManufacturabilityReport, MeshError, TriangleMesh};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothingParams {
    /// Shrinking step, in (0, 1].
    pub lambda: f64,
    /// Inflating step, in [-1, 0]; slightly larger in magnitude than
    /// `lambda` to compensate shrinkage.
    pub mu: f64,
    pub iterations: usize,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        Self { lambda: 0.5, mu: -0.53, iterations: 0 }
    }
}

/// Post-processing recipe applied by [`apply_plan`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepairPlan {
    /// mm
    pub weld_epsilon: f64,
    /// Components smaller than this fraction of all triangles are dropped.
    pub component_min_fraction: f64,
    pub fill_holes: bool,
    pub smoothing: SmoothingParams,
}

impl Default for RepairPlan {
    fn default() -> Self {
        Self { weld_epsilon: 1e-5, component_min_fraction: 0.02, fill_holes: true, smoothing: SmoothingParams::default() }
    }
}

impl RepairPlan {
    pub fn validate(&self) -> Result<(), MeshError> {
        let bad = |msg: String| Err(MeshError::InvalidPlan(msg));
        if !(self.weld_epsilon.is_finite() && self.weld_epsilon >= 0.0) {
            return bad(format!("weld_epsilon {} must be finite and >= 0", self.weld_epsilon));
        }
        if !(0.0..1.0).contains(&self.component_min_fraction) {
            return bad(format!("component_min_fraction {} must be in [0, 1)", self.component_min_fraction));
        }
        let s = &self.smoothing;
        if !(s.lambda > 0.0 && s.lambda <= 1.0) {
            return bad(format!("smoothing.lambda {} must be in (0, 1]", s.lambda));
        }
        if !(-1.0..=0.0).contains(&s.mu) {
            return bad(format!("smoothing.mu {} must be in [-1, 0]", s.mu));
        }
        Ok(())
    }
}

/// Weld, drop small fragments, fill holes, smooth, then analyze, in that
/// fixed order.
pub fn apply_plan(mesh: &TriangleMesh, plan: &RepairPlan) -> Result<(TriangleMesh, ManufacturabilityReport), MeshError> {
    plan.validate()?;
    mesh.validate()?;
    let mut out = weld_vertices(mesh, plan.weld_epsilon);
    out = remove_small_components(&out, plan.component_min_fraction);
    if plan.fill_holes {
        out = fill_holes(&out)?;
    }
    let s = plan.smoothing;
    out = smooth(&out, s.lambda, s.mu, s.iterations);
    let report = analyze(&out);
    Ok((out, report))
}
