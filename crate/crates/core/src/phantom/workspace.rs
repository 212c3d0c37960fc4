//! Reachable workspace of the tip under the axial and in-plane saddle coils.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::geometry::{concave_hull, P2};
use super::map::InsertionState;
use crate::actuation::{coil_resistance, CoilKind, CoilSpec, MagneticEnvironment};
use crate::error::{invalid, Result};
use crate::ik::{energy_tie_tolerance, equilibrium_candidates, EquilibriumProblem, EquilibriumSearch};
use crate::rod::{FramePose, RodParams};
use crate::Vec3;

/// Neighbour count the concave hull starts from.
const HULL_NEIGHBOURS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct WorkspaceProblem {
    pub rod: RodParams,
    pub base: FramePose,
    pub coils: Vec<CoilSpec>,
    pub env: MagneticEnvironment,
    /// The bending length is the inserted length.
    pub insertion: InsertionState,
    /// Per-coil current magnitude cap, A.
    pub current_cap: f64,
    /// Total Joule power cap, W.
    pub power_cap: f64,
    /// Lattice intervals per axis (even; odd values round down).
    pub grid: usize,
    /// Largest lattice current, A; the lattice does not depend on the caps,
    /// so results for different caps are comparable point by point.
    /// Defaults to the larger rated current of the two swept coils.
    pub lattice_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceSample {
    pub currents: Vec<f64>,
    pub power: f64,
    pub tip: Vec3,
    /// Tip in the base bending plane `(x, z)`, m.
    pub plane: P2,
    /// Angle between base and tip tangents, rad.
    pub bend: f64,
    pub base_force: Vec3,
    pub base_moment: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceRegion {
    pub samples: Vec<WorkspaceSample>,
    /// Counterclockwise boundary in the base bending plane, m.
    pub hull: Vec<P2>,
    pub max_bend: f64,
    pub swept_coils: [usize; 2],
    pub diagnostic: Option<String>,
}

impl WorkspaceRegion {
    pub fn tip_points(&self) -> Vec<Vec3> {
        self.samples.iter().map(|s| s.tip).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("# workspace/1\n");
        let n = self.samples.first().map_or(0, |s| s.currents.len());
        let heads: Vec<String> = (0..n).map(|j| format!("i{j}_a")).collect();
        let _ = writeln!(out, "{},power_w,tip_x_m,tip_y_m,tip_z_m,plane_x_m,plane_z_m,bend_deg", heads.join(","));
        for s in &self.samples {
            let cur: Vec<String> = s.currents.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                cur.join(","),
                s.power,
                s.tip.x,
                s.tip.y,
                s.tip.z,
                s.plane[0],
                s.plane[1],
                s.bend.to_degrees()
            );
        }
        out
    }

    pub fn hull_json(&self) -> serde_json::Value {
        serde_json::json!({
            "schema": "workspace/1",
            "frame": "base bending plane (x, z), m",
            "hull": self.hull,
            "max_bend_deg": self.max_bend.to_degrees(),
            "sample_count": self.samples.len(),
            "diagnostic": self.diagnostic,
        })
    }
}

/// Index of the axial coil and of the saddle whose moment lies closest to
/// the base bending plane (tip x axis).
fn swept_coils(coils: &[CoilSpec]) -> Result<[usize; 2]> {
    let axial = coils.iter().position(|c| c.kind() == CoilKind::Axial);
    let saddle = coils
        .iter()
        .enumerate()
        .filter(|(_, c)| c.kind() == CoilKind::Saddle)
        .max_by(|a, b| a.1.axis().x.abs().total_cmp(&b.1.axis().x.abs()))
        .map(|(i, _)| i);
    match (axial, saddle) {
        (Some(a), Some(s)) => Ok([a, s]),
        _ => Err(invalid("workspace needs an axial and a saddle coil")),
    }
}

/// Sweeps the axial and in-plane saddle currents over a symmetric lattice,
/// keeps the samples within the caps and solves each for its equilibrium
/// (all equally stable branches are kept). The boundary is a concave hull
/// of the tip points in the base bending plane.
pub fn compute_workspace(problem: &WorkspaceProblem) -> Result<WorkspaceRegion> {
    let p = problem;
    if p.grid < 8 {
        return Err(invalid("grid must be >= 8"));
    }
    if !(p.current_cap >= 0.0 && p.power_cap >= 0.0 && p.current_cap.is_finite()) {
        return Err(invalid("caps must be finite and >= 0"));
    }
    let swept = swept_coils(&p.coils)?;
    let length = p.insertion.inserted_length();
    if length <= 0.0 {
        return Err(invalid("workspace needs a positive inserted length"));
    }
    let rod = p.rod.with_free_length(length)?;
    let lattice_max = p
        .lattice_max
        .unwrap_or_else(|| p.coils[swept[0]].current_limit.max(p.coils[swept[1]].current_limit));
    if !(lattice_max > 0.0 && lattice_max.is_finite()) {
        return Err(invalid("lattice_max must be > 0"));
    }
    let half = (p.grid / 2) as i64;
    let delta = lattice_max / half as f64;
    let resistance = p.coils.iter().map(coil_resistance).collect::<Result<Vec<_>>>()?;

    let mut lattice = Vec::new();
    for i in -half..=half {
        for j in -half..=half {
            let mut currents = vec![0.0; p.coils.len()];
            currents[swept[0]] = i as f64 * delta;
            currents[swept[1]] = j as f64 * delta;
            let within = currents.iter().zip(&p.coils).all(|(c, coil)| {
                let cap = p.current_cap.min(coil.current_limit);
                c.abs() <= cap * (1.0 + 1e-12)
            });
            let power: f64 = currents.iter().zip(&resistance).map(|(c, r)| c * c * r).sum();
            if within && power <= p.power_cap {
                lattice.push((currents, power));
            }
        }
    }

    let tie = energy_tie_tolerance(&rod);
    let search = EquilibriumSearch::in_plane();
    let solved: Vec<Vec<WorkspaceSample>> = lattice
        .par_iter()
        .map(|(currents, power)| {
            let eq = EquilibriumProblem {
                rod: &rod,
                base: &p.base,
                coils: &p.coils,
                currents,
                env: &p.env,
                external_tip_force: Vec3::zeros(),
            };
            let found = equilibrium_candidates(&eq, &search).unwrap_or_default();
            let Some(best) = found.first().map(|e| e.energy) else { return Vec::new() };
            found
                .into_iter()
                .filter(|e| e.energy - best <= tie)
                .map(|e| {
                    let tip = e.rod_state.tip().position;
                    let local = p.base.rotation.transpose() * (tip - p.base.origin);
                    WorkspaceSample {
                        currents: currents.clone(),
                        power: *power,
                        tip,
                        plane: [local.x, local.z],
                        bend: e.rod_state.bend_angle(),
                        base_force: e.base_force,
                        base_moment: e.base_moment,
                    }
                })
                .collect()
        })
        .collect();
    let failed = solved.iter().filter(|s| s.is_empty()).count();
    let samples: Vec<WorkspaceSample> = solved.into_iter().flatten().collect();

    let diagnostic = if lattice.is_empty() {
        Some("no lattice point satisfies the current and power caps".to_string())
    } else if samples.is_empty() {
        Some(format!("all {} samples failed to reach equilibrium", lattice.len()))
    } else if failed > 0 {
        Some(format!("{failed} of {} samples failed to reach equilibrium", lattice.len()))
    } else {
        None
    };
    let plane: Vec<P2> = samples.iter().map(|s| s.plane).collect();
    let hull = concave_hull(&plane, HULL_NEIGHBOURS);
    let max_bend = samples.iter().map(|s| s.bend).fold(0.0, f64::max);
    Ok(WorkspaceRegion { samples, hull, max_bend, swept_coils: swept, diagnostic })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actuation::table1_tri_coil;
    use crate::rod::{integrate_forward, FrameLabel};

    fn problem(cap: f64, grid: usize) -> WorkspaceProblem {
        WorkspaceProblem {
            rod: RodParams::table1().with_segment_count(30).unwrap(),
            base: FramePose::identity(FrameLabel::Control),
            coils: table1_tri_coil(),
            env: MagneticEnvironment::default(),
            insertion: InsertionState::new(0.02, 0.03).unwrap(),
            current_cap: cap,
            power_cap: 1.2,
            grid,
            lattice_max: Some(0.3),
        }
    }

    #[test]
    fn zero_cap_is_the_straight_tip() {
        let r = compute_workspace(&problem(0.0, 8)).unwrap();
        assert_eq!(r.samples.len(), 1);
        assert!((r.samples[0].tip - Vec3::new(0.0, 0.0, 0.02)).norm() < 1e-12);
    }

    #[test]
    fn samples_reproduce_and_mirror() {
        let p = problem(0.3, 8);
        let r = compute_workspace(&p).unwrap();
        let rod = p.rod.with_free_length(0.02).unwrap();
        for s in &r.samples {
            let again = integrate_forward(&p.base, &s.base_force, &s.base_moment, &rod).unwrap();
            assert!((again.tip().position - s.tip).norm() < 1e-9);
        }
        for s in &r.samples {
            let mirrored = r.samples.iter().any(|o| (o.plane[0] + s.plane[0]).abs() < 1e-9 && (o.plane[1] - s.plane[1]).abs() < 1e-9);
            assert!(mirrored, "{:?}", s.plane);
        }
        assert!(r.max_bend.to_degrees() > 100.0);
        assert!(r.diagnostic.is_none(), "{:?}", r.diagnostic);
    }

    #[test]
    fn rejects_coarse_grid() {
        assert!(compute_workspace(&problem(0.3, 6)).is_err());
    }
}
