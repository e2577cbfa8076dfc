//! Finite-difference audit of the analytic cost gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cost_collision, cost_feasibility, cost_smoothness, free_range, total_cost, CostWeights, OptimizeError};
use crate::bspline::BSplineTrajectory;
use crate::geometry::Vec3;
use crate::mapping::{MapConfig, OccupancyMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub instances: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            seed: 0,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermAudit {
    pub term: String,
    pub max_relative_error: f64,
    /// Control points compared.
    pub checked: usize,
    /// Control points skipped next to a non-differentiable point.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub instances: usize,
    pub terms: Vec<TermAudit>,
    pub passed: bool,
}

/// A random trajectory threading a random cluttered map.
pub fn random_instance(rng: &mut impl Rng) -> (BSplineTrajectory, OccupancyMap) {
    let config = MapConfig {
        resolution: 0.2,
        size: [60, 60, 60],
        truncation_radius: 2.0,
    };
    let mut map = OccupancyMap::new(config, &Vec3::zeros()).expect("valid map config");
    let mut surfaces = Vec::new();
    for _ in 0..rng.random_range(4..10) {
        let c = Vec3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
        let h = Vec3::new(rng.random_range(0.2..1.2), rng.random_range(0.2..1.2), rng.random_range(0.2..1.2));
        let lo = map.voxel_index(&(c - h));
        let hi = map.voxel_index(&(c + h));
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    map.set_occupied([x, y, z]);
                }
            }
        }
        surfaces.push((c, h));
    }
    map.recompute_distance_field();

    let n = rng.random_range(10..26);
    let dt = rng.random_range(0.15..0.5);
    let mut p = Vec3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        // Bias some points toward an obstacle face so the barrier is active.
        if rng.random_bool(0.3) {
            let (c, h) = surfaces[rng.random_range(0..surfaces.len())];
            let axis = rng.random_range(0..3);
            let mut q = c;
            q[axis] += h[axis] + rng.random_range(-0.1..0.6);
            p = q;
        } else {
            let step = rng.random_range(0.2..1.4);
            let dir = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            p += dir.normalize() * step;
            p = p.map(|v| v.clamp(-5.0, 5.0));
        }
        pts.push(p);
    }
    (BSplineTrajectory::cubic(pts, dt, 0.0).expect("valid trajectory"), map)
}

fn fd_step(p: f64) -> f64 {
    1e-6 * p.abs().max(1.0)
}

/// Whether a central-difference stencil around `p` along `axis` stays inside
/// one trilinear interpolation cell.
fn stencil_in_cell(map: &OccupancyMap, p: &Vec3, axis: usize, h: f64) -> bool {
    let res = map.resolution();
    let cell = |v: f64| ((v / res) - 0.5).floor();
    cell(p[axis] - h) == cell(p[axis] + h)
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|b| b * b).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

struct Term<'a> {
    name: &'static str,
    eval: Box<dyn Fn(&BSplineTrajectory) -> Result<(f64, Vec<f64>), OptimizeError> + 'a>,
    uses_map: bool,
}

/// Compares each cost term's analytic gradient (free control points only)
/// against central finite differences.
pub fn audit_instance(
    traj: &BSplineTrajectory,
    map: &OccupancyMap,
    weights: &CostWeights,
) -> Result<Vec<TermAudit>, OptimizeError> {
    let free = free_range(traj);
    let flatten = |g: Vec<Vec3>| -> Vec<f64> { free.clone().flat_map(|i| [g[i].x, g[i].y, g[i].z]).collect() };
    let terms = [
        Term {
            name: "smoothness",
            eval: Box::new(|t| cost_smoothness(t).map(|(v, g)| (v, flatten(g)))),
            uses_map: false,
        },
        Term {
            name: "collision",
            eval: Box::new(|t| cost_collision(t, map, weights.d_safe).map(|(v, g)| (v, flatten(g)))),
            uses_map: true,
        },
        Term {
            name: "feasibility",
            eval: Box::new(|t| cost_feasibility(t, weights.v_max, weights.a_max).map(|(v, g)| (v, flatten(g)))),
            uses_map: false,
        },
        Term {
            name: "total",
            eval: Box::new(|t| total_cost(t, weights, map).map(|r| (r.total, r.gradient))),
            uses_map: true,
        },
    ];

    // Control points whose collision term is not differentiable under the
    // stencil: near the barrier kink or straddling an interpolation cell.
    let kink_band = map.resolution() / 10.0;
    let mut excluded = vec![false; free.len()];
    for (j, i) in free.clone().enumerate() {
        let p = traj.control_points()[i];
        let q = map.query_distance(&p)?;
        if q.outside {
            continue;
        }
        let near_kink = (q.distance - weights.d_safe).abs() < kink_band;
        let straddles = (0..3).any(|a| !stencil_in_cell(map, &p, a, fd_step(p[a])));
        excluded[j] = near_kink || straddles;
    }

    let mut out = Vec::with_capacity(terms.len());
    let mut probe = traj.clone();
    for term in &terms {
        let (_, analytic) = (term.eval)(traj)?;
        let mut a_kept = Vec::new();
        let mut n_kept = Vec::new();
        let (mut checked, mut skipped) = (0, 0);
        for (j, i) in free.clone().enumerate() {
            if term.uses_map && excluded[j] {
                skipped += 1;
                continue;
            }
            checked += 1;
            for axis in 0..3 {
                let x0 = traj.control_points()[i][axis];
                let h = fd_step(x0);
                probe.control_points_mut()[i][axis] = x0 + h;
                let (fp, _) = (term.eval)(&probe)?;
                probe.control_points_mut()[i][axis] = x0 - h;
                let (fm, _) = (term.eval)(&probe)?;
                probe.control_points_mut()[i][axis] = x0;
                n_kept.push((fp - fm) / (2.0 * h));
                a_kept.push(analytic[3 * j + axis]);
            }
        }
        out.push(TermAudit {
            term: term.name.to_string(),
            max_relative_error: relative_error(&a_kept, &n_kept),
            checked,
            skipped,
        });
    }
    Ok(out)
}

/// Audits `config.instances` random instances and keeps the worst error per
/// term.
pub fn run_audit(config: &AuditConfig, weights: &CostWeights) -> Result<AuditReport, OptimizeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut terms: Vec<TermAudit> = Vec::new();
    for _ in 0..config.instances {
        let (traj, map) = random_instance(&mut rng);
        for t in audit_instance(&traj, &map, weights)? {
            match terms.iter_mut().find(|x| x.term == t.term) {
                Some(acc) => {
                    acc.max_relative_error = acc.max_relative_error.max(t.max_relative_error);
                    acc.checked += t.checked;
                    acc.skipped += t.skipped;
                }
                None => terms.push(t),
            }
        }
    }
    let passed = terms.iter().all(|t| t.max_relative_error < config.tolerance);
    Ok(AuditReport {
        instances: config.instances,
        terms,
        passed,
    })
}
