//! Clearance-aware A* guide paths on the occupancy map.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::mapping::{OccupancyMap, VoxelIndex};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuideConfig {
    /// Clearance below which a voxel is impassable (m).
    pub block_distance: f64,
    /// Clearance the search prefers to keep (m).
    pub preferred_clearance: f64,
    /// Extra cost factor at zero clearance, relative to path length.
    pub clearance_weight: f64,
    /// Radius around start and goal exempt from blocking (m).
    pub endpoint_relief: f64,
    pub max_expansions: usize,
}

impl Default for GuideConfig {
    fn default() -> Self {
        Self {
            block_distance: 0.35,
            preferred_clearance: 1.2,
            clearance_weight: 4.0,
            endpoint_relief: 0.6,
            max_expansions: 150_000,
        }
    }
}

#[derive(Copy, Clone, PartialEq)]
struct Node {
    f: f64,
    idx: VoxelIndex,
}

impl Eq for Node {}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Where the segment `from → to` leaves the map window, pulled one voxel
/// inside. Returns `to` when it is already inside.
fn clamp_into_window(map: &OccupancyMap, from: &Vec3, to: &Vec3) -> Vec3 {
    let (lo, hi) = map.bounds();
    let margin = map.resolution();
    let (lo, hi) = (lo.add_scalar(margin), hi.add_scalar(-margin));
    let inside = |p: &Vec3| (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a]);
    if inside(to) {
        return *to;
    }
    let d = to - from;
    let mut t_max: f64 = 1.0;
    for a in 0..3 {
        if d[a] > 0.0 {
            t_max = t_max.min((hi[a] - from[a]) / d[a]);
        } else if d[a] < 0.0 {
            t_max = t_max.min((lo[a] - from[a]) / d[a]);
        }
    }
    from + d * t_max.max(0.0)
}

/// Clearance-weighted 26-connected A* from `start` to `goal`, shortcut to
/// a sparse polyline. Goals beyond the map window are reached by a
/// straight final leg. Falls back to the straight segment when no path is
/// found.
pub fn guide_path(map: &OccupancyMap, start: &Vec3, goal: &Vec3, config: &GuideConfig) -> Vec<Vec3> {
    let straight = vec![*start, *goal];
    if map.is_stale() || (goal - start).norm() < map.resolution() {
        return straight;
    }
    let target = clamp_into_window(map, start, goal);
    let s_idx = map.voxel_index(start);
    let g_idx = map.voxel_index(&target);
    if !map.in_window(s_idx) || !map.in_window(g_idx) {
        return straight;
    }

    let res = map.resolution();
    let pref = config.preferred_clearance;
    let clearance = |idx: VoxelIndex| map.voxel_distance(idx).unwrap_or(map.truncation_radius());
    let relieved = |idx: VoxelIndex| {
        let c = map.voxel_center(idx);
        (c - start).norm() <= config.endpoint_relief || (c - target).norm() <= config.endpoint_relief
    };
    let penalty = |idx: VoxelIndex| 1.0 + config.clearance_weight * ((pref - clearance(idx)).max(0.0) / pref);
    let h = |idx: VoxelIndex| {
        let d = [
            (idx[0] - g_idx[0]) as f64,
            (idx[1] - g_idx[1]) as f64,
            (idx[2] - g_idx[2]) as f64,
        ];
        res * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    };

    let mut g_cost: HashMap<VoxelIndex, (f64, VoxelIndex)> = HashMap::new();
    let mut open = BinaryHeap::new();
    g_cost.insert(s_idx, (0.0, s_idx));
    open.push(Node { f: h(s_idx), idx: s_idx });
    let mut expansions = 0;
    let mut reached = false;
    while let Some(Node { f, idx }) = open.pop() {
        let g = g_cost[&idx].0;
        if f > g + h(idx) + 1e-9 {
            continue;
        }
        if idx == g_idx {
            reached = true;
            break;
        }
        expansions += 1;
        if expansions > config.max_expansions {
            break;
        }
        for dz in -1..=1i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    if dx == 0 && dy == 0 && dz == 0 {
                        continue;
                    }
                    let n = [idx[0] + dx, idx[1] + dy, idx[2] + dz];
                    if !map.in_window(n) {
                        continue;
                    }
                    if (map.is_occupied(n) || clearance(n) < config.block_distance) && !relieved(n) {
                        continue;
                    }
                    let step = res * ((dx * dx + dy * dy + dz * dz) as f64).sqrt();
                    let cand = g + step * penalty(n);
                    if g_cost.get(&n).is_none_or(|(old, _)| cand < *old) {
                        g_cost.insert(n, (cand, idx));
                        open.push(Node { f: cand + h(n), idx: n });
                    }
                }
            }
        }
    }
    if !reached {
        return straight;
    }

    let mut cells = vec![g_idx];
    let mut cur = g_idx;
    while cur != s_idx {
        cur = g_cost[&cur].1;
        cells.push(cur);
    }
    cells.reverse();
    let mut raw: Vec<Vec3> = cells.iter().map(|c| map.voxel_center(*c)).collect();
    raw[0] = *start;
    *raw.last_mut().expect("non-empty path") = target;

    let mut path = shortcut(map, &raw);
    if (target - goal).norm() > 1e-9 {
        path.push(*goal);
    }
    path
}

fn segment_min_clearance(map: &OccupancyMap, a: &Vec3, b: &Vec3) -> f64 {
    let n = ((b - a).norm() / (0.5 * map.resolution())).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| {
            let p = a + (b - a) * (i as f64 / n as f64);
            map.query_distance(&p).map(|q| q.distance).unwrap_or(0.0)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Greedy line-of-sight pruning that never lowers the clearance of the
/// stretch it replaces.
fn shortcut(map: &OccupancyMap, raw: &[Vec3]) -> Vec<Vec3> {
    let clear: Vec<f64> = raw
        .iter()
        .map(|p| map.query_distance(p).map(|q| q.distance).unwrap_or(0.0))
        .collect();
    let mut out = vec![raw[0]];
    let mut i = 0;
    while i + 1 < raw.len() {
        let mut best = i + 1;
        let mut stretch_min = clear[i].min(clear[i + 1]);
        let mut j = i + 2;
        while j < raw.len() {
            stretch_min = stretch_min.min(clear[j]);
            if segment_min_clearance(map, &raw[i], &raw[j]) + 1e-9 >= stretch_min {
                best = j;
            }
            j += 1;
        }
        out.push(raw[best]);
        i = best;
    }
    out
}

/// Total length of a polyline.
pub fn polyline_length(path: &[Vec3]) -> f64 {
    path.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Point at arc length `s` along the polyline, clamped to its ends.
pub fn polyline_at(path: &[Vec3], s: f64) -> Vec3 {
    let mut rest = s.max(0.0);
    for w in path.windows(2) {
        let len = (w[1] - w[0]).norm();
        if rest <= len && len > 0.0 {
            return w[0] + (w[1] - w[0]) * (rest / len);
        }
        rest -= len;
    }
    *path.last().expect("non-empty polyline")
}
