//! Sliding-window voxel occupancy with a truncated Euclidean distance field.
//!
//! Occupancy lives in a ring buffer addressed by global voxel index modulo the
//! window size, so sliding the window never moves data that stays inside it.
//! The distance field is stored in window order and rebuilt on demand with an
//! exact separable squared-distance transform.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Frame, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("distance field is stale; call recompute_distance_field first")]
    StaleField,
    #[error("invalid map configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    /// Edge length of one voxel in meters.
    pub resolution: f64,
    /// Voxels per axis.
    pub size: [usize; 3],
    pub truncation_radius: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            resolution: 0.2,
            size: [100, 100, 100],
            truncation_radius: 2.0,
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<(), MapError> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(MapError::InvalidConfig(format!(
                "resolution must be positive, got {}",
                self.resolution
            )));
        }
        if self.size.iter().any(|&n| n < 2) {
            return Err(MapError::InvalidConfig(format!(
                "window needs at least 2 voxels per axis, got {:?}",
                self.size
            )));
        }
        if !(self.truncation_radius > 0.0 && self.truncation_radius.is_finite()) {
            return Err(MapError::InvalidConfig(format!(
                "truncation radius must be positive, got {}",
                self.truncation_radius
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, frame: Frame) -> Self {
        Self { points, frame }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Result of a distance query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceQuery {
    pub distance: f64,
    /// Gradient of the interpolated distance with respect to the query point.
    pub gradient: Vec3,
    /// The point was outside the window and the query was clamped.
    pub outside: bool,
}

pub type VoxelIndex = [i64; 3];

const INF: i64 = i64::MAX / 4;

#[derive(Debug, Clone)]
pub struct OccupancyMap {
    resolution: f64,
    size: [usize; 3],
    truncation: f64,
    /// Global index of the window's minimum corner voxel.
    origin: VoxelIndex,
    /// Ring-buffer occupancy, indexed by [`Self::ring_slot`].
    occupied: Vec<bool>,
    occupied_count: usize,
    /// Window-ordered distances (x fastest).
    distance: Vec<f64>,
    stale: bool,
}

impl OccupancyMap {
    pub fn new(config: MapConfig, center: &Vec3) -> Result<Self, MapError> {
        config.validate()?;
        let volume = config.size.iter().product();
        Ok(Self {
            resolution: config.resolution,
            size: config.size,
            truncation: config.truncation_radius,
            origin: origin_for(center, config.resolution, config.size),
            occupied: vec![false; volume],
            occupied_count: 0,
            distance: vec![config.truncation_radius; volume],
            stale: false,
        })
    }

    pub fn config(&self) -> MapConfig {
        MapConfig {
            resolution: self.resolution,
            size: self.size,
            truncation_radius: self.truncation,
        }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn size(&self) -> [usize; 3] {
        self.size
    }

    pub fn truncation_radius(&self) -> f64 {
        self.truncation
    }

    pub fn origin(&self) -> VoxelIndex {
        self.origin
    }

    pub fn is_stale(&self) -> bool {
        self.stale
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied_count
    }

    /// World position of the window center (snapped to the voxel grid).
    pub fn center(&self) -> Vec3 {
        Vec3::from_fn(|a, _| {
            (self.origin[a] as f64 + self.size[a] as f64 / 2.0) * self.resolution
        })
    }

    /// World-space axis-aligned extent of the window `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let lo = Vec3::from_fn(|a, _| self.origin[a] as f64 * self.resolution);
        let hi = Vec3::from_fn(|a, _| (self.origin[a] + self.size[a] as i64) as f64 * self.resolution);
        (lo, hi)
    }

    pub fn voxel_index(&self, p: &Vec3) -> VoxelIndex {
        [0, 1, 2].map(|a| (p[a] / self.resolution).floor() as i64)
    }

    pub fn voxel_center(&self, idx: VoxelIndex) -> Vec3 {
        Vec3::from_fn(|a, _| (idx[a] as f64 + 0.5) * self.resolution)
    }

    pub fn in_window(&self, idx: VoxelIndex) -> bool {
        (0..3).all(|a| idx[a] >= self.origin[a] && idx[a] < self.origin[a] + self.size[a] as i64)
    }

    fn ring_slot(&self, idx: VoxelIndex) -> usize {
        let x = idx[0].rem_euclid(self.size[0] as i64) as usize;
        let y = idx[1].rem_euclid(self.size[1] as i64) as usize;
        let z = idx[2].rem_euclid(self.size[2] as i64) as usize;
        x + self.size[0] * (y + self.size[1] * z)
    }

    fn window_slot(&self, offset: [usize; 3]) -> usize {
        offset[0] + self.size[0] * (offset[1] + self.size[1] * offset[2])
    }

    pub fn is_occupied(&self, idx: VoxelIndex) -> bool {
        self.in_window(idx) && self.occupied[self.ring_slot(idx)]
    }

    pub fn is_occupied_at(&self, p: &Vec3) -> bool {
        self.is_occupied(self.voxel_index(p))
    }

    /// Global indices of every occupied voxel in the window.
    pub fn occupied_voxels(&self) -> Vec<VoxelIndex> {
        let mut out = Vec::with_capacity(self.occupied_count);
        for k in 0..self.size[2] as i64 {
            for j in 0..self.size[1] as i64 {
                for i in 0..self.size[0] as i64 {
                    let idx = [self.origin[0] + i, self.origin[1] + j, self.origin[2] + k];
                    if self.occupied[self.ring_slot(idx)] {
                        out.push(idx);
                    }
                }
            }
        }
        out
    }

    /// Marks the voxel of every in-window point occupied and returns how
    /// many voxels changed state. The distance field goes stale only when
    /// occupancy actually changed.
    pub fn insert_cloud(&mut self, cloud: &PointCloud) -> usize {
        debug_assert_eq!(cloud.frame, Frame::World);
        let mut changed = 0;
        for p in &cloud.points {
            if !p.iter().all(|c| c.is_finite()) {
                continue;
            }
            let idx = self.voxel_index(p);
            if !self.in_window(idx) {
                continue;
            }
            let slot = self.ring_slot(idx);
            if !self.occupied[slot] {
                self.occupied[slot] = true;
                changed += 1;
            }
        }
        if changed > 0 {
            self.occupied_count += changed;
            self.stale = true;
        }
        changed
    }

    /// Marks a single voxel occupied. Returns false if it was outside the
    /// window or already occupied.
    pub fn set_occupied(&mut self, idx: VoxelIndex) -> bool {
        if !self.in_window(idx) {
            return false;
        }
        let slot = self.ring_slot(idx);
        if self.occupied[slot] {
            return false;
        }
        self.occupied[slot] = true;
        self.occupied_count += 1;
        self.stale = true;
        true
    }

    /// Re-centers the window. Voxels in the overlap keep their state; voxels
    /// entering the window start free. Returns whether the window moved.
    pub fn slide_window(&mut self, new_center: &Vec3) -> bool {
        let new_origin = origin_for(new_center, self.resolution, self.size);
        if new_origin == self.origin {
            return false;
        }
        let old_origin = self.origin;
        let disjoint = (0..3).any(|a| (new_origin[a] - old_origin[a]).unsigned_abs() as usize >= self.size[a]);
        if disjoint {
            self.occupied.fill(false);
            self.occupied_count = 0;
        } else {
            // Slots of voxels entering the window held voxels that just left.
            let inside_old = |idx: VoxelIndex| {
                (0..3).all(|a| idx[a] >= old_origin[a] && idx[a] < old_origin[a] + self.size[a] as i64)
            };
            for k in 0..self.size[2] as i64 {
                for j in 0..self.size[1] as i64 {
                    for i in 0..self.size[0] as i64 {
                        let idx = [new_origin[0] + i, new_origin[1] + j, new_origin[2] + k];
                        if inside_old(idx) {
                            continue;
                        }
                        let slot = self.ring_slot(idx);
                        if self.occupied[slot] {
                            self.occupied[slot] = false;
                            self.occupied_count -= 1;
                        }
                    }
                }
            }
        }
        self.origin = new_origin;
        self.stale = true;
        true
    }

    /// Rebuilds the truncated distance field. Each free voxel receives the
    /// exact Euclidean distance between its center and the nearest occupied
    /// voxel center, capped at the truncation radius.
    pub fn recompute_distance_field(&mut self) {
        let [nx, ny, nz] = self.size;
        let res = self.resolution;
        let trunc = self.truncation;
        // Smallest squared voxel distance that truncates; larger partial sums
        // can be dropped early without changing the result.
        let mut cap = ((trunc / res).powi(2).floor() as i64).max(0);
        while ((cap as f64).sqrt() * res) >= trunc && cap > 0 {
            cap -= 1;
        }
        while ((cap as f64).sqrt() * res) < trunc {
            cap += 1;
        }
        let prune = |v: i64| if v >= cap { INF } else { v };

        let slot_tables: [Vec<usize>; 3] = [0, 1, 2].map(|a| {
            (0..self.size[a])
                .map(|o| (self.origin[a] + o as i64).rem_euclid(self.size[a] as i64) as usize)
                .collect()
        });

        let mut sq = vec![INF; nx * ny * nz];
        if self.occupied_count > 0 {
            // x: nearest occupied voxel along each row.
            for k in 0..nz {
                for j in 0..ny {
                    let ring_base = nx * (slot_tables[1][j] + ny * slot_tables[2][k]);
                    let base = nx * (j + ny * k);
                    let mut last: Option<usize> = None;
                    for i in 0..nx {
                        if self.occupied[ring_base + slot_tables[0][i]] {
                            last = Some(i);
                        }
                        if let Some(l) = last {
                            let d = (i - l) as i64;
                            sq[base + i] = prune(d * d);
                        }
                    }
                    let mut next: Option<usize> = None;
                    for i in (0..nx).rev() {
                        if self.occupied[ring_base + slot_tables[0][i]] {
                            next = Some(i);
                        }
                        if let Some(n) = next {
                            let d = (n - i) as i64;
                            let v = prune(d * d);
                            if v < sq[base + i] {
                                sq[base + i] = v;
                            }
                        }
                    }
                }
            }
            let mut line = Vec::with_capacity(nx.max(ny).max(nz));
            let mut out = vec![0i64; nx.max(ny).max(nz)];
            let mut env = Envelope::with_capacity(nx.max(ny).max(nz));
            // y
            for k in 0..nz {
                for i in 0..nx {
                    line.clear();
                    line.extend((0..ny).map(|j| sq[i + nx * (j + ny * k)]));
                    if line.iter().all(|&v| v >= INF) {
                        continue;
                    }
                    env.transform(&line, &mut out[..ny]);
                    for j in 0..ny {
                        sq[i + nx * (j + ny * k)] = prune(out[j]);
                    }
                }
            }
            // z
            for j in 0..ny {
                for i in 0..nx {
                    line.clear();
                    line.extend((0..nz).map(|k| sq[i + nx * (j + ny * k)]));
                    if line.iter().all(|&v| v >= INF) {
                        continue;
                    }
                    env.transform(&line, &mut out[..nz]);
                    for k in 0..nz {
                        sq[i + nx * (j + ny * k)] = prune(out[k]);
                    }
                }
            }
        }
        for (d, &s) in self.distance.iter_mut().zip(&sq) {
            *d = if s >= INF {
                trunc
            } else {
                ((s as f64).sqrt() * res).min(trunc)
            };
        }
        self.stale = false;
    }

    /// Stored distance at a voxel center, if the voxel is in the window.
    pub fn voxel_distance(&self, idx: VoxelIndex) -> Option<f64> {
        if !self.in_window(idx) {
            return None;
        }
        let off = [0, 1, 2].map(|a| (idx[a] - self.origin[a]) as usize);
        Some(self.distance[self.window_slot(off)])
    }

    /// Trilinear interpolation of the distance field between voxel centers,
    /// with the analytic gradient of the interpolant.
    pub fn query_distance(&self, p: &Vec3) -> Result<DistanceQuery, MapError> {
        if self.stale {
            return Err(MapError::StaleField);
        }
        let (lo, hi) = self.bounds();
        let outside = (0..3).any(|a| p[a] < lo[a] || p[a] > hi[a]);

        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut clamped = [false; 3];
        for a in 0..3 {
            let u = p[a] / self.resolution - 0.5 - self.origin[a] as f64;
            let max = (self.size[a] - 1) as f64;
            let uc = if u.is_nan() { 0.0 } else { u.clamp(0.0, max) };
            clamped[a] = uc != u;
            let i0 = (uc.floor() as usize).min(self.size[a] - 2);
            base[a] = i0;
            frac[a] = uc - i0 as f64;
        }

        let value = |dx: usize, dy: usize, dz: usize| {
            self.distance[self.window_slot([base[0] + dx, base[1] + dy, base[2] + dz])]
        };
        let [tx, ty, tz] = frac;
        let c000 = value(0, 0, 0);
        let c100 = value(1, 0, 0);
        let c010 = value(0, 1, 0);
        let c110 = value(1, 1, 0);
        let c001 = value(0, 0, 1);
        let c101 = value(1, 0, 1);
        let c011 = value(0, 1, 1);
        let c111 = value(1, 1, 1);

        let c00 = c000 + tx * (c100 - c000);
        let c10 = c010 + tx * (c110 - c010);
        let c01 = c001 + tx * (c101 - c001);
        let c11 = c011 + tx * (c111 - c011);
        let c0 = c00 + ty * (c10 - c00);
        let c1 = c01 + ty * (c11 - c01);
        let distance = c0 + tz * (c1 - c0);

        let dx = (1.0 - tz) * ((1.0 - ty) * (c100 - c000) + ty * (c110 - c010))
            + tz * ((1.0 - ty) * (c101 - c001) + ty * (c111 - c011));
        let dy = (1.0 - tz) * (c10 - c00) + tz * (c11 - c01);
        let dz = c1 - c0;
        let mut gradient = Vec3::new(dx, dy, dz) / self.resolution;
        for a in 0..3 {
            if clamped[a] {
                gradient[a] = 0.0;
            }
        }
        Ok(DistanceQuery {
            distance,
            gradient,
            outside,
        })
    }

    /// Writes `x,y,z,occupied` rows (voxel centers, meters). Free voxels are
    /// listed only when `include_free` is set.
    pub fn write_voxels_csv<W: Write>(&self, mut out: W, include_free: bool) -> io::Result<usize> {
        writeln!(out, "x,y,z,occupied")?;
        let mut rows = 0;
        for k in 0..self.size[2] as i64 {
            for j in 0..self.size[1] as i64 {
                for i in 0..self.size[0] as i64 {
                    let idx = [self.origin[0] + i, self.origin[1] + j, self.origin[2] + k];
                    let occ = self.occupied[self.ring_slot(idx)];
                    if occ || include_free {
                        let c = self.voxel_center(idx);
                        writeln!(out, "{},{},{},{}", c.x, c.y, c.z, u8::from(occ))?;
                        rows += 1;
                    }
                }
            }
        }
        Ok(rows)
    }

    #[cfg(test)]
    pub(crate) fn distance_mut(&mut self) -> &mut [f64] {
        &mut self.distance
    }
}

fn origin_for(center: &Vec3, resolution: f64, size: [usize; 3]) -> VoxelIndex {
    [0, 1, 2].map(|a| (center[a] / resolution).floor() as i64 - (size[a] / 2) as i64)
}

/// Lower envelope of parabolas for the 1D squared distance transform
/// `out[q] = min_p (q - p)² + f[p]`.
struct Envelope {
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Self {
            sites: Vec::with_capacity(n),
            bounds: Vec::with_capacity(n + 1),
        }
    }

    fn transform(&mut self, f: &[i64], out: &mut [i64]) {
        self.sites.clear();
        self.bounds.clear();
        let intersect = |f: &[i64], q: usize, p: usize| {
            let (qi, pi) = (q as i64, p as i64);
            ((f[q] + qi * qi) - (f[p] + pi * pi)) as f64 / (2 * (qi - pi)) as f64
        };
        for q in 0..f.len() {
            if f[q] >= INF {
                continue;
            }
            if self.sites.is_empty() {
                self.sites.push(q);
                self.bounds.push(f64::NEG_INFINITY);
                continue;
            }
            let mut s = intersect(f, q, *self.sites.last().unwrap());
            while s <= *self.bounds.last().unwrap() {
                self.sites.pop();
                self.bounds.pop();
                s = intersect(f, q, *self.sites.last().unwrap());
            }
            self.sites.push(q);
            self.bounds.push(s);
        }
        let mut k = 0;
        for (q, o) in out.iter_mut().enumerate() {
            while k + 1 < self.sites.len() && self.bounds[k + 1] < q as f64 {
                k += 1;
            }
            let p = self.sites[k];
            let d = q as i64 - p as i64;
            *o = d * d + f[p];
        }
    }
}
