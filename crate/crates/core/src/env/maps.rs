use bitvec::prelude::*;

use super::world::{CellRect, World};
use crate::graph::Vec2;

/// Side of the square sensor footprint, meters.
pub const SENSOR_SIZE_M: f64 = 64.0;
/// Side of the robot-centered local map, meters.
pub const LOCAL_MAP_SIZE_M: f64 = 256.0;

/// What one robot has observed so far.
///
/// Observations are kept in world cells; the robot-centered explored and
/// obstacle grids are cut out of this memory on demand by [`LocalMaps::window`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalMaps {
    cells: usize,
    observed: BitVec,
}

/// Robot-centered square grids, row-major, `size x size` cells. Cell `(0, 0)`
/// is world cell `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapWindow {
    pub size: usize,
    pub origin: (i64, i64),
    pub explored: Vec<f64>,
    pub obstacle: Vec<f64>,
}

impl MapWindow {
    pub fn explored_at(&self, wx: usize, wy: usize) -> f64 {
        self.explored[wy * self.size + wx]
    }

    pub fn obstacle_at(&self, wx: usize, wy: usize) -> f64 {
        self.obstacle[wy * self.size + wx]
    }
}

pub fn half_cells(world: &World, meters: f64) -> usize {
    ((meters / world.resolution()).round() as usize) / 2
}

/// Local-map footprint around `center`, clipped to the world.
pub fn local_rect(world: &World, center: Vec2) -> CellRect {
    world
        .geom()
        .window(world.geom().cell_of(center), half_cells(world, LOCAL_MAP_SIZE_M))
}

impl LocalMaps {
    pub fn new(world: &World) -> Self {
        let cells = world.cells();
        Self {
            cells,
            observed: bitvec![0; cells * cells],
        }
    }

    pub fn observed(&self) -> &BitSlice {
        &self.observed
    }

    pub fn is_observed(&self, ix: usize, iy: usize) -> bool {
        self.observed[iy * self.cells + ix]
    }

    pub fn observed_count(&self) -> usize {
        self.observed.count_ones()
    }

    /// Marks the sensor footprint around `position` as observed.
    /// Returns how many cells were newly observed.
    pub fn sense(&mut self, position: Vec2, world: &World) -> usize {
        let rect = world
            .geom()
            .window(world.geom().cell_of(position), half_cells(world, SENSOR_SIZE_M));
        let mut fresh = 0;
        for iy in rect.y0..rect.y1 {
            let row = &mut self.observed[iy * self.cells + rect.x0..iy * self.cells + rect.x1];
            fresh += row.count_zeros();
            row.fill(true);
        }
        fresh
    }

    /// Explored density and boundary mask around `center`.
    pub fn window(&self, world: &World, center: Vec2) -> MapWindow {
        let half = half_cells(world, LOCAL_MAP_SIZE_M);
        let size = 2 * half;
        let (cx, cy) = world.geom().cell_of(center);
        let origin = (cx - half as i64, cy - half as i64);
        let mut explored = vec![0.0; size * size];
        let mut obstacle = vec![0.0; size * size];
        let n = self.cells as i64;
        for wy in 0..size {
            let gy = origin.1 + wy as i64;
            for wx in 0..size {
                let gx = origin.0 + wx as i64;
                let k = wy * size + wx;
                if gx < 0 || gy < 0 || gx >= n || gy >= n {
                    obstacle[k] = 1.0;
                } else if self.is_observed(gx as usize, gy as usize) {
                    explored[k] = world.value(gx as usize, gy as usize);
                }
            }
        }
        MapWindow {
            size,
            origin,
            explored,
            obstacle,
        }
    }
}

pub fn sense_and_update(position: Vec2, world: &World, maps: &mut LocalMaps) -> usize {
    maps.sense(position, world)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> World {
        World::uniform(1024.0, 1.0, 0.5).unwrap()
    }

    #[test]
    fn center_sense_flags_full_footprint() {
        let w = world();
        let mut m = LocalMaps::new(&w);
        assert_eq!(sense_and_update(Vec2::new(512.0, 512.0), &w, &mut m), 4096);
        assert_eq!(m.observed_count(), 4096);
    }

    #[test]
    fn corner_sense_is_clipped() {
        let w = world();
        let mut m = LocalMaps::new(&w);
        sense_and_update(Vec2::new(0.0, 0.0), &w, &mut m);
        assert_eq!(m.observed_count(), 32 * 32);
    }

    #[test]
    fn overlapping_senses_union_and_idempotent() {
        let w = world();
        let mut m = LocalMaps::new(&w);
        m.sense(Vec2::new(512.0, 512.0), &w);
        let once = m.clone();
        assert_eq!(m.sense(Vec2::new(512.0, 512.0), &w), 0);
        assert_eq!(m, once);
        m.sense(Vec2::new(544.0, 512.0), &w);
        assert_eq!(m.observed_count(), 4096 + 32 * 64);
        assert!(m.is_observed(500, 500) && m.is_observed(575, 543));
    }

    #[test]
    fn window_values_follow_observations_and_boundary() {
        let w = world();
        let mut m = LocalMaps::new(&w);
        m.sense(Vec2::new(10.0, 10.0), &w);
        let win = m.window(&w, Vec2::new(10.0, 10.0));
        assert_eq!(win.size, 256);
        assert_eq!(win.origin, (-118, -118));
        let mut flagged = 0;
        for wy in 0..256 {
            for wx in 0..256 {
                let (gx, gy) = (win.origin.0 + wx as i64, win.origin.1 + wy as i64);
                let inside = gx >= 0 && gy >= 0;
                assert_eq!(win.obstacle_at(wx, wy), if inside { 0.0 } else { 1.0 });
                let e = win.explored_at(wx, wy);
                if inside && m.is_observed(gx as usize, gy as usize) {
                    assert_eq!(e, 0.5);
                    flagged += 1;
                } else {
                    assert_eq!(e, 0.0);
                }
            }
        }
        assert_eq!(flagged, m.observed_count());
    }
}
