//! Robot-centered tensor fed to the learned policy.
//!
//! Four `32 x 32` channels over the local-map footprint:
//! 0. explored density, block-averaged from the local map;
//! 1. boundary mask, block-averaged;
//! 2. and 3. neighbor offsets `dx / r_c` and `dy / r_c`, summed into the cell
//!    containing each neighbor.

use crate::env::{LocalMaps, World, LOCAL_MAP_SIZE_M};
use crate::graph::Vec2;

pub const INPUT_CHANNELS: usize = 4;
pub const INPUT_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInput {
    /// `[channel][row][col]`, row = y.
    pub data: Vec<f64>,
}

impl PolicyInput {
    pub fn zeros() -> Self {
        Self {
            data: vec![0.0; INPUT_CHANNELS * INPUT_SIZE * INPUT_SIZE],
        }
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * INPUT_SIZE + row) * INPUT_SIZE + col]
    }

    fn add(&mut self, channel: usize, row: usize, col: usize, v: f64) {
        self.data[(channel * INPUT_SIZE + row) * INPUT_SIZE + col] += v;
    }
}

/// Grid cell of a relative offset inside the local-map footprint; offsets
/// past the edge land in the border cells.
pub fn neighbor_cell(offset: f64) -> usize {
    let cell = LOCAL_MAP_SIZE_M / INPUT_SIZE as f64;
    (((offset + LOCAL_MAP_SIZE_M / 2.0) / cell).floor()).clamp(0.0, (INPUT_SIZE - 1) as f64) as usize
}

pub fn build_policy_input(
    position: Vec2,
    maps: &LocalMaps,
    world: &World,
    neighbor_offsets: &[Vec2],
    comm_radius: f64,
) -> PolicyInput {
    let mut input = PolicyInput::zeros();
    let win = maps.window(world, position);
    let block = (win.size / INPUT_SIZE).max(1);
    let used = block * INPUT_SIZE;
    if win.size >= used {
        let norm = 1.0 / (block * block) as f64;
        for wy in 0..used {
            let r = wy / block;
            for wx in 0..used {
                let c = wx / block;
                input.add(0, r, c, win.explored_at(wx, wy) * norm);
                input.add(1, r, c, win.obstacle_at(wx, wy) * norm);
            }
        }
    }
    for d in neighbor_offsets {
        let (r, c) = (neighbor_cell(d.y), neighbor_cell(d.x));
        input.add(2, r, c, d.x / comm_radius);
        input.add(3, r, c, d.y / comm_radius);
    }
    input
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbor_offset_lands_in_expected_cell() {
        let w = World::uniform(1024.0, 1.0, 1.0).unwrap();
        let maps = LocalMaps::new(&w);
        let input = build_policy_input(Vec2::new(512.0, 512.0), &maps, &w, &[Vec2::new(64.0, 0.0)], 128.0);
        assert_eq!(input.get(2, 16, 24), 0.5);
        assert_eq!(input.get(3, 16, 24), 0.0);
        let others: f64 = input.data[2 * 1024..].iter().map(|v| v.abs()).sum();
        assert_eq!(others, 0.5);
    }

    #[test]
    fn offsets_sum_within_a_cell_and_clamp_at_edges() {
        assert_eq!(neighbor_cell(-128.0), 0);
        assert_eq!(neighbor_cell(-500.0), 0);
        assert_eq!(neighbor_cell(127.9), 31);
        assert_eq!(neighbor_cell(128.0), 31);
        let w = World::uniform(1024.0, 1.0, 1.0).unwrap();
        let maps = LocalMaps::new(&w);
        let input = build_policy_input(
            Vec2::new(512.0, 512.0),
            &maps,
            &w,
            &[Vec2::new(1.0, 2.0), Vec2::new(3.0, 4.0)],
            128.0,
        );
        assert!((input.get(2, 16, 16) - 4.0 / 128.0).abs() < 1e-15);
        assert!((input.get(3, 16, 16) - 6.0 / 128.0).abs() < 1e-15);
    }

    #[test]
    fn map_channels_are_block_averages() {
        let w = World::uniform(1024.0, 1.0, 0.5).unwrap();
        let mut maps = LocalMaps::new(&w);
        let p = Vec2::new(4.0, 500.0);
        maps.sense(p, &w);
        let input = build_policy_input(p, &maps, &w, &[], 128.0);
        let win = maps.window(&w, p);
        for r in 0..32 {
            for c in 0..32 {
                let (mut e, mut o) = (0.0, 0.0);
                for wy in r * 8..r * 8 + 8 {
                    for wx in c * 8..c * 8 + 8 {
                        e += win.explored_at(wx, wy);
                        o += win.obstacle_at(wx, wy);
                    }
                }
                assert!((input.get(0, r, c) - e / 64.0).abs() < 1e-12);
                assert!((input.get(1, r, c) - o / 64.0).abs() < 1e-12);
            }
        }
        // Column 0..15 lies mostly west of the world edge at x = 4.
        assert_eq!(input.get(1, 16, 0), 1.0);
        assert_eq!(input.get(1, 16, 31), 0.0);
    }
}
