//! Lloyd baselines: move toward the density centroid of the robot's Voronoi
//! cell, each variant seeing a different slice of the world.

use bitvec::slice::BitSlice;

use super::{PolicyError, PolicyKind};
use crate::env::{density_moments, local_rect, CellMoments, CellRect, LocalMaps, World};
use crate::graph::{CommGraph, Vec2};

/// Density a variant is allowed to integrate.
#[derive(Debug, Clone, Copy)]
pub enum DensityView<'a> {
    /// The true density everywhere.
    Full,
    /// The true density on observed cells, zero elsewhere.
    Observed(&'a BitSlice),
}

/// Everything one robot's Lloyd step may depend on.
#[derive(Debug, Clone)]
pub struct Knowledge<'a> {
    /// Visible robots in ascending id order, including the robot itself.
    pub ids: Vec<u32>,
    pub positions: Vec<Vec2>,
    pub density: DensityView<'a>,
    /// Cells that may be assigned.
    pub region: CellRect,
}

impl Knowledge<'_> {
    pub fn knows_robot(&self, id: u32) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    /// Whether the density at a cell is available.
    pub fn knows_cell(&self, cells: usize, ix: usize, iy: usize) -> bool {
        self.region.contains(ix, iy)
            && match self.density {
                DensityView::Full => true,
                DensityView::Observed(bits) => bits[iy * cells + ix],
            }
    }

    fn moments(&self, world: &World) -> Vec<CellMoments> {
        let mask = match self.density {
            DensityView::Full => None,
            DensityView::Observed(bits) => Some(bits),
        };
        density_moments(&self.positions, world, self.region, mask)
    }
}

/// Assembles robot `robot`'s view for `kind`.
///
/// `sensed` are this tick's shared sensed positions, `graph` is built from
/// them, and `union` is the union of every robot's observed flags.
pub fn knowledge<'a>(
    kind: PolicyKind,
    robot: usize,
    sensed: &[Vec2],
    graph: &CommGraph,
    world: &World,
    maps: &'a [LocalMaps],
    union: &'a BitSlice,
) -> Result<Knowledge<'a>, PolicyError> {
    let all = || (0..sensed.len() as u32).collect::<Vec<_>>();
    match kind {
        PolicyKind::ClairvoyantLloyd => Ok(Knowledge {
            ids: all(),
            positions: sensed.to_vec(),
            density: DensityView::Full,
            region: world.geom().full(),
        }),
        PolicyKind::CentralizedLloyd => Ok(Knowledge {
            ids: all(),
            positions: sensed.to_vec(),
            density: DensityView::Observed(union),
            region: world.geom().full(),
        }),
        PolicyKind::DecentralizedLloyd => {
            let mut ids: Vec<u32> = graph.neighbors(robot).iter().map(|&j| j as u32).collect();
            ids.push(robot as u32);
            ids.sort_unstable();
            Ok(Knowledge {
                positions: ids.iter().map(|&j| sensed[j as usize]).collect(),
                ids,
                density: DensityView::Observed(maps[robot].observed()),
                region: local_rect(world, sensed[robot]),
            })
        }
        PolicyKind::GnnPolicy => Err(PolicyError::NotLloyd),
    }
}

/// Mass centroid of `id`'s cell under `k`, falling back to the cell's
/// geometric centroid when it holds no visible mass.
pub fn lloyd_target(k: &Knowledge, id: u32, world: &World) -> Option<Vec2> {
    let slot = k.ids.binary_search(&id).ok()?;
    if k.region.is_empty() {
        return None;
    }
    k.moments(world)[slot].centroid()
}

/// `clamp(gain * (target - position), v_max)`; zero without a target.
pub fn velocity_toward(target: Option<Vec2>, position: Vec2, gain: f64, v_max: f64) -> Vec2 {
    target.map_or(Vec2::ZERO, |c| ((c - position) * gain).clamp_norm(v_max))
}

pub fn lloyd_action(k: &Knowledge, id: u32, world: &World, gain: f64, v_max: f64) -> Vec2 {
    let Some(slot) = k.ids.binary_search(&id).ok() else {
        return Vec2::ZERO;
    };
    velocity_toward(lloyd_target(k, id, world), k.positions[slot], gain, v_max)
}

/// Targets for every robot. The two global variants share one partition of
/// the whole grid, so they are computed in a single pass.
pub fn lloyd_targets(
    kind: PolicyKind,
    sensed: &[Vec2],
    graph: &CommGraph,
    world: &World,
    maps: &[LocalMaps],
    union: &BitSlice,
) -> Result<Vec<Option<Vec2>>, PolicyError> {
    match kind {
        PolicyKind::ClairvoyantLloyd | PolicyKind::CentralizedLloyd => {
            let k = knowledge(kind, 0, sensed, graph, world, maps, union)?;
            Ok(k.moments(world).iter().map(CellMoments::centroid).collect())
        }
        PolicyKind::DecentralizedLloyd => (0..sensed.len())
            .map(|i| {
                let k = knowledge(kind, i, sensed, graph, world, maps, union)?;
                Ok(lloyd_target(&k, i as u32, world))
            })
            .collect(),
        PolicyKind::GnnPolicy => Err(PolicyError::NotLloyd),
    }
}
