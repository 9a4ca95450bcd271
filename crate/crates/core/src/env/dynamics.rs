use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::world::World;
use crate::graph::{Position, Vec2};

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub id: u32,
    /// Ground truth.
    pub position: Position,
    /// What the graph, the planners and the policy input use this tick. The
    /// sensor footprint itself lands at the true position.
    pub sensed_position: Position,
    pub velocity: Vec2,
    /// Offset drawn at the last noise sample; `sensed = position + noise`.
    pub noise: Vec2,
}

impl RobotState {
    pub fn new(id: u32, position: Position) -> Self {
        Self {
            id,
            position,
            sensed_position: position,
            velocity: Vec2::ZERO,
            noise: Vec2::ZERO,
        }
    }
}

/// Keeps `p` on cell centers `[res/2, side - res/2]` along each axis.
pub fn clamp_to_world(p: Position, world: &World) -> Position {
    let lo = 0.5 * world.resolution();
    let hi = world.side() - lo;
    Vec2::new(p.x.clamp(lo, hi), p.y.clamp(lo, hi))
}

/// Single-integrator step with a speed limit.
pub fn apply_control(robot: &mut RobotState, u: Vec2, dt: f64, v_max: f64, world: &World) {
    debug_assert!(dt > 0.0);
    let u = u.clamp_norm(v_max);
    robot.velocity = u;
    if u != Vec2::ZERO {
        robot.position = clamp_to_world(robot.position + u * dt, world);
    }
    robot.sensed_position = robot.position + robot.noise;
}

/// Draws a fresh per-axis `N(0, σ²)` offset for each robot. With `σ = 0` no
/// draws are made and the sensed position is the true one.
pub fn add_position_noise<R: Rng + ?Sized>(robots: &mut [RobotState], sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        for r in robots {
            r.noise = Vec2::ZERO;
            r.sensed_position = r.position;
        }
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    for r in robots {
        r.noise = Vec2::new(normal.sample(rng), normal.sample(rng));
        r.sensed_position = r.position + r.noise;
    }
}

/// Uniform initial placement on the world's interior.
pub fn random_placement<R: Rng + ?Sized>(count: usize, world: &World, rng: &mut R) -> Vec<RobotState> {
    let lo = 0.5 * world.resolution();
    let hi = world.side() - lo;
    (0..count)
        .map(|i| RobotState::new(i as u32, Vec2::new(rng.random_range(lo..hi), rng.random_range(lo..hi))))
        .collect()
}
