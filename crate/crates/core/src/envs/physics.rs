use crate::error::{Error, Result};
use crate::policy::Action;

/// Point-mass constants shared by the particle environments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsConfig {
    pub dt: f64,
    pub damping: f64,
    pub max_speed: f64,
    pub collision_radius: f64,
    /// Half-width of the square world `[-bound, bound]²`.
    pub bound: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            damping: 0.25,
            max_speed: 1.0,
            collision_radius: 0.1,
            bound: 1.0,
        }
    }
}

pub(crate) type Vec2 = [f64; 2];

#[inline]
pub(crate) fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub(crate) fn norm_sq(a: Vec2) -> f64 {
    a[0] * a[0] + a[1] * a[1]
}

pub(crate) fn force(action: &Action) -> Result<Vec2> {
    match action {
        Action::Continuous(a) if a.len() == 2 => {
            if a.iter().any(|v| v.is_nan()) {
                return Err(Error::InvalidAction("NaN force".into()));
            }
            Ok([a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)])
        }
        Action::Continuous(a) => Err(Error::dims("force action", 2, a.len())),
        Action::Discrete(_) => Err(Error::InvalidAction(
            "particle environments take continuous forces".into(),
        )),
    }
}

/// Integrates one body; returns true when it tried to leave the world.
pub(crate) fn integrate(
    cfg: &PhysicsConfig,
    pos: &mut Vec2,
    vel: &mut Vec2,
    force: Vec2,
    accel: f64,
    max_speed: f64,
) -> bool {
    for i in 0..2 {
        vel[i] = (1.0 - cfg.damping) * vel[i] + accel * force[i] * cfg.dt;
    }
    let speed = norm_sq(*vel).sqrt();
    if speed > max_speed {
        let s = max_speed / speed;
        vel[0] *= s;
        vel[1] *= s;
    }
    let mut out_of_bounds = false;
    for i in 0..2 {
        pos[i] += vel[i] * cfg.dt;
        if pos[i] > cfg.bound || pos[i] < -cfg.bound {
            out_of_bounds = true;
            pos[i] = pos[i].clamp(-cfg.bound, cfg.bound);
            vel[i] = 0.0;
        }
    }
    out_of_bounds
}
