//! Many-agent gridworld: agents gather a static food block and may attack
//! each other. Moves and attacks are expressed in the agent's own frame
//! (right, forward), matching the heading-rotated local view.

use rand::{Rng, RngCore};

use super::{ActionSpace, EnvSummary, MultiAgentEnv, StepInfo, StepOutcome};
use crate::error::{Error, Result};
use crate::policy::Action;

pub const NUM_SURVIVAL_ACTIONS: usize = 23;
pub const TURN_LEFT: usize = 21;
pub const TURN_RIGHT: usize = 22;
/// One-hot slot for "no action yet" in the last-action feature.
const NO_ACTION: usize = NUM_SURVIVAL_ACTIONS;
const FIRST_ATTACK: usize = 13;

const STEP_REWARD: f64 = -0.01;
const DEATH_REWARD: f64 = -1.0;
const LONE_ATTACK_REWARD: f64 = -0.1;
const GROUP_ATTACK_REWARD: f64 = 1.0;
const FOOD_REWARD: f64 = 5.0;
const VIEW_CHANNELS: usize = 3;

/// Stay, the four L1-distance-1 cells, then the eight L1-distance-2 cells,
/// as (right, forward) offsets.
pub const MOVE_OFFSETS: [(i64, i64); 13] = [
    (0, 0),
    (0, 1),
    (1, 0),
    (0, -1),
    (-1, 0),
    (0, 2),
    (1, 1),
    (2, 0),
    (1, -1),
    (0, -2),
    (-1, -1),
    (-2, 0),
    (-1, 1),
];

/// Moore neighbourhood, clockwise from straight ahead.
pub const ATTACK_OFFSETS: [(i64, i64); 8] = [
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub fn forward(self) -> (i64, i64) {
        match self {
            Heading::North => (0, 1),
            Heading::East => (1, 0),
            Heading::South => (0, -1),
            Heading::West => (-1, 0),
        }
    }

    pub fn right(self) -> (i64, i64) {
        self.turned_right().forward()
    }

    pub fn turned_right(self) -> Self {
        match self {
            Heading::North => Heading::East,
            Heading::East => Heading::South,
            Heading::South => Heading::West,
            Heading::West => Heading::North,
        }
    }

    pub fn turned_left(self) -> Self {
        self.turned_right().turned_right().turned_right()
    }

    /// World displacement of an egocentric (right, forward) offset.
    pub fn to_world(self, (r, f): (i64, i64)) -> (i64, i64) {
        let (rx, ry) = self.right();
        let (fx, fy) = self.forward();
        (r * rx + f * fx, r * ry + f * fy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalConfig {
    pub num_agents: usize,
    pub width: usize,
    pub height: usize,
    pub food: usize,
    pub hp: i32,
    pub view_radius: usize,
}

impl Default for SurvivalConfig {
    fn default() -> Self {
        Self {
            num_agents: 20,
            width: 32,
            height: 32,
            food: 160,
            hp: 2,
            view_radius: 2,
        }
    }
}

impl SurvivalConfig {
    pub fn obs_dim(&self) -> usize {
        let side = 2 * self.view_radius + 1;
        side * side * VIEW_CHANNELS + 1 + (NUM_SURVIVAL_ACTIONS + 1) + 1 + 2
    }

    pub fn view_len(&self) -> usize {
        let side = 2 * self.view_radius + 1;
        side * side * VIEW_CHANNELS
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.width * self.height;
        if self.width == 0 || self.height == 0 || self.num_agents == 0 {
            return Err(Error::Config("survival grid and population must be non-empty".into()));
        }
        if self.num_agents + self.food > cells {
            return Err(Error::Config(format!(
                "{} agents and {} food do not fit in {cells} cells",
                self.num_agents, self.food
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalAgent {
    pub x: usize,
    pub y: usize,
    pub heading: Heading,
    pub hp: i32,
    pub alive: bool,
    pub last_action: usize,
    pub last_reward: f64,
}

#[derive(Debug, Clone)]
pub struct Survival {
    config: SurvivalConfig,
    agents: Vec<SurvivalAgent>,
    occupancy: Vec<Option<usize>>,
    food: Vec<bool>,
    food_remaining: usize,
    food_consumed: usize,
}

impl Survival {
    pub fn new(config: SurvivalConfig) -> Self {
        let cells = config.width * config.height;
        Self {
            agents: Vec::new(),
            occupancy: vec![None; cells],
            food: vec![false; cells],
            food_remaining: 0,
            food_consumed: 0,
            config,
        }
    }

    /// Builds a state from explicit agent placements and food cells.
    pub fn from_layout(
        config: SurvivalConfig,
        agents: &[(usize, usize, Heading)],
        food: &[(usize, usize)],
    ) -> Result<Self> {
        if agents.len() != config.num_agents {
            return Err(Error::dims("survival agents", config.num_agents, agents.len()));
        }
        let mut env = Self::new(config);
        for &(x, y) in food {
            let cell = env.cell(x as i64, y as i64).ok_or_else(|| {
                Error::Config(format!("food cell ({x}, {y}) outside the grid"))
            })?;
            if !env.food[cell] {
                env.food[cell] = true;
                env.food_remaining += 1;
            }
        }
        for (i, &(x, y, heading)) in agents.iter().enumerate() {
            let cell = env.cell(x as i64, y as i64).ok_or_else(|| {
                Error::Config(format!("agent {i} at ({x}, {y}) outside the grid"))
            })?;
            if env.occupancy[cell].is_some() {
                return Err(Error::Config(format!("two agents share cell ({x}, {y})")));
            }
            env.occupancy[cell] = Some(i);
            env.agents.push(SurvivalAgent {
                x,
                y,
                heading,
                hp: env.config.hp,
                alive: true,
                last_action: NO_ACTION,
                last_reward: 0.0,
            });
        }
        Ok(env)
    }

    pub fn config(&self) -> &SurvivalConfig {
        &self.config
    }

    pub fn agents(&self) -> &[SurvivalAgent] {
        &self.agents
    }

    pub fn food_remaining(&self) -> usize {
        self.food_remaining
    }

    pub fn food_consumed(&self) -> usize {
        self.food_consumed
    }

    pub fn has_food(&self, x: usize, y: usize) -> bool {
        self.food[y * self.config.width + x]
    }

    pub fn occupant(&self, x: usize, y: usize) -> Option<usize> {
        self.occupancy[y * self.config.width + x]
    }

    fn cell(&self, x: i64, y: i64) -> Option<usize> {
        let (w, h) = (self.config.width as i64, self.config.height as i64);
        (x >= 0 && y >= 0 && x < w && y < h).then(|| (y * w + x) as usize)
    }

    fn target(&self, agent: usize, offset: (i64, i64)) -> (i64, i64) {
        let a = &self.agents[agent];
        let (dx, dy) = a.heading.to_world(offset);
        (a.x as i64 + dx, a.y as i64 + dy)
    }

    /// Food cells forming a near-square block centred in the grid.
    fn food_block(&self) -> Vec<(usize, usize)> {
        let n = self.config.food;
        if n == 0 {
            return Vec::new();
        }
        let side = (n as f64).sqrt().ceil() as usize;
        let rows = n.div_ceil(side);
        let x0 = (self.config.width.saturating_sub(side)) / 2;
        let y0 = (self.config.height.saturating_sub(rows)) / 2;
        (0..n)
            .map(|i| {
                (
                    (x0 + i % side).min(self.config.width - 1),
                    (y0 + i / side).min(self.config.height - 1),
                )
            })
            .collect()
    }

    pub fn local_view(&self, agent: usize) -> Vec<f64> {
        let r = self.config.view_radius as i64;
        let side = (2 * r + 1) as usize;
        let plane = side * side;
        let mut view = vec![0.0; plane * VIEW_CHANNELS];
        for row in 0..side {
            let f = r - row as i64;
            for col in 0..side {
                let rr = col as i64 - r;
                let (x, y) = self.target(agent, (rr, f));
                let idx = row * side + col;
                match self.cell(x, y) {
                    None => view[2 * plane + idx] = 1.0,
                    Some(cell) => {
                        if matches!(self.occupancy[cell], Some(o) if o != agent) {
                            view[idx] = 1.0;
                        }
                        if self.food[cell] {
                            view[plane + idx] = 1.0;
                        }
                    }
                }
            }
        }
        view
    }

    /// Local view followed by `[id/N, one-hot last action, last reward, x/W, y/H]`.
    pub fn build_observation(&self, agent: usize) -> Vec<f64> {
        let a = &self.agents[agent];
        if !a.alive {
            return vec![0.0; self.config.obs_dim()];
        }
        let mut obs = self.local_view(agent);
        obs.reserve(self.config.obs_dim() - obs.len());
        obs.push(agent as f64 / self.config.num_agents as f64);
        let mut one_hot = [0.0; NUM_SURVIVAL_ACTIONS + 1];
        one_hot[a.last_action] = 1.0;
        obs.extend_from_slice(&one_hot);
        obs.push(a.last_reward);
        obs.push(a.x as f64 / self.config.width as f64);
        obs.push(a.y as f64 / self.config.height as f64);
        obs
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.agents.len()).map(|a| self.build_observation(a)).collect()
    }

    fn action_index(action: &Action) -> Result<usize> {
        match action {
            Action::Discrete(i) if *i < NUM_SURVIVAL_ACTIONS => Ok(*i),
            Action::Discrete(i) => Err(Error::InvalidAction(format!(
                "survival action {i} outside [0, {NUM_SURVIVAL_ACTIONS})"
            ))),
            Action::Continuous(_) => Err(Error::InvalidAction(
                "survival takes discrete actions".into(),
            )),
        }
    }
}

impl MultiAgentEnv for Survival {
    fn boxed_clone(&self) -> Box<dyn MultiAgentEnv> {
        Box::new(self.clone())
    }

    fn name(&self) -> &'static str {
        "survival"
    }

    fn num_agents(&self) -> usize {
        self.config.num_agents
    }

    fn obs_dim(&self) -> usize {
        self.config.obs_dim()
    }

    fn action_space(&self, _population: usize) -> ActionSpace {
        ActionSpace::Discrete {
            num_actions: NUM_SURVIVAL_ACTIONS,
        }
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
        self.config.validate().expect("survival config validated at construction");
        let cells = self.config.width * self.config.height;
        self.occupancy = vec![None; cells];
        self.food = vec![false; cells];
        self.food_remaining = 0;
        self.food_consumed = 0;
        for (x, y) in self.food_block() {
            let cell = y * self.config.width + x;
            if !self.food[cell] {
                self.food[cell] = true;
                self.food_remaining += 1;
            }
        }
        self.agents.clear();
        for i in 0..self.config.num_agents {
            let cell = loop {
                let c = rng.random_range(0..cells);
                if !self.food[c] && self.occupancy[c].is_none() {
                    break c;
                }
            };
            self.occupancy[cell] = Some(i);
            self.agents.push(SurvivalAgent {
                x: cell % self.config.width,
                y: cell / self.config.width,
                heading: Heading::North,
                hp: self.config.hp,
                alive: true,
                last_action: NO_ACTION,
                last_reward: 0.0,
            });
        }
        self.observations()
    }

    fn step(&mut self, actions: &[Action]) -> Result<StepOutcome> {
        let n = self.agents.len();
        if actions.len() != n {
            return Err(Error::dims("joint action", n, actions.len()));
        }
        let indices = actions
            .iter()
            .map(Self::action_index)
            .collect::<Result<Vec<_>>>()?;

        let acting: Vec<bool> = self.agents.iter().map(|a| a.alive).collect();
        let mut rewards = vec![0.0; n];
        let mut info = StepInfo::default();
        for i in 0..n {
            if acting[i] {
                rewards[i] += STEP_REWARD;
            } else {
                info.ignored_actions.push(i);
            }
        }

        for i in (0..n).filter(|&i| acting[i]) {
            match indices[i] {
                TURN_LEFT => self.agents[i].heading = self.agents[i].heading.turned_left(),
                TURN_RIGHT => self.agents[i].heading = self.agents[i].heading.turned_right(),
                _ => {}
            }
        }

        // Attacks resolve simultaneously against the pre-attack state.
        let mut hits: Vec<(usize, usize)> = Vec::new();
        let mut attackers_on = vec![0usize; n];
        for i in (0..n).filter(|&i| acting[i]) {
            let a = indices[i];
            if !(FIRST_ATTACK..TURN_LEFT).contains(&a) {
                continue;
            }
            let (x, y) = self.target(i, ATTACK_OFFSETS[a - FIRST_ATTACK]);
            if let Some(cell) = self.cell(x, y) {
                if let Some(t) = self.occupancy[cell] {
                    if t != i {
                        hits.push((i, t));
                        attackers_on[t] += 1;
                    }
                }
            }
        }
        for &(attacker, target) in &hits {
            rewards[attacker] += if attackers_on[target] >= 2 {
                GROUP_ATTACK_REWARD
            } else {
                LONE_ATTACK_REWARD
            };
        }
        for t in 0..n {
            if attackers_on[t] == 0 || !self.agents[t].alive {
                continue;
            }
            self.agents[t].hp -= attackers_on[t] as i32;
            if self.agents[t].hp <= 0 {
                self.agents[t].alive = false;
                let cell = self.agents[t].y * self.config.width + self.agents[t].x;
                self.occupancy[cell] = None;
                rewards[t] += DEATH_REWARD;
                info.deaths += 1;
            }
        }

        // Moves in index order; a move into an occupied or off-grid cell fails.
        for i in 0..n {
            let a = indices[i];
            if !acting[i] || !self.agents[i].alive || a == 0 || a >= FIRST_ATTACK {
                continue;
            }
            let (x, y) = self.target(i, MOVE_OFFSETS[a]);
            let Some(cell) = self.cell(x, y) else { continue };
            if self.occupancy[cell].is_some() {
                continue;
            }
            let old = self.agents[i].y * self.config.width + self.agents[i].x;
            self.occupancy[old] = None;
            self.occupancy[cell] = Some(i);
            self.agents[i].x = x as usize;
            self.agents[i].y = y as usize;
            if self.food[cell] {
                self.food[cell] = false;
                self.food_remaining -= 1;
                self.food_consumed += 1;
                rewards[i] += FOOD_REWARD;
                info.food_eaten += 1;
            }
        }

        for i in (0..n).filter(|&i| acting[i]) {
            self.agents[i].last_action = indices[i];
            self.agents[i].last_reward = rewards[i];
        }

        let active: Vec<bool> = self.agents.iter().map(|a| a.alive).collect();
        Ok(StepOutcome {
            observations: self.observations(),
            rewards,
            done: !active.iter().any(|&a| a),
            active,
            info,
        })
    }

    fn active_agents(&self) -> Vec<bool> {
        self.agents.iter().map(|a| a.alive).collect()
    }

    fn summary(&self) -> EnvSummary {
        EnvSummary {
            food_remaining: Some(self.food_remaining),
            survivors: Some(self.agents.iter().filter(|a| a.alive).count()),
        }
    }
}
