//! The bandit-tile grid world: two stochastic goal tiles, two start tiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

pub const NUM_MOVES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Move {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Move {
    pub const ALL: [Move; NUM_MOVES] = [Move::Up, Move::Down, Move::Left, Move::Right];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalTile {
    pub cell: Cell,
    pub reward_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BanditTileConfig {
    pub width: usize,
    pub height: usize,
    pub goals: [GoalTile; 2],
    pub starts: [Cell; 2],
    /// Shared variance of both goal rewards.
    pub reward_variance: f64,
    /// Episode length cap; also the MDP horizon.
    pub max_steps: usize,
}

impl Default for BanditTileConfig {
    fn default() -> Self {
        Self {
            width: 7,
            height: 7,
            goals: [
                GoalTile { cell: Cell::new(1, 3), reward_mean: 0.5 },
                GoalTile { cell: Cell::new(3, 2), reward_mean: 0.3 },
            ],
            starts: [Cell::new(3, 0), Cell::new(3, 6)],
            reward_variance: 0.5,
            max_steps: 100,
        }
    }
}

impl BanditTileConfig {
    pub fn state_of(&self, cell: Cell) -> usize {
        cell.row * self.width + cell.col
    }

    pub fn cell_of(&self, state: usize) -> Cell {
        Cell::new(state / self.width, state % self.width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("grid must be non-empty".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be positive".into()));
        }
        if !(self.reward_variance.is_finite() && self.reward_variance >= 0.0) {
            return Err(Error::InvalidConfig("reward_variance must be non-negative".into()));
        }
        let cells = [self.goals[0].cell, self.goals[1].cell, self.starts[0], self.starts[1]];
        for c in cells {
            if c.row >= self.height || c.col >= self.width {
                return Err(Error::InvalidConfig(format!("cell ({}, {}) lies outside the grid", c.row, c.col)));
            }
        }
        for i in 0..cells.len() {
            for j in i + 1..cells.len() {
                if cells[i] == cells[j] {
                    return Err(Error::InvalidConfig(format!(
                        "goal and start tiles must be distinct; ({}, {}) repeats",
                        cells[i].row, cells[i].col
                    )));
                }
            }
        }
        if self.goals.iter().any(|g| !g.reward_mean.is_finite()) {
            return Err(Error::InvalidConfig("goal reward means must be finite".into()));
        }
        Ok(())
    }

    fn neighbour(&self, cell: Cell, mv: Move) -> Cell {
        match mv {
            Move::Up if cell.row > 0 => Cell::new(cell.row - 1, cell.col),
            Move::Down if cell.row + 1 < self.height => Cell::new(cell.row + 1, cell.col),
            Move::Left if cell.col > 0 => Cell::new(cell.row, cell.col - 1),
            Move::Right if cell.col + 1 < self.width => Cell::new(cell.row, cell.col + 1),
            _ => cell,
        }
    }

    /// Optimal mean episode reward when both goals are reachable in time.
    pub fn best_goal_mean(&self) -> f64 {
        self.goals[0].reward_mean.max(self.goals[1].reward_mean)
    }
}

pub fn build_bandit_tile(config: &BanditTileConfig) -> Result<TabularMdp> {
    config.validate()?;
    let ns = config.width * config.height;
    let na = NUM_MOVES;
    let goal_of = |state: usize| config.goals.iter().find(|g| config.state_of(g.cell) == state);
    let reward_std = config.reward_variance.sqrt();

    let mut transition = vec![0.0; ns * na * ns];
    let mut reward_mean = vec![0.0; ns * na];
    let mut reward_stds = vec![0.0; ns * na];
    let mut terminal = vec![false; ns];
    for s in 0..ns {
        terminal[s] = goal_of(s).is_some();
        for mv in Move::ALL {
            let a = mv as usize;
            let next = if terminal[s] { s } else { config.state_of(config.neighbour(config.cell_of(s), mv)) };
            transition[(s * na + a) * ns + next] = 1.0;
            if !terminal[s] {
                if let Some(goal) = goal_of(next) {
                    reward_mean[s * na + a] = goal.reward_mean;
                    reward_stds[s * na + a] = reward_std;
                }
            }
        }
    }
    let mut initial = vec![0.0; ns];
    for start in config.starts {
        initial[config.state_of(start)] += 0.5;
    }
    TabularMdp::new(ns, na, config.max_steps, transition, reward_mean, reward_stds, initial, terminal)
}
