//! A small deterministic grid: four moves, step cost, one goal.
//!
//! Observations are a one-hot encoding of the agent's cell. Actions are
//! 0 = up, 1 = right, 2 = down, 3 = left; moving into a wall or off the
//! grid leaves the agent in place. Every step costs -0.01; entering the
//! goal additionally pays +1.0 and ends the episode.
//!
//! Layouts load from plain text maps: `#` wall, `S` start, `G` goal,
//! `.` floor.

use super::{EnvError, EnvSpec, Environment, StepResult};
use crate::rng::SplitMix64;
use thiserror::Error;

pub const STEP_COST: f64 = -0.01;
pub const GOAL_REWARD: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("map is empty")]
    Empty,
    #[error("map line {0} has a different width than the first line")]
    Ragged(usize),
    #[error("unknown map character {0:?}")]
    BadChar(char),
    #[error("map needs exactly one start cell 'S', found {0}")]
    StartCount(usize),
    #[error("map needs exactly one goal cell 'G', found {0}")]
    GoalCount(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridWorldState {
    row: usize,
    col: usize,
    steps: u32,
    done: bool,
    rng: SplitMix64,
    transitions: u64,
}

#[derive(Debug, Clone)]
pub struct GridWorld {
    rows: usize,
    cols: usize,
    walls: Vec<bool>,
    start: (usize, usize),
    goal: (usize, usize),
    max_steps: u32,
    state: GridWorldState,
}

impl GridWorld {
    /// Empty n-by-n grid, start top-left, goal bottom-right.
    pub fn square(n: usize, max_steps: u32) -> Self {
        assert!(n >= 2, "grid needs at least 2x2 cells");
        Self::build(n, n, vec![false; n * n], (0, 0), (n - 1, n - 1), max_steps)
    }

    pub fn from_map(text: &str, max_steps: u32) -> Result<Self, MapError> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.is_empty() {
            return Err(MapError::Empty);
        }
        let cols = lines[0].chars().count();
        let rows = lines.len();
        let mut walls = vec![false; rows * cols];
        let mut starts = Vec::new();
        let mut goals = Vec::new();
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(MapError::Ragged(r));
            }
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '#' => walls[r * cols + c] = true,
                    'S' => starts.push((r, c)),
                    'G' => goals.push((r, c)),
                    '.' => {}
                    other => return Err(MapError::BadChar(other)),
                }
            }
        }
        if starts.len() != 1 {
            return Err(MapError::StartCount(starts.len()));
        }
        if goals.len() != 1 {
            return Err(MapError::GoalCount(goals.len()));
        }
        Ok(Self::build(rows, cols, walls, starts[0], goals[0], max_steps))
    }

    fn build(
        rows: usize,
        cols: usize,
        walls: Vec<bool>,
        start: (usize, usize),
        goal: (usize, usize),
        max_steps: u32,
    ) -> Self {
        Self {
            rows,
            cols,
            walls,
            start,
            goal,
            max_steps,
            state: GridWorldState {
                row: start.0,
                col: start.1,
                steps: 0,
                done: true,
                rng: SplitMix64::new(0),
                transitions: 0,
            },
        }
    }

    fn observation(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.rows * self.cols];
        obs[self.state.row * self.cols + self.state.col] = 1.0;
        obs
    }

    pub fn position(&self) -> (usize, usize) {
        (self.state.row, self.state.col)
    }
}

impl Environment for GridWorld {
    type State = GridWorldState;

    fn spec(&self) -> EnvSpec {
        EnvSpec {
            observation_dim: self.rows * self.cols,
            action_count: 4,
            max_episode_steps: self.max_steps,
            reward_range: (STEP_COST, GOAL_REWARD + STEP_COST),
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let transitions = self.state.transitions;
        self.state = GridWorldState {
            row: self.start.0,
            col: self.start.1,
            steps: 0,
            done: false,
            rng: SplitMix64::new(seed),
            transitions,
        };
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        if self.state.done {
            return Err(EnvError::EpisodeOver);
        }
        if action >= 4 {
            return Err(EnvError::InvalidAction {
                action,
                action_count: 4,
            });
        }
        let (r, c) = (self.state.row as isize, self.state.col as isize);
        let (nr, nc) = match action {
            0 => (r - 1, c),
            1 => (r, c + 1),
            2 => (r + 1, c),
            _ => (r, c - 1),
        };
        let in_bounds = nr >= 0 && nr < self.rows as isize && nc >= 0 && nc < self.cols as isize;
        if in_bounds && !self.walls[nr as usize * self.cols + nc as usize] {
            self.state.row = nr as usize;
            self.state.col = nc as usize;
        }
        self.state.steps += 1;
        self.state.transitions += 1;
        let at_goal = (self.state.row, self.state.col) == self.goal;
        let mut reward = STEP_COST;
        if at_goal {
            reward += GOAL_REWARD;
        }
        self.state.done = at_goal || self.state.steps >= self.max_steps;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            terminal: self.state.done,
        })
    }

    fn snapshot(&self) -> GridWorldState {
        self.state.clone()
    }

    fn restore(&mut self, state: &GridWorldState) {
        self.state = state.clone();
    }

    fn transitions(&self) -> u64 {
        self.state.transitions
    }
}
