//! Deterministic finite MDPs, the environment registry, and breadth-first
//! shortest-path oracles.
//!
//! Built-in environments:
//!
//! * `chain-N`: a line of `N` states with actions left, right, stay.
//! * `grid-WxH`: an open `W` by `H` grid with actions up, down, left, right, stay.
//! * `four-rooms`: the 11x11 four-rooms layout in [`FOUR_ROOMS_V1`].
//!
//! Appending `:coarse` to an id swaps the identity goal map for a coarse one
//! (column index on grids, `s / 2` on chains). Moves into walls or off the
//! map are self-transitions.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type State = usize;
pub type Action = usize;
pub type Goal = usize;

/// Four-rooms wall map, version 1. `#` is a wall, `.` is open floor.
/// Open cells are numbered in row-major order (104 states).
pub const FOUR_ROOMS_V1: [&str; 11] = [
    ".....#.....",
    ".....#.....",
    "...........",
    ".....#.....",
    ".....#.....",
    "#.####.....",
    ".....###.##",
    ".....#.....",
    ".....#.....",
    "...........",
    ".....#.....",
];

pub const CHAIN_ACTIONS: [&str; 3] = ["left", "right", "stay"];
pub const GRID_ACTIONS: [&str; 5] = ["up", "down", "left", "right", "stay"];

/// Ids accepted by [`resolve`], as printed in usage errors.
pub const REGISTRY: [&str; 4] = ["chain-<N>", "grid-<W>x<H>", "four-rooms", "<id>:coarse"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Normalized coordinates of the state and of the goal.
    #[default]
    Coordinates,
    /// One-hot state id concatenated with one-hot goal id.
    OneHot,
}

/// Real-valued featurization of states and goals, used by the MLP backends.
#[derive(Debug, Clone)]
pub struct StateFeatures {
    state: Vec<Vec<f64>>,
    goal: Vec<Vec<f64>>,
}

impl StateFeatures {
    pub fn state_dim(&self) -> usize {
        self.state.first().map_or(0, Vec::len)
    }

    pub fn goal_dim(&self) -> usize {
        self.goal.first().map_or(0, Vec::len)
    }

    pub fn input_dim(&self) -> usize {
        self.state_dim() + self.goal_dim()
    }

    pub fn state(&self, s: State) -> &[f64] {
        &self.state[s]
    }

    pub fn goal(&self, g: Goal) -> &[f64] {
        &self.goal[g]
    }

    /// Concatenated `state ⊕ goal` input vector.
    pub fn input(&self, s: State, g: Goal) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.input_dim());
        x.extend_from_slice(&self.state[s]);
        x.extend_from_slice(&self.goal[g]);
        x
    }
}

#[derive(Debug, Clone)]
pub struct MdpSpec {
    env_id: String,
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    transitions: Vec<State>,
    goal_map: Vec<Goal>,
    goal_count: usize,
    start_states: Vec<State>,
    stay_action: Action,
    action_names: Vec<String>,
    state_coords: Vec<Vec<f64>>,
    goal_coords: Vec<Vec<f64>>,
}

/// Raw parts of an [`MdpSpec`]; validated by [`MdpSpec::new`].
#[derive(Debug, Clone)]
pub struct MdpParts {
    pub env_id: String,
    pub num_actions: usize,
    pub horizon: usize,
    /// Row-major `state * num_actions + action`.
    pub transitions: Vec<State>,
    pub goal_map: Vec<Goal>,
    pub goal_count: usize,
    pub start_states: Vec<State>,
    pub stay_action: Action,
    pub action_names: Vec<String>,
    pub state_coords: Vec<Vec<f64>>,
    pub goal_coords: Vec<Vec<f64>>,
}

impl MdpSpec {
    pub fn new(parts: MdpParts) -> Result<Self> {
        let MdpParts {
            env_id,
            num_actions,
            horizon,
            transitions,
            goal_map,
            goal_count,
            start_states,
            stay_action,
            action_names,
            state_coords,
            goal_coords,
        } = parts;
        let num_states = goal_map.len();
        if num_states == 0 || num_actions == 0 || horizon == 0 || goal_count == 0 {
            return Err(Error::domain("state, action, goal counts and horizon must be positive"));
        }
        if transitions.len() != num_states * num_actions {
            return Err(Error::domain("transition table is not total"));
        }
        if let Some(&bad) = transitions.iter().find(|&&t| t >= num_states) {
            return Err(Error::domain(format!("transition to invalid state {bad}")));
        }
        if stay_action >= num_actions {
            return Err(Error::domain("stay action out of range"));
        }
        for s in 0..num_states {
            if transitions[s * num_actions + stay_action] != s {
                return Err(Error::domain(format!("state {s} has no stationary action")));
            }
        }
        if goal_map.iter().any(|&g| g >= goal_count) {
            return Err(Error::domain("goal map outside [0, goal_count)"));
        }
        if start_states.is_empty() || start_states.iter().any(|&s| s >= num_states) {
            return Err(Error::domain("start states must be a non-empty set of valid states"));
        }
        if state_coords.len() != num_states || goal_coords.len() != goal_count {
            return Err(Error::domain("feature tables do not match state/goal counts"));
        }
        Ok(Self {
            env_id,
            num_states,
            num_actions,
            horizon,
            transitions,
            goal_map,
            goal_count,
            start_states,
            stay_action,
            action_names,
            state_coords,
            goal_coords,
        })
    }

    pub fn chain(n: usize, coarse: bool) -> Result<Self> {
        if n < 2 {
            return Err(Error::domain("chain needs at least 2 states"));
        }
        let mut transitions = Vec::with_capacity(n * 3);
        for s in 0..n {
            transitions.extend([s.saturating_sub(1), (s + 1).min(n - 1), s]);
        }
        let (goal_map, goal_count): (Vec<Goal>, usize) = if coarse {
            ((0..n).map(|s| s / 2).collect(), n.div_ceil(2))
        } else {
            ((0..n).collect(), n)
        };
        let norm = |v: usize, count: usize| if count > 1 { v as f64 / (count - 1) as f64 } else { 0.0 };
        let state_coords: Vec<Vec<f64>> = (0..n).map(|s| vec![norm(s, n)]).collect();
        let goal_coords = if coarse {
            (0..goal_count).map(|g| vec![norm(g, goal_count)]).collect()
        } else {
            state_coords.clone()
        };
        Self::new(MdpParts {
            env_id: format!("chain-{n}{}", if coarse { ":coarse" } else { "" }),
            num_actions: 3,
            horizon: 2 * n,
            transitions,
            goal_map,
            goal_count,
            start_states: (0..n).collect(),
            stay_action: 2,
            action_names: CHAIN_ACTIONS.iter().map(|s| s.to_string()).collect(),
            state_coords,
            goal_coords,
        })
    }

    /// Grid world from a wall bitmap (`#` wall, anything else open).
    pub fn grid_from_map(env_id: &str, rows: &[&str], coarse: bool, horizon: usize) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        if height == 0 || width == 0 || rows.iter().any(|r| r.chars().count() != width) {
            return Err(Error::domain("wall map must be a non-empty rectangle"));
        }
        let open: Vec<Vec<bool>> = rows.iter().map(|r| r.chars().map(|c| c != '#').collect()).collect();
        let mut index = vec![vec![None; width]; height];
        let mut cells = Vec::new();
        for (y, row) in open.iter().enumerate() {
            for (x, &is_open) in row.iter().enumerate() {
                if is_open {
                    index[y][x] = Some(cells.len());
                    cells.push((x, y));
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::domain("wall map has no open cells"));
        }
        let moves: [(isize, isize); 5] = [(0, -1), (0, 1), (-1, 0), (1, 0), (0, 0)];
        let mut transitions = Vec::with_capacity(cells.len() * moves.len());
        for (s, &(x, y)) in cells.iter().enumerate() {
            for (dx, dy) in moves {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                let next = if nx >= 0 && ny >= 0 && (nx as usize) < width && (ny as usize) < height {
                    index[ny as usize][nx as usize].unwrap_or(s)
                } else {
                    s
                };
                transitions.push(next);
            }
        }
        let norm = |v: usize, count: usize| if count > 1 { v as f64 / (count - 1) as f64 } else { 0.0 };
        let state_coords: Vec<Vec<f64>> =
            cells.iter().map(|&(x, y)| vec![norm(x, width), norm(y, height)]).collect();
        let (goal_map, goal_count, goal_coords) = if coarse {
            (
                cells.iter().map(|&(x, _)| x).collect(),
                width,
                (0..width).map(|x| vec![norm(x, width)]).collect(),
            )
        } else {
            ((0..cells.len()).collect(), cells.len(), state_coords.clone())
        };
        Self::new(MdpParts {
            env_id: env_id.to_string(),
            num_actions: moves.len(),
            horizon,
            transitions,
            goal_map,
            goal_count,
            start_states: (0..cells.len()).collect(),
            stay_action: 4,
            action_names: GRID_ACTIONS.iter().map(|s| s.to_string()).collect(),
            state_coords,
            goal_coords,
        })
    }

    pub fn grid(width: usize, height: usize, coarse: bool) -> Result<Self> {
        let row = ".".repeat(width);
        let rows: Vec<&str> = (0..height).map(|_| row.as_str()).collect();
        let id = format!("grid-{width}x{height}{}", if coarse { ":coarse" } else { "" });
        Self::grid_from_map(&id, &rows, coarse, 2 * (width + height))
    }

    pub fn four_rooms(coarse: bool) -> Result<Self> {
        let id = if coarse { "four-rooms:coarse" } else { "four-rooms" };
        Self::grid_from_map(id, &FOUR_ROOMS_V1, coarse, 60)
    }

    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::domain("horizon must be positive"));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn env_id(&self) -> &str {
        &self.env_id
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn goal_count(&self) -> usize {
        self.goal_count
    }

    pub fn start_states(&self) -> &[State] {
        &self.start_states
    }

    pub fn stay_action(&self) -> Action {
        self.stay_action
    }

    pub fn action_names(&self) -> &[String] {
        &self.action_names
    }

    /// Deterministic successor `f(s, a)`.
    pub fn step(&self, s: State, a: Action) -> Result<State> {
        if s >= self.num_states {
            return Err(Error::domain(format!("state {s} out of range")));
        }
        if a >= self.num_actions {
            return Err(Error::domain(format!("action {a} out of range")));
        }
        Ok(self.transitions[s * self.num_actions + a])
    }

    /// Unchecked successor for hot loops over valid indices.
    #[inline]
    pub fn next(&self, s: State, a: Action) -> State {
        self.transitions[s * self.num_actions + a]
    }

    #[inline]
    pub fn phi(&self, s: State) -> Goal {
        self.goal_map[s]
    }

    /// Sparse reward: 0 when the successor achieves `g`, otherwise -1.
    pub fn reward(&self, s: State, a: Action, s_next: State, g: Goal) -> Result<i32> {
        if s >= self.num_states || s_next >= self.num_states {
            return Err(Error::domain("state out of range"));
        }
        if a >= self.num_actions {
            return Err(Error::domain(format!("action {a} out of range")));
        }
        if g >= self.goal_count {
            return Err(Error::domain(format!("goal {g} out of range")));
        }
        Ok(self.reward_unchecked(s_next, g))
    }

    #[inline]
    pub fn reward_unchecked(&self, s_next: State, g: Goal) -> i32 {
        if self.goal_map[s_next] == g {
            0
        } else {
            -1
        }
    }

    /// Actions `a` with `f(s, a) = s`.
    pub fn stationary_actions(&self, s: State) -> Vec<Action> {
        (0..self.num_actions).filter(|&a| self.next(s, a) == s).collect()
    }

    pub fn features(&self, kind: FeatureKind) -> StateFeatures {
        match kind {
            FeatureKind::Coordinates => StateFeatures {
                state: self.state_coords.clone(),
                goal: self.goal_coords.clone(),
            },
            FeatureKind::OneHot => {
                let one_hot = |i: usize, n: usize| {
                    let mut v = vec![0.0; n];
                    v[i] = 1.0;
                    v
                };
                StateFeatures {
                    state: (0..self.num_states).map(|s| one_hot(s, self.num_states)).collect(),
                    goal: (0..self.goal_count).map(|g| one_hot(g, self.goal_count)).collect(),
                }
            }
        }
    }

    /// Minimum number of actions from `s` to any state achieving `g`, by
    /// forward breadth-first search. `None` if unreachable.
    pub fn shortest_distance(&self, s: State, g: Goal) -> Option<usize> {
        if self.phi(s) == g {
            return Some(0);
        }
        let mut seen = vec![false; self.num_states];
        let mut queue = VecDeque::from([(s, 0usize)]);
        seen[s] = true;
        while let Some((cur, depth)) = queue.pop_front() {
            if depth >= self.num_states {
                break;
            }
            for a in 0..self.num_actions {
                let nxt = self.next(cur, a);
                if seen[nxt] {
                    continue;
                }
                if self.phi(nxt) == g {
                    return Some(depth + 1);
                }
                seen[nxt] = true;
                queue.push_back((nxt, depth + 1));
            }
        }
        None
    }

    /// Goals achievable from `s`, in increasing id order.
    pub fn reachable_goals(&self, s: State) -> Vec<Goal> {
        let mut seen = vec![false; self.num_states];
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(cur) = stack.pop() {
            for a in 0..self.num_actions {
                let nxt = self.next(cur, a);
                if !seen[nxt] {
                    seen[nxt] = true;
                    stack.push(nxt);
                }
            }
        }
        let mut goals: Vec<Goal> = (0..self.num_states).filter(|&t| seen[t]).map(|t| self.phi(t)).collect();
        goals.sort_unstable();
        goals.dedup();
        goals
    }
}

/// Resolve an environment id from the registry with its default horizon.
pub fn resolve(env_id: &str) -> Result<MdpSpec> {
    let unknown = || Error::UnknownEnv {
        env_id: env_id.to_string(),
        known: REGISTRY.join(", "),
    };
    let (base, coarse) = match env_id.strip_suffix(":coarse") {
        Some(base) => (base, true),
        None => (env_id, false),
    };
    if base == "four-rooms" {
        return MdpSpec::four_rooms(coarse);
    }
    if let Some(n) = base.strip_prefix("chain-") {
        let n: usize = n.parse().map_err(|_| unknown())?;
        return MdpSpec::chain(n, coarse).map_err(|_| unknown());
    }
    if let Some(dims) = base.strip_prefix("grid-") {
        let (w, h) = dims.split_once(['x', '×']).ok_or_else(unknown)?;
        let w: usize = w.parse().map_err(|_| unknown())?;
        let h: usize = h.parse().map_err(|_| unknown())?;
        if w == 0 || h == 0 {
            return Err(unknown());
        }
        return MdpSpec::grid(w, h, coarse);
    }
    Err(unknown())
}

pub fn resolve_with_horizon(env_id: &str, horizon: Option<usize>) -> Result<MdpSpec> {
    let spec = resolve(env_id)?;
    match horizon {
        Some(h) => spec.with_horizon(h),
        None => Ok(spec),
    }
}

/// All-pairs goal distances computed by reverse breadth-first search from
/// each goal's achieving set.
#[derive(Debug, Clone)]
pub struct DistanceTable {
    num_states: usize,
    /// `dist[g * num_states + s]`, `usize::MAX` when unreachable.
    dist: Vec<usize>,
}

impl DistanceTable {
    pub fn new(spec: &MdpSpec) -> Self {
        let n = spec.num_states();
        let mut preds: Vec<Vec<State>> = vec![Vec::new(); n];
        for s in 0..n {
            for a in 0..spec.num_actions() {
                let t = spec.next(s, a);
                if t != s {
                    preds[t].push(s);
                }
            }
        }
        let mut dist = vec![usize::MAX; spec.goal_count() * n];
        for g in 0..spec.goal_count() {
            let row = &mut dist[g * n..(g + 1) * n];
            let mut queue = VecDeque::new();
            for s in 0..n {
                if spec.phi(s) == g {
                    row[s] = 0;
                    queue.push_back(s);
                }
            }
            while let Some(cur) = queue.pop_front() {
                for &p in &preds[cur] {
                    if row[p] == usize::MAX {
                        row[p] = row[cur] + 1;
                        queue.push_back(p);
                    }
                }
            }
        }
        Self { num_states: n, dist }
    }

    pub fn get(&self, s: State, g: Goal) -> Option<usize> {
        let d = self.dist[g * self.num_states + s];
        (d != usize::MAX).then_some(d)
    }

    /// Lowest-id action on a shortest path from `s` to `g`, or `None` when `g`
    /// is unreachable. At the goal this is the lowest-id stationary action.
    pub fn optimal_action(&self, spec: &MdpSpec, s: State, g: Goal) -> Option<Action> {
        let d = self.get(s, g)?;
        if d == 0 {
            return Some(spec.stay_action());
        }
        (0..spec.num_actions()).find(|&a| self.get(spec.next(s, a), g) == Some(d - 1))
    }
}
