//! Finite MDPs and the gridworld construction.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Row sums of every stochastic row must match 1 within this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Gridworld actions, in index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Up = 0,
    Down = 1,
    Right = 2,
    Left = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Right, Action::Left];

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Right => (0, 1),
            Action::Left => (0, -1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TabularMDP {
    pub n_states: usize,
    pub n_actions: usize,
    /// `kernel[(s * n_actions + a) * n_states + s']`
    kernel: Vec<f64>,
    /// Nonzero successors per (s, a), for sampling and sparse sweeps.
    successors: Vec<Vec<(usize, f64)>>,
    /// Expected reward r(s, a), `reward[s * n_actions + a]`.
    pub reward: Vec<f64>,
    pub gamma: f64,
    /// Grid coordinates of each state, when built from a map.
    pub state_coords: Option<Vec<(usize, usize)>>,
}

impl TabularMDP {
    /// Build from a dense kernel laid out as `[s][a][s']`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        kernel: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if kernel.len() != n_states * n_actions * n_states {
            return Err(Error::Shape(format!(
                "kernel has {} entries, expected {}",
                kernel.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(Error::Shape(format!(
                "reward has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Precondition(format!("gamma {gamma} outside [0, 1)")));
        }
        let mut successors = Vec::with_capacity(n_states * n_actions);
        for sa in 0..n_states * n_actions {
            let row = &kernel[sa * n_states..(sa + 1) * n_states];
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::Precondition(format!("kernel row {sa} has entries outside [0, 1]")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Precondition(format!("kernel row {sa} sums to {total}")));
            }
            successors.push(row.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(j, &p)| (j, p)).collect());
        }
        Ok(Self { n_states, n_actions, kernel, successors, reward, gamma, state_coords: None })
    }

    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.kernel[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.successors[s * self.n_actions + a]
    }

    /// The unique successor of a deterministic (s, a), if it is deterministic.
    pub fn next_state(&self, s: usize, a: usize) -> Option<usize> {
        match self.successors(s, a) {
            [(next, _)] => Some(*next),
            _ => None,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.successors.iter().all(|row| row.len() == 1)
    }

    pub fn sample_next<R: rand::Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        let row = self.successors(s, a);
        if let [(next, _)] = row {
            return *next;
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(next, p) in row {
            acc += p;
            if u < acc {
                return next;
            }
        }
        row.last().expect("stochastic row is non-empty").0
    }

    /// Replace the reward table.
    pub fn with_reward(mut self, reward: Vec<f64>) -> Result<Self> {
        if reward.len() != self.n_states * self.n_actions {
            return Err(Error::Shape("reward table size".into()));
        }
        self.reward = reward;
        Ok(self)
    }

    pub fn state_of(&self, coord: (usize, usize)) -> Option<usize> {
        self.state_coords.as_ref()?.iter().position(|&c| c == coord)
    }
}

/// One state per non-wall cell; moves into walls leave the state unchanged.
pub fn build_mdp(spec: &GridSpec, gamma: f64) -> Result<TabularMDP> {
    let coords = spec.open_cells();
    let n = coords.len();
    let index = |r: usize, c: usize| coords.binary_search(&(r, c)).ok();
    let na = Action::ALL.len();
    let mut kernel = vec![0.0; n * na * n];
    for (s, &(r, c)) in coords.iter().enumerate() {
        for a in Action::ALL {
            let (dr, dc) = a.delta();
            let (nr, nc) = ((r as isize + dr) as usize, (c as isize + dc) as usize);
            // the border is walled, so neighbours stay in bounds
            let next = if spec.cell(nr, nc).is_open() { index(nr, nc).unwrap() } else { s };
            kernel[(s * na + a as usize) * n + next] = 1.0;
        }
    }
    let mut mdp = TabularMDP::new(n, na, kernel, vec![0.0; n * na], gamma)?;
    mdp.state_coords = Some(coords);
    Ok(mdp)
}

/// Stochastic policy π(a|s), `probs[s * n_actions + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub n_states: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::Shape("policy table size".into()));
        }
        for s in 0..n_states {
            let row = &probs[s * n_actions..(s + 1) * n_actions];
            let total: f64 = row.iter().sum();
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Precondition(format!("policy row {s} is not a distribution")));
            }
        }
        Ok(Self { n_states, n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, probs: vec![1.0 / n_actions as f64; n_states * n_actions] }
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0;
        }
        Self { n_states: actions.len(), n_actions, probs }
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }
}

/// P_π(s, s') = Σ_a π(a|s) p(s'|s, a).
pub fn induced_transition_matrix(mdp: &TabularMDP, policy: &Policy) -> Result<DMatrix<f64>> {
    if policy.n_states != mdp.n_states || policy.n_actions != mdp.n_actions {
        return Err(Error::Shape(format!(
            "policy is {}x{}, mdp is {}x{}",
            policy.n_states, policy.n_actions, mdp.n_states, mdp.n_actions
        )));
    }
    let n = mdp.n_states;
    let mut p = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let w = policy.prob(s, a);
            if w == 0.0 {
                continue;
            }
            for &(next, prob) in mdp.successors(s, a) {
                p[(s, next)] += w * prob;
            }
        }
    }
    Ok(p)
}

/// Check that every row of `m` is a probability distribution.
pub fn is_stochastic(m: &DMatrix<f64>, tol: f64) -> bool {
    m.row_iter().all(|row| {
        row.iter().all(|&x| (-tol..=1.0 + tol).contains(&x)) && (row.sum() - 1.0).abs() <= tol
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_grid;

    fn corridor() -> TabularMDP {
        build_mdp(&parse_grid("####\n#..#\n####").unwrap(), 0.9).unwrap()
    }

    #[test]
    fn single_cell_self_loops() {
        let mdp = build_mdp(&parse_grid("###\n#.#\n###").unwrap(), 0.9).unwrap();
        assert_eq!(mdp.n_states, 1);
        for a in 0..4 {
            assert_eq!(mdp.next_state(0, a), Some(0));
        }
    }

    #[test]
    fn corridor_moves() {
        let mdp = corridor();
        assert_eq!(mdp.n_states, 2);
        assert_eq!(mdp.p(0, Action::Right as usize, 1), 1.0);
        assert_eq!(mdp.next_state(0, Action::Left as usize), Some(0));
        assert_eq!(mdp.next_state(1, Action::Left as usize), Some(0));
        assert_eq!(mdp.next_state(1, Action::Up as usize), Some(1));
        assert!(mdp.reward.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn uniform_policy_on_corridor() {
        // enumerate actions: from each cell exactly one of four moves crosses
        let mdp = corridor();
        let p = induced_transition_matrix(&mdp, &Policy::uniform(2, 4)).unwrap();
        let mut expected = DMatrix::zeros(2, 2);
        for s in 0..2 {
            for a in 0..4 {
                expected[(s, mdp.next_state(s, a).unwrap())] += 0.25;
            }
        }
        assert_eq!(p, expected);
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.25, 0.75]));
    }

    #[test]
    fn deterministic_policy_selects_kernel_row() {
        let mdp = corridor();
        let p = induced_transition_matrix(&mdp, &Policy::deterministic(4, &[2, 2])).unwrap();
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]));
    }

    #[test]
    fn fourroom_kernel_is_stochastic() {
        let mdp = build_mdp(&GridSpec::bundled("fourroom").unwrap(), 0.9).unwrap();
        assert_eq!(mdp.n_states, 104);
        assert!(mdp.is_deterministic());
        let p = induced_transition_matrix(&mdp, &Policy::uniform(104, 4)).unwrap();
        assert!(is_stochastic(&p, STOCHASTIC_TOL));
        // the uniform walk on a deterministic symmetric grid is symmetric
        assert_eq!(p, p.transpose());
    }

    #[test]
    fn shape_mismatch() {
        let mdp = corridor();
        assert!(matches!(
            induced_transition_matrix(&mdp, &Policy::uniform(3, 4)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn rejects_bad_kernel() {
        assert!(TabularMDP::new(1, 1, vec![0.5], vec![0.0], 0.5).is_err());
        assert!(TabularMDP::new(1, 1, vec![1.0], vec![0.0], 1.0).is_err());
        assert!(Policy::new(1, 2, vec![0.7, 0.7]).is_err());
    }
}
