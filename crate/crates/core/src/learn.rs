//! Q-learning, online with options as exploratory behaviour, or replayed over
//! a stored dataset.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::mdp::TabularMDP;
use crate::option::{max_option_steps, OptionDef};
use crate::rng::Rng;
use crate::rollout::TransitionDataset;
use crate::solve::QTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreak {
    /// Lowest action index.
    First,
    /// Uniform among the maximisers.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub episodes: usize,
    pub max_steps: usize,
    pub tie_break: TieBreak,
}

impl Default for QParams {
    fn default() -> Self {
        Self { alpha: 0.1, gamma: 0.9, epsilon: 0.05, episodes: 50, max_steps: 1000, tie_break: TieBreak::First }
    }
}

/// Episodic task: a start state and a goal that pays +1 and ends the episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoalTask {
    pub start: usize,
    pub goal: usize,
}

#[derive(Debug, Clone)]
pub struct QLearnResult {
    pub q: QTable,
    /// Undiscounted return of each episode (1 when the goal was reached).
    pub returns: Vec<f64>,
    /// Discounted return of each episode.
    pub discounted: Vec<f64>,
    /// Primitive steps taken in each episode.
    pub steps: Vec<usize>,
}

fn greedy(q: &QTable, s: usize, tie: TieBreak, rng: &mut Rng) -> usize {
    match tie {
        TieBreak::First => q.greedy_primitive(s),
        TieBreak::Random => {
            let row = q.row(s);
            let m = q.max_primitive(s);
            let n_best = row.iter().filter(|&&x| x == m).count();
            let pick = if n_best == 1 { 0 } else { rng.random_range(0..n_best) };
            row.iter().enumerate().filter(|(_, &x)| x == m).nth(pick).map(|(a, _)| a).unwrap()
        }
    }
}

/// Q-learning over primitive actions with ε-greedy exploration; exploratory
/// decisions pick uniformly among primitives and the options available in
/// the current state. Primitive steps taken inside an option update q
/// off-policy.
pub fn q_learning(
    mdp: &TabularMDP,
    task: GoalTask,
    options: &[OptionDef],
    params: &QParams,
    init: Option<QTable>,
    rng: &mut Rng,
) -> Result<QLearnResult> {
    if params.alpha < 0.0 || !(0.0..=1.0).contains(&params.epsilon) {
        return Err(Error::Precondition("alpha must be >= 0 and epsilon in [0, 1]".into()));
    }
    let na = mdp.n_actions;
    let mut q = init.unwrap_or_else(|| QTable::zeros(mdp.n_states, na, false));
    let cap = max_option_steps(mdp.n_states);
    let mut returns = Vec::with_capacity(params.episodes);
    let mut discounted = Vec::with_capacity(params.episodes);
    let mut steps = Vec::with_capacity(params.episodes);
    let mut available = Vec::new();

    let update = |q: &mut QTable, s: usize, a: usize, next: usize| -> f64 {
        let done = next == task.goal;
        let r = if done { 1.0 } else { 0.0 };
        let target = if done { r } else { r + params.gamma * q.max_primitive(next) };
        let old = q.get(s, a);
        q.set(s, a, old + params.alpha * (target - old));
        r
    };

    for _ in 0..params.episodes {
        let (mut s, mut t, mut ret, mut dret, mut disc) = (task.start, 0usize, 0.0, 0.0, 1.0);
        while t < params.max_steps && s != task.goal {
            let explore = params.epsilon > 0.0 && rng.random::<f64>() < params.epsilon;
            let choice = if explore {
                available.clear();
                available.extend((0..options.len()).filter(|&k| options[k].available(s)));
                let k = rng.random_range(0..na + available.len());
                if k < na {
                    (k, None)
                } else {
                    (0, Some(available[k - na]))
                }
            } else {
                (greedy(&q, s, params.tie_break, rng), None)
            };
            match choice {
                (a, None) => {
                    let next = mdp.sample_next(s, a, rng);
                    let r = update(&mut q, s, a, next);
                    ret += r;
                    dret += disc * r;
                    disc *= params.gamma;
                    s = next;
                    t += 1;
                }
                (_, Some(k)) => {
                    let opt = &options[k];
                    for _ in 0..cap {
                        let a = opt.policy[s];
                        let next = mdp.sample_next(s, a, rng);
                        let r = update(&mut q, s, a, next);
                        ret += r;
                        dret += disc * r;
                        disc *= params.gamma;
                        s = next;
                        t += 1;
                        if s == task.goal || t >= params.max_steps || opt.is_terminal(s) {
                            break;
                        }
                        let beta = opt.termination[s];
                        if beta > 0.0 && rng.random::<f64>() < beta {
                            break;
                        }
                    }
                }
            }
        }
        returns.push(ret);
        discounted.push(dret);
        steps.push(t);
    }
    Ok(QLearnResult { q, returns, discounted, steps })
}

/// Q-learning replayed over the primitive records of a dataset, in dataset
/// order, `passes` times. With `terminate`, bootstrapping uses
/// `max(0, max_a q)` and the table carries a terminate column.
pub fn q_learning_replay<F>(
    data: &TransitionDataset,
    reward: F,
    alpha: f64,
    gamma: f64,
    passes: usize,
    terminate: bool,
) -> QTable
where
    F: Fn(usize, usize) -> f64,
{
    let mut q = QTable::zeros(data.n_states, data.n_actions, terminate);
    let prims: Vec<(usize, usize, usize, f64)> = data
        .records()
        .iter()
        .filter(|t| t.primitive)
        .map(|t| (t.s, t.a, t.next, reward(t.s, t.next)))
        .collect();
    for _ in 0..passes {
        for &(s, a, next, r) in &prims {
            let target = r + gamma * q.state_value(next);
            let old = q.get(s, a);
            q.set(s, a, old + alpha * (target - old));
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_grid;
    use crate::mdp::build_mdp;
    use crate::rng::rng;
    use crate::solve::value_iteration;

    fn corridor(n: usize) -> TabularMDP {
        let wall = "#".repeat(n + 2);
        build_mdp(&parse_grid(&format!("{wall}\n#{}#\n{wall}", ".".repeat(n))).unwrap(), 0.9).unwrap()
    }

    #[test]
    fn greedy_on_solved_table_is_deterministic() {
        let mdp = corridor(5);
        let task = GoalTask { start: 0, goal: 4 };
        let mut reward = vec![0.0; 20];
        for s in 0..5 {
            for a in 0..4 {
                if s != 4 && mdp.next_state(s, a) == Some(4) {
                    reward[s * 4 + a] = 1.0;
                }
            }
        }
        let mut solved = value_iteration(&mdp, &reward, 0.9, false, 1e-12);
        for a in 0..4 {
            solved.set(4, a, 0.0);
        }
        let params = QParams { alpha: 0.0, epsilon: 0.0, episodes: 3, ..QParams::default() };
        let out = q_learning(&mdp, task, &[], &params, Some(solved.clone()), &mut rng(0)).unwrap();
        // four moves right, reward on the last
        let expected = 0.9f64.powi(3);
        assert!(out.discounted.iter().all(|&g| (g - expected).abs() < 1e-12));
        assert_eq!(out.returns, vec![1.0; 3]);
        assert_eq!(out.steps, vec![4, 4, 4]);
        assert_eq!(out.q, solved);
    }

    #[test]
    fn zero_alpha_zero_epsilon_leaves_table() {
        let mdp = corridor(4);
        let params = QParams { alpha: 0.0, epsilon: 0.0, episodes: 2, max_steps: 20, ..QParams::default() };
        let out = q_learning(&mdp, GoalTask { start: 0, goal: 3 }, &[], &params, None, &mut rng(3)).unwrap();
        assert!(out.q.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn replay_learns_corridor_values() {
        let mdp = corridor(3);
        let data = TransitionDataset::full_sweep(&mdp).unwrap();
        let e = [0.0, 1.0, 3.0];
        let q = q_learning_replay(&data, |s, n| e[n] - e[s], 0.5, 0.9, 400, true);
        assert_eq!(q.greedy(0), Some(2));
        assert_eq!(q.greedy(1), Some(2));
        assert_eq!(q.greedy(2), None);
        assert!((q.get(1, 2) - 2.0).abs() < 1e-9);
    }
}
