//! Dynamic-programming solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{Policy, TabularMDP};

/// Values at or below this count as non-positive when deciding whether the
/// terminate action wins.
pub const TIE_TOL: f64 = 1e-10;

/// Action values, `values[s * width + a]`; with `terminate` set, the last
/// column holds the terminate action (always 0).
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub terminate: bool,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize, terminate: bool) -> Self {
        let width = n_actions + usize::from(terminate);
        Self { n_states, n_actions, terminate, values: vec![0.0; n_states * width] }
    }

    pub fn width(&self) -> usize {
        self.n_actions + usize::from(self.terminate)
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.width() + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        let w = self.width();
        self.values[s * w + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        let w = self.width();
        &self.values[s * w..s * w + self.n_actions]
    }

    /// Best primitive action value in `s`.
    pub fn max_primitive(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Lowest-index primitive action attaining the maximum.
    pub fn greedy_primitive(&self, s: usize) -> usize {
        argmax_first(self.row(s))
    }

    /// Greedy choice including terminate: `None` when terminate wins.
    pub fn greedy(&self, s: usize) -> Option<usize> {
        if self.terminate && self.max_primitive(s) <= TIE_TOL {
            None
        } else {
            Some(self.greedy_primitive(s))
        }
    }

    /// `max(0, max_a q(s, a))` with terminate, `max_a q(s, a)` otherwise.
    pub fn state_value(&self, s: usize) -> f64 {
        let m = self.max_primitive(s);
        if self.terminate {
            m.max(0.0)
        } else {
            m
        }
    }
}

pub(crate) fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// v = (I − γP)⁻¹ r for γ < 1.
pub fn policy_evaluation(p: &DMatrix<f64>, r: &DVector<f64>, gamma: f64) -> Result<DVector<f64>> {
    let n = p.nrows();
    if p.ncols() != n || r.len() != n {
        return Err(Error::Shape(format!("P is {}x{}, r has {}", n, p.ncols(), r.len())));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Precondition(format!(
            "gamma {gamma} needs an absorbing set; use policy_evaluation_absorbing"
        )));
    }
    let a = DMatrix::identity(n, n) - p * gamma;
    a.lu().solve(r).ok_or_else(|| Error::Numeric("singular system".into()))
}

/// Undiscounted evaluation with absorbing states (value 0 there).
///
/// Fails with `NoConvergence` when some state cannot reach the absorbing set.
pub fn policy_evaluation_absorbing(p: &DMatrix<f64>, r: &DVector<f64>, absorbing: &[bool]) -> Result<DVector<f64>> {
    let n = p.nrows();
    if p.ncols() != n || r.len() != n || absorbing.len() != n {
        return Err(Error::Shape("absorbing evaluation inputs disagree".into()));
    }
    let reach = reaches(p, absorbing);
    if let Some(s) = reach.iter().position(|&ok| !ok) {
        return Err(Error::NoConvergence(format!("state {s} cannot reach the absorbing set")));
    }
    let free: Vec<usize> = (0..n).filter(|&s| !absorbing[s]).collect();
    let m = free.len();
    let mut a = DMatrix::<f64>::identity(m, m);
    let mut b = DVector::<f64>::zeros(m);
    for (i, &s) in free.iter().enumerate() {
        b[i] = r[s];
        for (j, &t) in free.iter().enumerate() {
            a[(i, j)] -= p[(s, t)];
        }
    }
    let x = a.lu().solve(&b).ok_or_else(|| Error::Numeric("singular system".into()))?;
    let mut v = DVector::zeros(n);
    for (i, &s) in free.iter().enumerate() {
        v[s] = x[i];
    }
    Ok(v)
}

/// States with a positive-probability path into `target`.
pub fn reaches(p: &DMatrix<f64>, target: &[bool]) -> Vec<bool> {
    let n = p.nrows();
    let mut ok = target.to_vec();
    let mut stack: Vec<usize> = (0..n).filter(|&s| target[s]).collect();
    while let Some(t) = stack.pop() {
        for s in 0..n {
            if !ok[s] && p[(s, t)] > 0.0 {
                ok[s] = true;
                stack.push(s);
            }
        }
    }
    ok
}

/// Residual ‖v − (r + γPv)‖∞.
pub fn bellman_residual(p: &DMatrix<f64>, r: &DVector<f64>, gamma: f64, v: &DVector<f64>) -> f64 {
    (v - (r + p * v * gamma)).amax()
}

/// q(s, a) = r(s, a) + γ Σ p(s'|s,a) cont(s').
pub fn backup(mdp: &TabularMDP, reward: &[f64], gamma: f64, cont: &[f64], s: usize, a: usize) -> f64 {
    let mut q = reward[s * mdp.n_actions + a];
    for &(next, p) in mdp.successors(s, a) {
        q += gamma * p * cont[next];
    }
    q
}

/// Optimal action values for a reward over (s, a), `reward[s * n_actions + a]`.
///
/// With `terminate_action`, an extra action of value 0 ends the episode and
/// wins ties. Returns the q table and the greedy policy (over `n_actions + 1`
/// actions when terminate is present, terminate last).
pub fn policy_iteration(mdp: &TabularMDP, reward: &[f64], gamma: f64, terminate_action: bool) -> Result<(QTable, Policy)> {
    policy_iteration_absorbing(mdp, reward, gamma, terminate_action, &vec![false; mdp.n_states])
}

/// As [`policy_iteration`], with the continuation value fixed at 0 in the
/// `absorbing` states (entering them ends the episode).
pub fn policy_iteration_absorbing(
    mdp: &TabularMDP,
    reward: &[f64],
    gamma: f64,
    terminate_action: bool,
    absorbing: &[bool],
) -> Result<(QTable, Policy)> {
    let (n, na) = (mdp.n_states, mdp.n_actions);
    if absorbing.len() != n {
        return Err(Error::Shape("absorbing mask length".into()));
    }
    if reward.len() != n * na {
        return Err(Error::Shape(format!("reward has {} entries, expected {}", reward.len(), n * na)));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Precondition(format!("gamma {gamma} outside [0, 1)")));
    }
    // None = terminate
    let mut pol: Vec<Option<usize>> = vec![if terminate_action { None } else { Some(0) }; n];
    let mut v = DVector::<f64>::zeros(n);
    let mut q = QTable::zeros(n, na, terminate_action);
    for iter in 0.. {
        let v_new = evaluate_deterministic(mdp, reward, gamma, &pol, absorbing)?;
        let delta = (&v_new - &v).amax();
        v = v_new;
        let cont: Vec<f64> = v.iter().copied().collect();
        let mut stable = true;
        for s in 0..n {
            for a in 0..na {
                q.set(s, a, backup(mdp, reward, gamma, &cont, s, a));
            }
            let best = q.greedy(s);
            let choice = match (best, pol[s]) {
                (Some(b), Some(cur)) if q.get(s, cur) >= q.get(s, b) - 1e-12 => Some(cur),
                _ => best,
            };
            if choice != pol[s] {
                stable = false;
                pol[s] = choice;
            }
        }
        if stable && delta < TIE_TOL {
            break;
        }
        if iter > 10 * n + 100 {
            return Err(Error::NoConvergence("policy iteration did not stabilise".into()));
        }
    }
    // final greedy choice under the documented tie-break
    let actions: Vec<usize> = (0..n).map(|s| q.greedy(s).unwrap_or(na)).collect();
    let policy = Policy::deterministic(na + usize::from(terminate_action), &actions);
    Ok((q, policy))
}

fn evaluate_deterministic(
    mdp: &TabularMDP,
    reward: &[f64],
    gamma: f64,
    pol: &[Option<usize>],
    absorbing: &[bool],
) -> Result<DVector<f64>> {
    let n = mdp.n_states;
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        if absorbing[s] {
            continue;
        }
        if let Some(act) = pol[s] {
            b[s] = reward[s * mdp.n_actions + act];
            for &(next, p) in mdp.successors(s, act) {
                a[(s, next)] -= gamma * p;
            }
        }
    }
    a.lu().solve(&b).ok_or_else(|| Error::Numeric("singular policy system".into()))
}

/// Value iteration to a sup-norm change below `tol`; reference solver.
pub fn value_iteration(mdp: &TabularMDP, reward: &[f64], gamma: f64, terminate_action: bool, tol: f64) -> QTable {
    let (n, na) = (mdp.n_states, mdp.n_actions);
    let mut q = QTable::zeros(n, na, terminate_action);
    loop {
        let cont: Vec<f64> = (0..n).map(|s| q.state_value(s)).collect();
        let mut delta: f64 = 0.0;
        let mut next = q.clone();
        for s in 0..n {
            for a in 0..na {
                let x = backup(mdp, reward, gamma, &cont, s, a);
                delta = delta.max((x - q.get(s, a)).abs());
                next.set(s, a, x);
            }
        }
        q = next;
        if delta < tol {
            return q;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_grid;
    use crate::mdp::build_mdp;

    fn toggle() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
    }

    #[test]
    fn zero_reward_gives_zero_values() {
        let v = policy_evaluation(&toggle(), &DVector::zeros(2), 0.9).unwrap();
        assert_eq!(v, DVector::zeros(2));
    }

    #[test]
    fn toggle_chain_values() {
        // v = Ψ r with Ψ = [[4/3, 2/3], [2/3, 4/3]]
        let v = policy_evaluation(&toggle(), &DVector::from_vec(vec![1.0, 0.0]), 0.5).unwrap();
        assert!((v[0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((v[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn absorbing_toggle_takes_one_decision() {
        let v = policy_evaluation_absorbing(&toggle(), &DVector::from_vec(vec![1.0, 0.0]), &[false, true]).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn absorbing_requires_reachability() {
        let p = DMatrix::identity(2, 2);
        let e = policy_evaluation_absorbing(&p, &DVector::from_vec(vec![1.0, 0.0]), &[false, true]).unwrap_err();
        assert!(matches!(e, Error::NoConvergence(_)));
    }

    #[test]
    fn all_zero_reward_terminates_everywhere() {
        let mdp = build_mdp(&parse_grid("####\n#..#\n####").unwrap(), 0.9).unwrap();
        let (q, pol) = policy_iteration(&mdp, &[0.0; 8], 0.9, true).unwrap();
        for s in 0..2 {
            assert_eq!(q.greedy(s), None);
            assert_eq!(pol.prob(s, 4), 1.0);
        }
    }

    #[test]
    fn eigenpurpose_on_corridor_moves_right_then_stops() {
        // e = [2, 5]: moving 0 -> 1 earns 3, every other transition earns 0 or -3
        let mdp = build_mdp(&parse_grid("####\n#..#\n####").unwrap(), 0.9).unwrap();
        let e = [2.0, 5.0];
        let mut r = vec![0.0; 8];
        for s in 0..2 {
            for a in 0..4 {
                r[s * 4 + a] = e[mdp.next_state(s, a).unwrap()] - e[s];
            }
        }
        let (q, _) = policy_iteration(&mdp, &r, 0.9, true).unwrap();
        assert!((q.get(0, 2) - 3.0).abs() < 1e-12);
        assert_eq!(q.greedy(0), Some(2));
        assert_eq!(q.greedy(1), None);
    }

    #[test]
    fn matches_value_iteration_on_small_grid() {
        let mdp = build_mdp(&parse_grid("######\n#....#\n#.#..#\n#....#\n######").unwrap(), 0.9).unwrap();
        let n = mdp.n_states;
        let e: Vec<f64> = (0..n).map(|s| ((s * 7 + 3) % 11) as f64 - 5.0).collect();
        let mut r = vec![0.0; n * 4];
        for s in 0..n {
            for a in 0..4 {
                r[s * 4 + a] = e[mdp.next_state(s, a).unwrap()] - e[s];
            }
        }
        for term in [false, true] {
            let (q, _) = policy_iteration(&mdp, &r, 0.9, term).unwrap();
            let oracle = value_iteration(&mdp, &r, 0.9, term, 1e-14);
            for s in 0..n {
                for a in 0..4 {
                    assert!((q.get(s, a) - oracle.get(s, a)).abs() < 1e-10);
                }
                assert_eq!(q.greedy(s), oracle.greedy(s));
            }
        }
    }
}
