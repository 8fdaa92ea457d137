//! Option discovery: eigenoptions, covering options and covering eigenoptions.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::learn::q_learning_replay;
use crate::mdp::TabularMDP;
use crate::option::{max_option_steps, OptionDef};
use crate::rng::{split, Rng};
use crate::rollout::{run_with_options, Rollout, RolloutConfig, Sampler, TransitionDataset};
use crate::solve::{policy_iteration, policy_iteration_absorbing, reaches, QTable, TIE_TOL};
use crate::spectral::{action_count_adjacency_with_options, adjacency_with_options, eigendecompose, normalized_laplacian, EigenBasis};
use crate::sr::{sr_closed_form, sr_td_learn, SRMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PurposeKind {
    /// r(s, s') = e(s') − e(s).
    Eigenoption,
    /// r(s, s') = 1 iff s' = argmax e.
    Covering,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpurpose {
    pub vector: DVector<f64>,
    /// +1 or −1.
    pub direction: f64,
    pub kind: PurposeKind,
}

impl Eigenpurpose {
    pub fn new(vector: DVector<f64>, direction: f64, kind: PurposeKind) -> Self {
        Self { vector, direction, kind }
    }

    /// direction · e.
    pub fn oriented(&self) -> DVector<f64> {
        &self.vector * self.direction
    }

    pub fn mirrored(&self) -> Self {
        Self { vector: self.vector.clone(), direction: -self.direction, kind: self.kind }
    }

    /// Lowest-index state attaining the maximum of direction · e.
    pub fn argmax(&self) -> usize {
        argmax_first(self.oriented().as_slice())
    }

    /// Lowest-index state attaining the minimum of direction · e.
    pub fn argmin(&self) -> usize {
        let neg: Vec<f64> = self.oriented().iter().map(|x| -x).collect();
        argmax_first(&neg)
    }

    pub fn reward(&self, s: usize, next: usize) -> f64 {
        match self.kind {
            PurposeKind::Eigenoption => self.direction * (self.vector[next] - self.vector[s]),
            PurposeKind::Covering => f64::from(u8::from(next == self.argmax())),
        }
    }

    /// Expected reward per (s, a) under the kernel.
    pub fn reward_table(&self, mdp: &TabularMDP) -> Vec<f64> {
        let na = mdp.n_actions;
        let goal = self.argmax();
        let mut r = vec![0.0; mdp.n_states * na];
        for s in 0..mdp.n_states {
            for a in 0..na {
                r[s * na + a] = mdp
                    .successors(s, a)
                    .iter()
                    .map(|&(next, p)| {
                        p * match self.kind {
                            PurposeKind::Eigenoption => self.direction * (self.vector[next] - self.vector[s]),
                            PurposeKind::Covering => f64::from(u8::from(next == goal)),
                        }
                    })
                    .sum();
            }
        }
        r
    }
}

fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// r(s, s') for an eigenpurpose.
pub fn eigenpurpose_reward(e: &Eigenpurpose) -> impl Fn(usize, usize) -> f64 + '_ {
    move |s, next| e.reward(s, next)
}

/// Option that acts greedily on `q` and terminates where no primitive
/// action has positive value.
pub fn option_from_q(q: &QTable, label: impl Into<String>) -> OptionDef {
    let n = q.n_states;
    let mut initiation = vec![false; n];
    let mut policy = vec![0; n];
    let mut termination = vec![1.0; n];
    for s in 0..n {
        if q.max_primitive(s) > TIE_TOL {
            initiation[s] = true;
            policy[s] = q.greedy_primitive(s);
            termination[s] = 0.0;
        }
    }
    OptionDef { initiation, policy, termination, label: label.into() }
}

/// How option policies are obtained from an eigenpurpose.
#[derive(Debug, Clone, Copy)]
pub enum OptionSolver<'a> {
    ClosedForm,
    /// Q-learning replayed over a dataset.
    Replay { data: &'a TransitionDataset, alpha: f64, passes: usize },
}

/// True when `v` is parallel to the constant vector.
pub fn is_constant_vector(v: &DVector<f64>) -> bool {
    let n = v.len() as f64;
    (v.sum() / n.sqrt()).abs() / v.norm().max(f64::MIN_POSITIVE) >= 1.0 - 1e-9
}

/// The eigenpurposes used for eigenoptions, in discovery order: basis order,
/// + then −, constant vectors skipped.
pub fn eigenpurposes(basis: &EigenBasis, k: usize) -> Vec<(usize, Eigenpurpose)> {
    let mut out = Vec::new();
    for rank in 0..basis.len() {
        let v = basis.vector(rank);
        if is_constant_vector(&v) {
            continue;
        }
        for dir in [1.0, -1.0] {
            if out.len() == k {
                return out;
            }
            out.push((rank, Eigenpurpose::new(v.clone(), dir, PurposeKind::Eigenoption)));
        }
    }
    out
}

/// Solve one eigenpurpose to optimality with a terminate action; returns
/// the q table (terminate column included).
pub fn solve_eigenpurpose(mdp: &TabularMDP, e: &Eigenpurpose, gamma_o: f64, solver: OptionSolver<'_>) -> Result<QTable> {
    match solver {
        OptionSolver::ClosedForm => Ok(policy_iteration(mdp, &e.reward_table(mdp), gamma_o, true)?.0),
        OptionSolver::Replay { data, alpha, passes } => {
            Ok(q_learning_replay(data, |s, n| e.reward(s, n), alpha, gamma_o, passes, true))
        }
    }
}

/// The first `k` eigenoptions of a basis.
pub fn discover_eigenoptions(
    mdp: &TabularMDP,
    basis: &EigenBasis,
    k: usize,
    gamma_o: f64,
    solver: OptionSolver<'_>,
) -> Result<Vec<OptionDef>> {
    if k > 2 * mdp.n_states {
        return Err(Error::Precondition(format!("k = {k} exceeds 2|S| = {}", 2 * mdp.n_states)));
    }
    let purposes = eigenpurposes(basis, k);
    purposes
        .par_iter()
        .map(|(rank, e)| {
            let q = solve_eigenpurpose(mdp, e, gamma_o, solver)?;
            let sign = if e.direction > 0.0 { '+' } else { '-' };
            Ok(option_from_q(&q, format!("eigen:rank{rank}:{sign}")))
        })
        .collect()
}

/// Restrict an option's initiation set to one state.
pub fn with_point_initiation(opt: &OptionDef, start: usize) -> OptionDef {
    let mut o = opt.clone();
    o.initiation = vec![false; o.n_states()];
    o.initiation[start] = true;
    o
}

/// Make an option available everywhere it does not terminate.
pub fn with_broad_initiation(opt: &OptionDef) -> OptionDef {
    let mut o = opt.clone();
    o.initiation = o.termination.iter().map(|&b| b < 1.0).collect();
    o
}

/// Uniform decision-level transition matrix over primitives and available
/// options, an option moving straight to where it lands.
pub fn induced_transition_matrix_with_options(mdp: &TabularMDP, options: &[OptionDef]) -> DMatrix<f64> {
    let n = mdp.n_states;
    let cap = max_option_steps(n);
    let mut p = DMatrix::zeros(n, n);
    for s in 0..n {
        let avail: Vec<&OptionDef> = options.iter().filter(|o| o.available(s)).collect();
        let w = 1.0 / (mdp.n_actions + avail.len()) as f64;
        for a in 0..mdp.n_actions {
            for &(next, prob) in mdp.successors(s, a) {
                p[(s, next)] += w * prob;
            }
        }
        for o in avail {
            for (t, m) in o.landing(mdp, s, cap).states {
                p[(s, t)] += w * m;
            }
        }
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverBasis {
    /// Second-smallest eigenvector of the normalized Laplacian.
    Laplacian,
    /// Second eigenvector of the symmetrised SR.
    Sr,
    /// Second eigenvector of the SR without symmetrisation (real part).
    SrRaw,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoveringParams {
    pub n_iter: usize,
    pub basis: CoverBasis,
    pub gamma_sr: f64,
    pub gamma_o: f64,
}

/// Covering options: two point options per iteration, linking the extremes
/// of the leading non-constant eigenvector of the option-augmented graph.
pub fn discover_covering_options(mdp: &TabularMDP, params: &CoveringParams) -> Result<Vec<OptionDef>> {
    let n = mdp.n_states;
    let w0 = adjacency_with_options(mdp, &[]);
    let mut seed = vec![false; n];
    if n > 0 {
        seed[0] = true;
    }
    if let Some(s) = reaches(&w0, &seed).iter().position(|&ok| !ok) {
        return Err(Error::Connectivity(format!("state {s} is not connected to state 0")));
    }
    let mut options: Vec<OptionDef> = Vec::new();
    for it in 0..params.n_iter {
        let e = covering_vector(mdp, &options, params)?;
        for dir in [1.0, -1.0] {
            let purpose = Eigenpurpose::new(e.clone(), dir, PurposeKind::Covering);
            let (start, goal) = (purpose.argmin(), purpose.argmax());
            if start == goal {
                continue;
            }
            let mut absorbing = vec![false; n];
            absorbing[goal] = true;
            let (q, _) = policy_iteration_absorbing(mdp, &purpose.reward_table(mdp), params.gamma_o, false, &absorbing)?;
            let policy = (0..n).map(|s| q.greedy_primitive(s)).collect();
            let sign = if dir > 0.0 { '+' } else { '-' };
            options.push(OptionDef::point(start, goal, policy, format!("covering:iter{it}:{sign}")));
        }
    }
    Ok(options)
}

fn covering_vector(mdp: &TabularMDP, options: &[OptionDef], params: &CoveringParams) -> Result<DVector<f64>> {
    let basis = match params.basis {
        CoverBasis::Laplacian => normalized_laplacian(&action_count_adjacency_with_options(mdp, options))?.1,
        CoverBasis::Sr | CoverBasis::SrRaw => {
            let p = induced_transition_matrix_with_options(mdp, options);
            let psi = sr_closed_form(&p, params.gamma_sr)?.psi;
            eigendecompose(&psi, params.basis == CoverBasis::Sr)?
        }
    };
    if basis.len() < 2 {
        return Err(Error::Precondition("covering options need at least two states".into()));
    }
    Ok(basis.vector(1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeoParams {
    pub eta: f64,
    pub alpha_o: f64,
    pub gamma_sr: f64,
    pub gamma_o: f64,
    pub p_option: f64,
    /// Primitive steps collected per iteration (one episode).
    pub n_steps: usize,
    pub n_iter: usize,
    pub sr_passes: usize,
    pub q_passes: usize,
    pub start: usize,
}

impl CeoParams {
    /// Settings used for the four-room cover-time study.
    pub fn standard(start: usize) -> Self {
        Self {
            eta: 0.1,
            alpha_o: 0.1,
            gamma_sr: 0.99,
            gamma_o: 0.99,
            p_option: 0.05,
            n_steps: 100,
            n_iter: 100,
            sr_passes: 100,
            q_passes: 1000,
            start,
        }
    }
}

/// State of the discovery loop.
#[derive(Debug, Clone)]
pub struct RODState {
    /// Every primitive transition collected so far.
    pub dataset: TransitionDataset,
    pub option_set: Vec<OptionDef>,
    pub iteration: usize,
    pub sr_estimate: Option<SRMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeoLog {
    pub iteration: usize,
    pub dataset_len: usize,
    pub visited_states: usize,
    pub eigenvalue: f64,
    pub initiation_size: usize,
    pub terminal_states: usize,
}

/// Step-by-step covering-eigenoptions loop: each call to [`CeoRunner::iterate`]
/// collects one episode and then adds one option.
pub struct CeoRunner {
    pub params: CeoParams,
    pub state: RODState,
    rng: Rng,
}

impl CeoRunner {
    pub fn new(mdp: &TabularMDP, params: CeoParams, seed: u64) -> Self {
        Self {
            params,
            state: RODState {
                dataset: TransitionDataset::new(mdp.n_states, mdp.n_actions),
                option_set: Vec::new(),
                iteration: 0,
                sr_estimate: None,
            },
            rng: split(seed, 0),
        }
    }

    /// Collect one episode with the current options.
    pub fn collect(&mut self, mdp: &TabularMDP) -> Rollout {
        let cfg = RolloutConfig::new(mdp, self.params.n_steps, self.params.start);
        let out = run_with_options(mdp, &self.state.option_set, Sampler::POption(self.params.p_option), &cfg, &mut self.rng);
        self.state.dataset.extend(&out.dataset);
        out
    }

    /// Learn the SR from all data, derive one option and append it.
    pub fn discover(&mut self) -> Result<CeoLog> {
        let p = &self.params;
        let data = &self.state.dataset;
        let sr = sr_td_learn(data, p.eta, p.gamma_sr, p.sr_passes)?;
        let basis = eigendecompose(&sr.psi, true)?;
        let e = orient_negative(basis.vector(0));
        let purpose = Eigenpurpose::new(e, 1.0, PurposeKind::Eigenoption);
        let q = q_learning_replay(data, |s, n| purpose.reward(s, n), p.alpha_o, p.gamma_o, p.q_passes, true);
        let it = self.state.iteration;
        let opt = option_from_q(&q, format!("ceo:iter{it}"));
        let mut visited = vec![false; data.n_states];
        for t in data.records() {
            visited[t.s] = true;
            visited[t.next] = true;
        }
        let log = CeoLog {
            iteration: it,
            dataset_len: data.len(),
            visited_states: visited.iter().filter(|&&v| v).count(),
            eigenvalue: basis.eigenvalues[0],
            initiation_size: opt.initiation_states().len(),
            terminal_states: opt.terminal_states().len(),
        };
        self.state.option_set.push(opt);
        self.state.sr_estimate = Some(sr);
        self.state.iteration += 1;
        Ok(log)
    }

    /// One full iteration: collect, then discover.
    pub fn iterate(&mut self, mdp: &TabularMDP) -> Result<(Rollout, CeoLog)> {
        let out = self.collect(mdp);
        let log = self.discover()?;
        Ok((out, log))
    }
}

/// Flip `e` so Σe < 0; on an exact tie, so the first nonzero entry is negative.
pub fn orient_negative(mut e: DVector<f64>) -> DVector<f64> {
    let sum = e.sum();
    let flip = if sum == 0.0 { e.iter().find(|x| **x != 0.0).is_some_and(|x| *x > 0.0) } else { sum > 0.0 };
    if flip {
        e.neg_mut();
    }
    e
}

/// Run `params.n_iter` iterations of covering eigenoptions.
pub fn run_ceo(mdp: &TabularMDP, params: CeoParams, seed: u64) -> Result<(RODState, Vec<CeoLog>)> {
    let mut runner = CeoRunner::new(mdp, params, seed);
    let mut logs = Vec::with_capacity(params.n_iter);
    for _ in 0..params.n_iter {
        logs.push(runner.iterate(mdp)?.1);
    }
    Ok((runner.state, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{parse_grid, GridSpec};
    use crate::mdp::{build_mdp, induced_transition_matrix, Policy};

    fn fourroom() -> TabularMDP {
        build_mdp(&GridSpec::bundled("fourroom").unwrap(), 0.9).unwrap()
    }

    fn sr_basis(mdp: &TabularMDP) -> EigenBasis {
        let p = induced_transition_matrix(mdp, &Policy::uniform(mdp.n_states, 4)).unwrap();
        eigendecompose(&sr_closed_form(&p, 0.9).unwrap().psi, true).unwrap()
    }

    #[test]
    fn eigenpurpose_rewards() {
        let e = Eigenpurpose::new(DVector::from_vec(vec![2.0, 5.0]), 1.0, PurposeKind::Eigenoption);
        assert_eq!(e.reward(0, 1), 3.0);
        assert_eq!(e.reward(1, 1), 0.0);
        let c = Eigenpurpose::new(DVector::from_vec(vec![0.1, -0.7, 0.7]), 1.0, PurposeKind::Covering);
        assert_eq!((0..3).map(|s| c.reward(0, s)).collect::<Vec<_>>(), vec![0.0, 0.0, 1.0]);
        let f = eigenpurpose_reward(&c);
        assert_eq!(f(1, 2), 1.0);
    }

    #[test]
    fn zero_q_gives_empty_option() {
        let o = option_from_q(&QTable::zeros(3, 4, true), "z");
        assert!(o.initiation.iter().all(|&i| !i));
        assert!(o.termination.iter().all(|&b| b == 1.0));
    }

    #[test]
    fn corridor_option_from_q() {
        let mdp = build_mdp(&parse_grid("####\n#..#\n####").unwrap(), 0.9).unwrap();
        let e = Eigenpurpose::new(DVector::from_vec(vec![2.0, 5.0]), 1.0, PurposeKind::Eigenoption);
        let q = solve_eigenpurpose(&mdp, &e, 0.9, OptionSolver::ClosedForm).unwrap();
        let o = option_from_q(&q, "c");
        assert_eq!(o.initiation, vec![true, false]);
        assert_eq!(o.policy[0], 2);
        assert_eq!(o.termination, vec![0.0, 1.0]);
    }

    #[test]
    fn fourroom_first_pair_ends_in_opposite_corners() {
        let mdp = fourroom();
        let basis = sr_basis(&mdp);
        assert!(is_constant_vector(&basis.vector(0)));
        let opts = discover_eigenoptions(&mdp, &basis, 2, 0.9, OptionSolver::ClosedForm).unwrap();
        assert_eq!(opts.len(), 2);
        let coords = mdp.state_coords.clone().unwrap();
        let corners: Vec<(usize, usize)> = opts.iter().map(|o| coords[o.terminal_states()[0]]).collect();
        // the terminal states sit at diagonally opposite corners of the map
        let (a, b) = (corners[0], corners[1]);
        assert!(a.0.abs_diff(b.0) >= 8 && a.1.abs_diff(b.1) >= 8, "{corners:?}");
        assert!(discover_eigenoptions(&mdp, &basis, 0, 0.9, OptionSolver::ClosedForm).unwrap().is_empty());
    }

    #[test]
    fn eigenoption_terminal_set_holds_argmax() {
        let mdp = fourroom();
        let basis = sr_basis(&mdp);
        for (_, e) in eigenpurposes(&basis, 6) {
            let q = solve_eigenpurpose(&mdp, &e, 0.9, OptionSolver::ClosedForm).unwrap();
            let o = option_from_q(&q, "t");
            assert!(o.is_terminal(e.argmax()));
            for s in 0..mdp.n_states {
                assert_eq!(o.initiation[s], !o.is_terminal(s));
            }
        }
    }

    #[test]
    fn replay_requires_matching_dataset() {
        let mdp = fourroom();
        let data = TransitionDataset::full_sweep(&mdp).unwrap();
        let basis = sr_basis(&mdp);
        let opts = discover_eigenoptions(&mdp, &basis, 2, 0.9, OptionSolver::Replay { data: &data, alpha: 0.5, passes: 200 })
            .unwrap();
        let closed = discover_eigenoptions(&mdp, &basis, 2, 0.9, OptionSolver::ClosedForm).unwrap();
        for (a, b) in opts.iter().zip(&closed) {
            assert_eq!(a.terminal_states(), b.terminal_states());
        }
    }

    #[test]
    fn covering_options_link_opposite_corners() {
        let mdp = fourroom();
        let params = CoveringParams { n_iter: 1, basis: CoverBasis::Laplacian, gamma_sr: 0.9, gamma_o: 0.9 };
        let opts = discover_covering_options(&mdp, &params).unwrap();
        assert_eq!(opts.len(), 2);
        let coords = mdp.state_coords.clone().unwrap();
        for o in &opts {
            assert_eq!(o.initiation_states().len(), 1);
            assert_eq!(o.terminal_states().len(), 1);
            let (a, b) = (coords[o.initiation_states()[0]], coords[o.terminal_states()[0]]);
            assert!(a.0.abs_diff(b.0) >= 8 && a.1.abs_diff(b.1) >= 8, "{a:?} {b:?}");
            // following the policy from the start reaches the goal
            assert!(o.length_from(&mdp, o.initiation_states()[0], 4 * mdp.n_states).is_some());
        }
        assert_eq!(opts[0].initiation_states(), opts[1].terminal_states());
        let none = CoveringParams { n_iter: 0, ..params };
        assert!(discover_covering_options(&mdp, &none).unwrap().is_empty());
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let mdp = build_mdp(&parse_grid("#####\n#.#.#\n#####").unwrap(), 0.9).unwrap();
        let params = CoveringParams { n_iter: 1, basis: CoverBasis::Laplacian, gamma_sr: 0.9, gamma_o: 0.9 };
        assert!(matches!(discover_covering_options(&mdp, &params), Err(Error::Connectivity(_))));
    }

    #[test]
    fn orientation_rule() {
        assert_eq!(orient_negative(DVector::from_vec(vec![1.0, 2.0])).as_slice(), &[-1.0, -2.0]);
        assert_eq!(orient_negative(DVector::from_vec(vec![0.0, 1.0, -1.0])).as_slice(), &[0.0, -1.0, 1.0]);
    }

    #[test]
    fn ceo_first_iteration_is_a_random_walk() {
        let mdp = fourroom();
        let mut params = CeoParams::standard(10);
        params.n_iter = 3;
        params.q_passes = 50;
        params.sr_passes = 10;
        let (state, logs) = run_ceo(&mdp, params, 4).unwrap();
        assert_eq!(state.option_set.len(), 3);
        assert_eq!(logs.len(), 3);
        assert!(logs.windows(2).all(|w| w[0].dataset_len < w[1].dataset_len));
        // the first 100 records were gathered with no options available
        let (again, _) = run_ceo(&mdp, CeoParams { n_iter: 1, ..params }, 4).unwrap();
        assert_eq!(again.dataset, state.dataset.prefix(100));
        assert!(again.dataset.records().iter().all(|t| t.primitive));
    }
}
