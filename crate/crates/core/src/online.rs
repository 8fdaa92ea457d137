//! Eigenoptions and covering options discovered from a TD estimate of the SR
//! instead of the true transition matrix.

use rayon::prelude::*;

use crate::discovery::{option_from_q, Eigenpurpose, OptionSolver, PurposeKind};
use crate::error::{Error, Result};
use crate::learn::q_learning_replay;
use crate::mdp::TabularMDP;
use crate::option::OptionDef;
use crate::rng::split;
use crate::rollout::{run_with_options, RolloutConfig, Sampler, TransitionDataset};
use crate::spectral::eigendecompose;
use crate::sr::sr_td_learn;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineParams {
    pub episode_len: usize,
    pub start: usize,
    pub eta: f64,
    pub gamma_sr: f64,
    pub alpha_o: f64,
    pub gamma_o: f64,
    pub sr_passes: usize,
    pub q_passes: usize,
}

impl OnlineParams {
    pub fn standard(start: usize) -> Self {
        Self { episode_len: 1000, start, eta: 0.1, gamma_sr: 0.9, alpha_o: 0.1, gamma_o: 0.9, sr_passes: 10, q_passes: 10 }
    }
}

/// Random-walk data from `episodes` episodes, each restarting at the start state.
pub fn random_walk_data(mdp: &TabularMDP, params: &OnlineParams, episodes: usize, seed: u64) -> TransitionDataset {
    let mut rng = split(seed, 0);
    let cfg = RolloutConfig::new(mdp, params.episode_len, params.start);
    let mut data = TransitionDataset::new(mdp.n_states, mdp.n_actions);
    for _ in 0..episodes {
        data.extend(&run_with_options(mdp, &[], Sampler::Uniform, &cfg, &mut rng).dataset);
    }
    data
}

/// Up to `k` eigenoptions from the SR learned on a random walk. The leading
/// eigenvector is skipped; option policies are learned by replaying the
/// same data.
pub fn online_eigenoptions(mdp: &TabularMDP, params: &OnlineParams, episodes: usize, k: usize, seed: u64) -> Result<Vec<OptionDef>> {
    if k > 2 * mdp.n_states {
        return Err(Error::Precondition(format!("k = {k} exceeds 2|S| = {}", 2 * mdp.n_states)));
    }
    let data = random_walk_data(mdp, params, episodes, seed);
    let sr = sr_td_learn(&data, params.eta, params.gamma_sr, params.sr_passes)?;
    let basis = eigendecompose(&sr.psi, true)?;
    let purposes: Vec<(usize, Eigenpurpose)> = (1..basis.len())
        .flat_map(|rank| {
            let v = basis.vector(rank);
            [1.0, -1.0].map(|d| (rank, Eigenpurpose::new(v.clone(), d, PurposeKind::Eigenoption)))
        })
        .take(k)
        .collect();
    let solver = OptionSolver::Replay { data: &data, alpha: params.alpha_o, passes: params.q_passes };
    purposes
        .par_iter()
        .map(|(rank, e)| {
            let q = crate::discovery::solve_eigenpurpose(mdp, e, params.gamma_o, solver)?;
            let sign = if e.direction > 0.0 { '+' } else { '-' };
            Ok(option_from_q(&q, format!("online-eigen:rank{rank}:{sign}")))
        })
        .collect()
}

/// Covering options learned online: each iteration collects one episode
/// with the current options (an option execution is logged as a single
/// jump), relearns the SR on all data and adds the ± point options of its
/// second eigenvector.
pub fn online_covering_options(mdp: &TabularMDP, params: &OnlineParams, n_iter: usize, seed: u64) -> Result<Vec<OptionDef>> {
    let n = mdp.n_states;
    let mut rng = split(seed, 0);
    let mut cfg = RolloutConfig::new(mdp, params.episode_len, params.start);
    cfg.teleport_log = true;
    let mut data = TransitionDataset::new(n, mdp.n_actions);
    let mut options: Vec<OptionDef> = Vec::new();
    for it in 0..n_iter {
        data.extend(&run_with_options(mdp, &options, Sampler::Uniform, &cfg, &mut rng).dataset);
        let sr = sr_td_learn(&data, params.eta, params.gamma_sr, params.sr_passes)?;
        let basis = eigendecompose(&sr.psi, true)?;
        if basis.len() < 2 {
            return Err(Error::Precondition("covering options need at least two states".into()));
        }
        let e = basis.vector(1);
        for dir in [1.0, -1.0] {
            let purpose = Eigenpurpose::new(e.clone(), dir, PurposeKind::Covering);
            let (start, goal) = (purpose.argmin(), purpose.argmax());
            if start == goal {
                continue;
            }
            let q = q_learning_replay(&data, |s, next| purpose.reward(s, next), params.alpha_o, params.gamma_o, params.q_passes, false);
            let policy = (0..n).map(|s| q.greedy_primitive(s)).collect();
            let sign = if dir > 0.0 { '+' } else { '-' };
            options.push(OptionDef::point(start, goal, policy, format!("online-covering:iter{it}:{sign}")));
        }
    }
    Ok(options)
}
