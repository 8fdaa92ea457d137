//! Transition datasets and call-and-return execution of options.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::mdp::TabularMDP;
use crate::option::{max_option_steps, OptionDef};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: usize,
    /// Primitive action index, or `n_actions + k` for option `k`.
    pub a: usize,
    pub r: f64,
    pub next: usize,
    pub primitive: bool,
}

/// Append-only list of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub n_states: usize,
    pub n_actions: usize,
    records: Vec<Transition>,
}

impl TransitionDataset {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, records: Vec::new() }
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.s >= self.n_states || t.next >= self.n_states || (t.primitive && t.a >= self.n_actions) {
            return Err(Error::Shape(format!("transition {t:?} out of bounds")));
        }
        self.records.push(t);
        Ok(())
    }

    pub fn extend(&mut self, other: &TransitionDataset) {
        self.records.extend_from_slice(&other.records);
    }

    pub fn records(&self) -> &[Transition] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// First `n` records, for prefix reproducibility checks.
    pub fn prefix(&self, n: usize) -> TransitionDataset {
        Self { n_states: self.n_states, n_actions: self.n_actions, records: self.records[..n].to_vec() }
    }

    /// Every (s, a) of the kernel once, in state-major order. Requires
    /// deterministic dynamics.
    pub fn full_sweep(mdp: &TabularMDP) -> Result<Self> {
        let mut d = Self::new(mdp.n_states, mdp.n_actions);
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let next = mdp
                    .next_state(s, a)
                    .ok_or_else(|| Error::Precondition("full sweep needs deterministic dynamics".into()))?;
                d.records.push(Transition { s, a, r: 0.0, next, primitive: true });
            }
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    Primitive(usize),
    Option(usize),
}

/// High-level behaviour over primitives and the options available in a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampler {
    /// Uniform over primitives ∪ available options.
    Uniform,
    /// An available option with this probability (uniformly among them),
    /// otherwise a uniform primitive.
    POption(f64),
}

impl Sampler {
    pub fn choose(&self, n_actions: usize, available: &[usize], rng: &mut Rng) -> Choice {
        match *self {
            Sampler::Uniform => {
                let k = rng.random_range(0..n_actions + available.len());
                if k < n_actions {
                    Choice::Primitive(k)
                } else {
                    Choice::Option(available[k - n_actions])
                }
            }
            Sampler::POption(p) => {
                if !available.is_empty() && rng.random::<f64>() < p {
                    Choice::Option(available[rng.random_range(0..available.len())])
                } else {
                    Choice::Primitive(rng.random_range(0..n_actions))
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RolloutConfig {
    /// Primitive-step budget.
    pub steps: usize,
    pub start: usize,
    /// Log one record per option execution instead of its primitive steps.
    pub teleport_log: bool,
    pub max_option_steps: usize,
}

impl RolloutConfig {
    pub fn new(mdp: &TabularMDP, steps: usize, start: usize) -> Self {
        Self { steps, start, teleport_log: false, max_option_steps: max_option_steps(mdp.n_states) }
    }
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub dataset: TransitionDataset,
    /// Occupancy count per state over the steps taken (state before each step).
    pub visits: Vec<u64>,
    /// States s_0, s_1, ..., one per primitive step plus the start.
    pub states: Vec<usize>,
    pub capped_options: usize,
}

/// Run `cfg.steps` primitive steps. Options execute until termination, the
/// step cap, or the end of the budget, whichever comes first.
pub fn run_with_options(
    mdp: &TabularMDP,
    options: &[OptionDef],
    sampler: Sampler,
    cfg: &RolloutConfig,
    rng: &mut Rng,
) -> Rollout {
    let na = mdp.n_actions;
    let mut dataset = TransitionDataset::new(mdp.n_states, na);
    let mut visits = vec![0u64; mdp.n_states];
    let mut states = Vec::with_capacity(cfg.steps + 1);
    let mut capped_options = 0;
    let mut s = cfg.start;
    states.push(s);
    let mut t = 0;
    let mut available = Vec::new();
    while t < cfg.steps {
        available.clear();
        available.extend((0..options.len()).filter(|&k| options[k].available(s)));
        match sampler.choose(na, &available, rng) {
            Choice::Primitive(a) => {
                let next = mdp.sample_next(s, a, rng);
                visits[s] += 1;
                dataset.records.push(Transition { s, a, r: mdp.reward[s * na + a], next, primitive: true });
                s = next;
                states.push(s);
                t += 1;
            }
            Choice::Option(k) => {
                let opt = &options[k];
                let (start, mut ret, mut k_steps) = (s, 0.0, 0);
                loop {
                    let a = opt.policy[s];
                    let next = mdp.sample_next(s, a, rng);
                    let r = mdp.reward[s * na + a];
                    visits[s] += 1;
                    if !cfg.teleport_log {
                        dataset.records.push(Transition { s, a, r, next, primitive: true });
                    }
                    ret += r;
                    s = next;
                    states.push(s);
                    t += 1;
                    k_steps += 1;
                    let beta = opt.termination[s];
                    if beta >= 1.0 || (beta > 0.0 && rng.random::<f64>() < beta) || t >= cfg.steps {
                        break;
                    }
                    if k_steps >= cfg.max_option_steps {
                        log::warn!("option {} hit the {}-step cap", opt.label, cfg.max_option_steps);
                        capped_options += 1;
                        break;
                    }
                }
                if cfg.teleport_log {
                    dataset.records.push(Transition { s: start, a: na + k, r: ret, next: s, primitive: false });
                }
            }
        }
    }
    Rollout { dataset, visits, states, capped_options }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{parse_grid, GridSpec};
    use crate::mdp::build_mdp;
    use crate::rng::rng;

    #[test]
    fn primitive_walk_records_every_step() {
        let mdp = build_mdp(&GridSpec::bundled("fourroom").unwrap(), 0.9).unwrap();
        let out = run_with_options(&mdp, &[], Sampler::Uniform, &RolloutConfig::new(&mdp, 10, 0), &mut rng(1));
        assert_eq!(out.dataset.len(), 10);
        assert_eq!(out.visits.iter().sum::<u64>(), 10);
        assert_eq!(out.states.len(), 11);
        for t in out.dataset.records() {
            assert!(mdp.p(t.s, t.a, t.next) > 0.0);
        }
    }

    #[test]
    fn point_option_segment_ends_at_goal() {
        let mdp = build_mdp(&parse_grid("#######\n#.....#\n#######").unwrap(), 0.9).unwrap();
        let opt = OptionDef::point(0, 4, vec![2; 5], "p");
        // option sampled whenever available
        let mut cfg = RolloutConfig::new(&mdp, 4, 0);
        let out = run_with_options(&mdp, std::slice::from_ref(&opt), Sampler::POption(1.0), &cfg, &mut rng(0));
        let path: Vec<usize> = out.dataset.records().iter().map(|t| t.next).collect();
        assert_eq!(path, vec![1, 2, 3, 4]);

        cfg.teleport_log = true;
        let out = run_with_options(&mdp, &[opt], Sampler::POption(1.0), &cfg, &mut rng(0));
        assert_eq!(out.dataset.records(), &[Transition { s: 0, a: 4, r: 0.0, next: 4, primitive: false }]);
    }

    #[test]
    fn same_seed_same_rollout() {
        let mdp = build_mdp(&GridSpec::bundled("fourroom").unwrap(), 0.9).unwrap();
        let cfg = RolloutConfig::new(&mdp, 500, 3);
        let a = run_with_options(&mdp, &[], Sampler::Uniform, &cfg, &mut rng(9));
        let b = run_with_options(&mdp, &[], Sampler::Uniform, &cfg, &mut rng(9));
        assert_eq!(a.dataset, b.dataset);
    }
}
