//! Exploration metrics: diffusion time, cover time, visitation and
//! terminal-state heatmaps, and learning curves for goal tasks.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;

use crate::discovery::{induced_transition_matrix_with_options, CeoParams, CeoRunner};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::learn::{q_learning, GoalTask, QParams};
use crate::mdp::TabularMDP;
use crate::option::{max_option_steps, Landing, OptionDef};
use crate::rng::{child_seed, split};
use crate::rollout::{run_with_options, RolloutConfig, Sampler};

/// Hard limit on primitive steps in one cover-time run.
pub const COVER_CAP: u64 = 10_000_000;

/// z for a two-sided 99% normal interval.
const Z99: f64 = 2.575_829_303_548_901;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionReport {
    pub num_options: usize,
    pub method: String,
    /// Mean expected decisions over reachable pairs s ≠ g.
    pub avg: f64,
    pub median: f64,
    /// Expected decisions from row s to column g; +∞ when g is not reached
    /// with probability one.
    pub per_pair: Option<DMatrix<f64>>,
    pub num_unreachable: usize,
}

/// States from which `goal` is reached with probability one under `p`.
fn certain_to_reach(p: &DMatrix<f64>, goal: usize) -> Vec<bool> {
    let n = p.nrows();
    // backward reachability
    let mut ok = vec![false; n];
    ok[goal] = true;
    let mut stack = vec![goal];
    while let Some(t) = stack.pop() {
        for s in 0..n {
            if !ok[s] && p[(s, t)] > 0.0 {
                ok[s] = true;
                stack.push(s);
            }
        }
    }
    // drop states that can leak into the unreachable region
    loop {
        let mut changed = false;
        for s in 0..n {
            if s != goal && ok[s] && (0..n).any(|t| !ok[t] && p[(s, t)] > 0.0) {
                ok[s] = false;
                changed = true;
            }
        }
        if !changed {
            return ok;
        }
    }
}

/// Expected decisions to hit `goal` from every state (+∞ where not certain).
fn hitting_times(p: &DMatrix<f64>, goal: usize) -> Result<Vec<f64>> {
    let n = p.nrows();
    let ok = certain_to_reach(p, goal);
    let idx: Vec<usize> = (0..n).filter(|&s| ok[s] && s != goal).collect();
    let mut out = vec![f64::INFINITY; n];
    out[goal] = 0.0;
    if idx.is_empty() {
        return Ok(out);
    }
    let m = idx.len();
    let a = DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { 0.0 } - p[(idx[i], idx[j])]);
    let x = a
        .lu()
        .solve(&DVector::from_element(m, 1.0))
        .ok_or_else(|| Error::Numeric(format!("singular hitting-time system for goal {goal}")))?;
    for (i, &s) in idx.iter().enumerate() {
        out[s] = x[i];
    }
    Ok(out)
}

/// The uniform decision chain over primitives and available options, with
/// enough bookkeeping to make any one state terminal.
struct DecisionChain<'a> {
    mdp: &'a TabularMDP,
    options: &'a [OptionDef],
    base: DMatrix<f64>,
    /// (state, option, choice weight, landing) for every available option.
    landings: Vec<(usize, usize, f64, Landing)>,
}

impl<'a> DecisionChain<'a> {
    fn new(mdp: &'a TabularMDP, options: &'a [OptionDef]) -> Self {
        let n = mdp.n_states;
        let cap = max_option_steps(n);
        let mut base = DMatrix::zeros(n, n);
        let mut landings = Vec::new();
        for s in 0..n {
            let avail: Vec<usize> = (0..options.len()).filter(|&k| options[k].available(s)).collect();
            let w = 1.0 / (mdp.n_actions + avail.len()) as f64;
            for a in 0..mdp.n_actions {
                for &(next, prob) in mdp.successors(s, a) {
                    base[(s, next)] += w * prob;
                }
            }
            for k in avail {
                let l = options[k].landing(mdp, s, cap);
                for &(t, m) in &l.states {
                    base[(s, t)] += w * m;
                }
                landings.push((s, k, w, l));
            }
        }
        Self { mdp, options, base, landings }
    }

    /// Transition matrix when `goal` ends an option execution on entry.
    fn toward(&self, goal: usize) -> DMatrix<f64> {
        let mut p = self.base.clone();
        let cap = max_option_steps(self.mdp.n_states);
        for (s, k, w, l) in &self.landings {
            if *s == goal || l.touched.binary_search(&goal).is_err() {
                continue;
            }
            for &(t, m) in &l.states {
                p[(*s, t)] -= w * m;
            }
            for (t, m) in self.options[*k].landing_until(self.mdp, *s, cap, Some(goal)).states {
                p[(*s, t)] += w * m;
            }
        }
        p
    }
}

fn median(sorted: &[f64]) -> f64 {
    match sorted.len() {
        0 => 0.0,
        n if n % 2 == 1 => sorted[n / 2],
        n => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
    }
}

/// Diffusion time of a uniform random walk over primitives and the options
/// available in each state. An option is one decision; it lands where it
/// terminates, or at the goal if its execution enters the goal first.
pub fn diffusion_time(mdp: &TabularMDP, options: &[OptionDef], method: &str) -> Result<DiffusionReport> {
    let n = mdp.n_states;
    let chain = DecisionChain::new(mdp, options);
    let cols: Vec<Vec<f64>> = (0..n).into_par_iter().map(|g| hitting_times(&chain.toward(g), g)).collect::<Result<_>>()?;
    let per_pair = DMatrix::from_fn(n, n, |s, g| cols[g][s]);
    let mut finite = Vec::with_capacity(n * n.saturating_sub(1));
    let mut num_unreachable = 0;
    for g in 0..n {
        for s in 0..n {
            if s == g {
                continue;
            }
            let x = per_pair[(s, g)];
            if x.is_finite() {
                finite.push(x);
            } else {
                num_unreachable += 1;
            }
        }
    }
    let avg = if finite.is_empty() { 0.0 } else { finite.iter().sum::<f64>() / finite.len() as f64 };
    finite.sort_by(f64::total_cmp);
    Ok(DiffusionReport {
        num_options: options.len(),
        method: method.to_string(),
        avg,
        median: median(&finite),
        per_pair: Some(per_pair),
        num_unreachable,
    })
}

/// Diffusion time with the first k options, for each k in `counts`.
pub fn diffusion_curve(mdp: &TabularMDP, options: &[OptionDef], counts: &[usize], method: &str) -> Result<Vec<DiffusionReport>> {
    counts
        .iter()
        .map(|&k| {
            let mut r = diffusion_time(mdp, &options[..k.min(options.len())], method)?;
            r.per_pair = None;
            Ok(r)
        })
        .collect()
}

/// diffusion.csv rows: method,num_options,avg,median,num_unreachable.
pub fn write_diffusion_csv<W: Write>(reports: &[DiffusionReport], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Numeric(format!("csv write: {e}"));
    wr.write_record(["method", "num_options", "avg", "median", "num_unreachable"]).map_err(io)?;
    for r in reports {
        wr.write_record([
            r.method.clone(),
            r.num_options.to_string(),
            r.avg.to_string(),
            r.median.to_string(),
            r.num_unreachable.to_string(),
        ])
        .map_err(io)?;
    }
    wr.flush().map_err(|e| Error::Numeric(format!("csv write: {e}")))
}

/// How options are chosen during a cover-time run.
#[derive(Debug, Clone)]
pub enum CoverMode {
    /// A fixed option set and behaviour.
    Fixed { options: Vec<OptionDef>, sampler: Sampler },
    /// Covering eigenoptions: a new option is discovered after every episode.
    Ceo(CeoParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverConfig {
    pub episode_len: usize,
    pub start: usize,
    pub seeds: usize,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    /// Steps to full coverage, one per seed in seed order.
    pub steps: Vec<u64>,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub min: u64,
    pub max: u64,
    /// Per-state proportion of time, averaged over seeds.
    pub visitation: Vec<f64>,
}

struct SeedCover {
    steps: u64,
    visits: Vec<u64>,
}

/// Time index of the state at position k of episode e, with L steps per
/// episode: the start state of each episode counts as a step.
fn time_index(e: u64, episode_len: usize, k: usize) -> u64 {
    e * (episode_len as u64 + 1) + k as u64
}

fn cover_one(mdp: &TabularMDP, mode: &CoverMode, cfg: &CoverConfig, seed: u64) -> Result<SeedCover> {
    let n = mdp.n_states;
    let mut seen = vec![false; n];
    let mut n_seen = 0;
    let mut visits = vec![0u64; n];
    let mut rng = split(seed, 0);
    let mut runner = match mode {
        CoverMode::Ceo(p) => {
            let mut p = *p;
            p.n_steps = cfg.episode_len;
            p.start = cfg.start;
            Some(CeoRunner::new(mdp, p, seed))
        }
        CoverMode::Fixed { .. } => None,
    };
    let rollout_cfg = RolloutConfig::new(mdp, cfg.episode_len, cfg.start);
    let mut e = 0u64;
    loop {
        let out = match (&mut runner, mode) {
            (Some(r), _) => r.collect(mdp),
            (None, CoverMode::Fixed { options, sampler }) => run_with_options(mdp, options, *sampler, &rollout_cfg, &mut rng),
            (None, CoverMode::Ceo(_)) => unreachable!(),
        };
        for (v, x) in visits.iter_mut().zip(&out.visits) {
            *v += x;
        }
        for (k, &s) in out.states.iter().enumerate() {
            if !seen[s] {
                seen[s] = true;
                n_seen += 1;
                if n_seen == n {
                    return Ok(SeedCover { steps: time_index(e, cfg.episode_len, k), visits });
                }
            }
        }
        if time_index(e + 1, cfg.episode_len, 0) > COVER_CAP {
            return Err(Error::CapExceeded(COVER_CAP));
        }
        if let Some(r) = &mut runner {
            r.discover()?;
        }
        e += 1;
    }
}

/// Monte-Carlo cover time: primitive steps until every state has been
/// visited, counted across episodes that each restart at `cfg.start`.
pub fn monte_carlo_cover(mdp: &TabularMDP, mode: &CoverMode, cfg: &CoverConfig) -> Result<CoverageReport> {
    if cfg.episode_len == 0 {
        return Err(Error::Precondition("episode_len must be positive".into()));
    }
    if cfg.seeds == 0 {
        return Err(Error::Precondition("at least one seed is required".into()));
    }
    let runs: Vec<SeedCover> = (0..cfg.seeds as u64)
        .into_par_iter()
        .map(|i| cover_one(mdp, mode, cfg, child_seed(cfg.rng_seed, i)))
        .collect::<Result<_>>()?;
    let steps: Vec<u64> = runs.iter().map(|r| r.steps).collect();
    let k = steps.len() as f64;
    let mean = steps.iter().sum::<u64>() as f64 / k;
    let sd = if steps.len() > 1 {
        (steps.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted: Vec<f64> = steps.iter().map(|&x| x as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let mut visitation = vec![0.0; mdp.n_states];
    for r in &runs {
        let total = r.visits.iter().sum::<u64>().max(1) as f64;
        for (v, &x) in visitation.iter_mut().zip(&r.visits) {
            *v += x as f64 / total / k;
        }
    }
    if mdp.n_states == 1 {
        visitation[0] = 1.0;
    }
    Ok(CoverageReport {
        mean,
        sd,
        median: median(&sorted),
        min: *steps.iter().min().unwrap(),
        max: *steps.iter().max().unwrap(),
        steps,
        visitation,
    })
}

/// coverage.csv rows: seed,steps_to_cover.
pub fn write_coverage_csv<W: Write>(report: &CoverageReport, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Numeric(format!("csv write: {e}"));
    wr.write_record(["seed", "steps_to_cover"]).map_err(io)?;
    for (i, s) in report.steps.iter().enumerate() {
        wr.write_record([i.to_string(), s.to_string()]).map_err(io)?;
    }
    wr.flush().map_err(|e| Error::Numeric(format!("csv write: {e}")))
}

/// Per-state visitation proportions of a coverage run.
pub fn visitation_distribution(report: &CoverageReport) -> &[f64] {
    &report.visitation
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalFrequency {
    /// Number of options terminating in each state.
    pub counts: Vec<u64>,
    /// counts / Σ counts (all zero when there are no terminal states).
    pub relative: Vec<f64>,
}

impl TerminalFrequency {
    pub fn distinct_states(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

pub fn terminal_frequency(options: &[OptionDef], n_states: usize) -> Result<TerminalFrequency> {
    let mut counts = vec![0u64; n_states];
    for o in options {
        if o.n_states() != n_states {
            return Err(Error::Shape(format!("option {} has {} states, expected {n_states}", o.label, o.n_states())));
        }
        for s in o.terminal_states() {
            counts[s] += 1;
        }
    }
    let total = counts.iter().sum::<u64>();
    let relative = counts.iter().map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 }).collect();
    Ok(TerminalFrequency { counts, relative })
}

/// Plain-text heatmap over the grid, row-major and space-separated; wall
/// cells are written as `nan`.
pub fn write_heatmap<W: Write>(mut w: W, grid: &GridSpec, mdp: &TabularMDP, values: &[f64]) -> Result<()> {
    let coords = mdp.state_coords.as_ref().ok_or_else(|| Error::Precondition("mdp has no grid coordinates".into()))?;
    if values.len() != mdp.n_states {
        return Err(Error::Shape(format!("{} values for {} states", values.len(), mdp.n_states)));
    }
    let mut cells = vec![f64::NAN; grid.width * grid.height];
    for (s, &(r, c)) in coords.iter().enumerate() {
        cells[r * grid.width + c] = values[s];
    }
    let io = |e: std::io::Error| Error::Numeric(format!("heatmap write: {e}"));
    for row in cells.chunks(grid.width) {
        let line: Vec<String> = row.iter().map(|x| if x.is_nan() { "nan".into() } else { x.to_string() }).collect();
        writeln!(w, "{}", line.join(" ")).map_err(io)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardConfig {
    pub qparams: QParams,
    pub seeds: usize,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnCurve {
    pub task: GoalTask,
    /// Mean undiscounted return per episode over seeds.
    pub mean: Vec<f64>,
    /// Half-width of the 99% normal interval per episode.
    pub ci99: Vec<f64>,
    /// Sum of the mean curve.
    pub auc: f64,
    /// Per-seed sum of returns.
    pub seed_auc: Vec<f64>,
    pub unreachable: bool,
}

/// Draw `n` distinct (start, goal) pairs with start ≠ goal.
pub fn sample_tasks(n_states: usize, n: usize, seed: u64) -> Vec<GoalTask> {
    let mut rng = split(seed, 0);
    let mut out: Vec<GoalTask> = Vec::with_capacity(n);
    while out.len() < n && n_states > 1 {
        let start = rng.random_range(0..n_states);
        let goal = rng.random_range(0..n_states);
        let t = GoalTask { start, goal };
        if start != goal && !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

/// Learning curves of Q-learning with `options` as exploratory actions.
/// Seed j of task i uses the same stream for every option set.
pub fn reward_experiment(mdp: &TabularMDP, tasks: &[GoalTask], options: &[OptionDef], cfg: &RewardConfig) -> Result<Vec<ReturnCurve>> {
    let p = induced_transition_matrix_with_options(mdp, &[]);
    tasks
        .iter()
        .enumerate()
        .map(|(i, &task)| {
            let episodes = cfg.qparams.episodes;
            let unreachable = !crate::solve::reaches(&p, &{
                let mut t = vec![false; mdp.n_states];
                t[task.goal] = true;
                t
            })[task.start];
            if unreachable {
                return Ok(ReturnCurve {
                    task,
                    mean: vec![0.0; episodes],
                    ci99: vec![0.0; episodes],
                    auc: 0.0,
                    seed_auc: vec![0.0; cfg.seeds],
                    unreachable,
                });
            }
            let task_seed = child_seed(cfg.rng_seed, i as u64);
            let runs: Vec<Vec<f64>> = (0..cfg.seeds as u64)
                .into_par_iter()
                .map(|j| {
                    let mut rng = split(task_seed, j);
                    q_learning(mdp, task, options, &cfg.qparams, None, &mut rng).map(|r| r.returns)
                })
                .collect::<Result<_>>()?;
            let k = runs.len() as f64;
            let mean: Vec<f64> = (0..episodes).map(|e| runs.iter().map(|r| r[e]).sum::<f64>() / k).collect();
            let ci99 = (0..episodes)
                .map(|e| {
                    if runs.len() < 2 {
                        return 0.0;
                    }
                    let var = runs.iter().map(|r| (r[e] - mean[e]).powi(2)).sum::<f64>() / (k - 1.0);
                    Z99 * (var / k).sqrt()
                })
                .collect();
            Ok(ReturnCurve {
                task,
                auc: mean.iter().sum(),
                seed_auc: runs.iter().map(|r| r.iter().sum()).collect(),
                mean,
                ci99,
                unreachable,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_grid;
    use crate::mdp::build_mdp;

    #[test]
    fn toggle_takes_one_decision() {
        // two states where every action moves to the other one
        let mut kernel = vec![0.0; 2 * 4 * 2];
        for a in 0..4 {
            kernel[a * 2 + 1] = 1.0;
            kernel[(4 + a) * 2] = 1.0;
        }
        let mdp = TabularMDP::new(2, 4, kernel, vec![0.0; 8], 0.9).unwrap();
        let r = diffusion_time(&mdp, &[], "primitive").unwrap();
        assert_eq!((r.avg, r.median, r.num_unreachable), (1.0, 1.0, 0));
    }

    #[test]
    fn single_state_is_trivial() {
        let mdp = build_mdp(&parse_grid("###\n#.#\n###").unwrap(), 0.9).unwrap();
        let r = diffusion_time(&mdp, &[], "primitive").unwrap();
        assert_eq!((r.avg, r.median), (0.0, 0.0));
        let cfg = CoverConfig { episode_len: 5, start: 0, seeds: 2, rng_seed: 1 };
        let c = monte_carlo_cover(&mdp, &CoverMode::Fixed { options: vec![], sampler: Sampler::Uniform }, &cfg).unwrap();
        assert_eq!(c.steps, vec![0, 0]);
        assert_eq!(c.visitation, vec![1.0]);
    }

    #[test]
    fn corridor_hitting_times() {
        // 3-cell corridor: from an end, 4 actions of which 1 moves inward
        let mdp = build_mdp(&parse_grid("#####\n#...#\n#####").unwrap(), 0.9).unwrap();
        let r = diffusion_time(&mdp, &[], "primitive").unwrap();
        let h = r.per_pair.unwrap();
        // h0 = 1 + 3/4 h0 + 1/4 h1, h1 = 1 + 1/4 h0 + 1/2 h1 for goal 2
        assert!((h[(0, 1)] - 4.0).abs() < 1e-9);
        assert!((h[(1, 2)] - 8.0).abs() < 1e-9);
        assert!((h[(0, 2)] - 12.0).abs() < 1e-9);
        assert!((r.avg - 8.0).abs() < 1e-9);
        let mean = h.iter().sum::<f64>() / 6.0;
        assert!((r.avg - mean).abs() < 1e-12);
    }

    #[test]
    fn option_entering_goal_stops_there() {
        let mdp = build_mdp(&parse_grid("#####\n#...#\n#####").unwrap(), 0.9).unwrap();
        let right = OptionDef::new(vec![true, true, false], vec![2; 3], vec![0.0, 0.0, 1.0], "r").unwrap();
        let h = diffusion_time(&mdp, &[right], "x").unwrap().per_pair.unwrap();
        // from 0 toward 1: Right and the option both arrive, three of five choices stay
        assert!((h[(0, 1)] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn one_way_pair_is_unreachable() {
        // every action leads to state 1, which never leaves
        let mut kernel = vec![0.0; 2 * 4 * 2];
        for a in 0..4 {
            kernel[a * 2 + 1] = 1.0;
            kernel[(4 + a) * 2 + 1] = 1.0;
        }
        let mdp = TabularMDP::new(2, 4, kernel, vec![0.0; 8], 0.9).unwrap();
        let r = diffusion_time(&mdp, &[], "primitive").unwrap();
        assert_eq!(r.num_unreachable, 1);
        assert_eq!(r.avg, 1.0);
        assert!(r.per_pair.unwrap()[(1, 0)].is_infinite());
    }

    #[test]
    fn time_index_convention() {
        assert_eq!(time_index(0, 100, 7), 7);
        assert_eq!(time_index(1, 100, 3), 104);
    }

    #[test]
    fn terminal_counts() {
        let a = OptionDef::new(vec![true, false], vec![0, 0], vec![0.0, 1.0], "a").unwrap();
        let b = OptionDef::new(vec![false, true], vec![0, 0], vec![1.0, 0.0], "b").unwrap();
        let f = terminal_frequency(&[a.clone(), b, a], 2).unwrap();
        assert_eq!(f.counts, vec![1, 2]);
        assert_eq!(f.distinct_states(), 2);
        assert!(terminal_frequency(&[], 3).unwrap().counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn heatmap_layout() {
        let g = parse_grid("####\n#..#\n####").unwrap();
        let mdp = build_mdp(&g, 0.9).unwrap();
        let mut buf = Vec::new();
        write_heatmap(&mut buf, &g, &mdp, &[0.25, 0.75]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "nan 0.25 0.75 nan");
    }

    #[test]
    fn tasks_are_distinct() {
        let t = sample_tasks(104, 10, 3);
        assert_eq!(t.len(), 10);
        assert!(t.iter().all(|x| x.start != x.goal));
        assert_eq!(t, sample_tasks(104, 10, 3));
    }
}
