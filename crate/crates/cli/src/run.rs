//! Config-driven discovery and evaluation.

use std::path::Path;

use sr_options::discovery::{
    discover_covering_options, discover_eigenoptions, eigenpurposes, run_ceo, CeoParams, CoverBasis, CoveringParams,
    OptionSolver,
};
use sr_options::evaluation::{
    diffusion_curve, monte_carlo_cover, reward_experiment, sample_tasks, terminal_frequency, write_coverage_csv,
    write_diffusion_csv, write_heatmap, CoverConfig, CoverMode, CoverageReport, ReturnCurve, RewardConfig,
};
use sr_options::keyboard::{enumerate_keyboard, evaluate_base_options, unique_counts_by_prefix};
use sr_options::learn::{QParams, TieBreak};
use sr_options::online::{online_covering_options, online_eigenoptions, OnlineParams};
use sr_options::option::OptionDef;
use sr_options::rollout::Sampler;
use sr_options::spectral::{eigendecompose, EigenBasis};
use sr_options::sr::sr_closed_form;
use sr_options::{induced_transition_matrix, Cell, GridSpec, Policy, TabularMDP};

use crate::artifacts::{Artifacts, SeedSchedule};
use crate::config::{environment, Basis, EvalKind, ExperimentConfig, Method, Tie};
use crate::CliError;

/// Stream indices under the master seed.
pub const DISCOVERY_STREAM: u64 = 0;
pub const COVER_STREAM: u64 = 1;
pub const REWARD_STREAM: u64 = 2;

/// Which stages of a config to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stages {
    DiscoverOnly,
    All,
}

/// Closed-form SR eigenbasis of the uniform random walk.
pub fn sr_basis(mdp: &TabularMDP, gamma: f64) -> Result<EigenBasis, CliError> {
    let p = induced_transition_matrix(mdp, &Policy::uniform(mdp.n_states, mdp.n_actions))?;
    Ok(eigendecompose(&sr_closed_form(&p, gamma)?.psi, true)?)
}

/// State for a `[row, col]` cell, falling back to the map's start cell and
/// then to state 0.
pub fn start_state(grid: &GridSpec, mdp: &TabularMDP, cell: Option<[usize; 2]>) -> usize {
    cell.map(|[r, c]| (r, c))
        .or_else(|| grid.find(Cell::Start))
        .and_then(|rc| mdp.state_of(rc))
        .unwrap_or(0)
}

/// Keyboard synthesis over the first `n_base` eigenoptions.
pub fn keyboard_options(
    mdp: &TabularMDP,
    basis: &EigenBasis,
    n_base: usize,
    alphabet: &[f64],
    gamma: f64,
) -> Result<(Vec<OptionDef>, sr_options::keyboard::KeyboardResult, sr_options::keyboard::QCube), CliError> {
    let base = discover_eigenoptions(mdp, basis, n_base, gamma, OptionSolver::ClosedForm)?;
    let purposes: Vec<_> = eigenpurposes(basis, n_base).into_iter().map(|x| x.1).collect();
    let cube = evaluate_base_options(&base, &purposes, mdp, gamma)?;
    let result = enumerate_keyboard(&cube, alphabet)?;
    Ok((base, result, cube))
}

fn ceo_params(cfg: &ExperimentConfig, start: usize) -> CeoParams {
    let p = &cfg.params;
    let mut c = CeoParams::standard(start);
    c.eta = p.eta.unwrap_or(c.eta);
    c.alpha_o = p.alpha_o.unwrap_or(c.alpha_o);
    c.gamma_sr = p.gamma_sr.unwrap_or(c.gamma_sr);
    c.gamma_o = p.gamma_o.unwrap_or(c.gamma_o);
    c.p_option = p.p_option.unwrap_or(c.p_option);
    c.n_steps = p.episode_len.unwrap_or(c.n_steps);
    c.n_iter = p.n_iter.unwrap_or(c.n_iter);
    c.sr_passes = p.sr_passes.unwrap_or(c.sr_passes);
    c.q_passes = p.q_passes.unwrap_or(c.q_passes);
    c
}

fn online_params(cfg: &ExperimentConfig, start: usize) -> OnlineParams {
    let p = &cfg.params;
    let mut o = OnlineParams::standard(start);
    o.episode_len = p.episode_len.unwrap_or(o.episode_len);
    o.eta = p.eta.unwrap_or(o.eta);
    o.gamma_sr = p.gamma_sr.unwrap_or(o.gamma_sr);
    o.alpha_o = p.alpha_o.unwrap_or(o.alpha_o);
    o.gamma_o = p.gamma_o.unwrap_or(o.gamma_o);
    o.sr_passes = p.sr_passes.unwrap_or(o.sr_passes);
    o.q_passes = p.q_passes.unwrap_or(o.q_passes);
    o
}

/// Discover the option set a config asks for, writing method-specific
/// artifacts on the way.
pub fn discover(
    cfg: &ExperimentConfig,
    grid: &GridSpec,
    mdp: &TabularMDP,
    art: &mut Artifacts,
    seeds: &mut SeedSchedule,
) -> Result<Vec<OptionDef>, CliError> {
    let p = &cfg.params;
    let gamma_sr = p.gamma_sr.unwrap_or(0.9);
    let gamma_o = p.gamma_o.unwrap_or(0.9);
    let closed = p.closed_form.unwrap_or(true);
    let start = start_state(grid, mdp, p.start);
    let options = match cfg.method {
        Method::Baseline => Vec::new(),
        Method::Eigenoptions => {
            let k = p.k.unwrap_or(8);
            if closed {
                discover_eigenoptions(mdp, &sr_basis(mdp, gamma_sr)?, k, gamma_o, OptionSolver::ClosedForm)?
            } else {
                let seed = seeds.derive("discovery", cfg.seed(), DISCOVERY_STREAM);
                online_eigenoptions(mdp, &online_params(cfg, start), p.episodes.unwrap_or(10), k, seed)?
            }
        }
        Method::Covering => {
            let n_iter = p.n_iter.unwrap_or_else(|| p.k.map_or(4, |k| k.div_ceil(2)));
            let mut opts = if closed {
                let basis = match p.basis.unwrap_or(Basis::Laplacian) {
                    Basis::Laplacian => CoverBasis::Laplacian,
                    Basis::Sr => CoverBasis::Sr,
                };
                discover_covering_options(mdp, &CoveringParams { n_iter, basis, gamma_sr, gamma_o })?
            } else {
                let seed = seeds.derive("discovery", cfg.seed(), DISCOVERY_STREAM);
                online_covering_options(mdp, &online_params(cfg, start), n_iter, seed)?
            };
            if let Some(k) = p.k {
                opts.truncate(k);
            }
            opts
        }
        Method::Ceo => {
            let seed = seeds.derive("discovery", cfg.seed(), DISCOVERY_STREAM);
            let (state, logs) = run_ceo(mdp, ceo_params(cfg, start), seed)?;
            let rows: Vec<Vec<String>> = logs
                .iter()
                .map(|l| {
                    vec![
                        l.iteration.to_string(),
                        l.dataset_len.to_string(),
                        l.visited_states.to_string(),
                        l.eigenvalue.to_string(),
                        l.initiation_size.to_string(),
                        l.terminal_states.to_string(),
                    ]
                })
                .collect();
            art.write_rows(
                "ceo_log.csv",
                &["iteration", "dataset_len", "visited_states", "eigenvalue", "initiation_size", "terminal_states"],
                &rows,
            )?;
            state.option_set
        }
        Method::Keyboard => {
            let n_base = p.n_base.unwrap_or(3);
            let alphabet = p.weight_alphabet.clone().unwrap_or_else(|| vec![0.0, 1.0]);
            let (_, result, cube) = keyboard_options(mdp, &sr_basis(mdp, gamma_sr)?, n_base, &alphabet, gamma_o)?;
            art.write("keyboard.csv", |w| result.write_manifest(w))?;
            let counts = unique_counts_by_prefix(&cube, &alphabet)?;
            let rows: Vec<Vec<String>> = counts.iter().enumerate().map(|(i, c)| vec![(i + 1).to_string(), c.to_string()]).collect();
            art.write_rows("keyboard_counts.csv", &["n_base", "unique_options"], &rows)?;
            result.options.into_iter().map(|o| o.option).collect()
        }
    };
    write_options(art, "options.csv", &options)?;
    Ok(options)
}

/// All options in one CSV: option,label,state,initiation,action,termination.
pub fn write_options(art: &mut Artifacts, name: &str, options: &[OptionDef]) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for (i, o) in options.iter().enumerate() {
        for s in 0..o.n_states() {
            rows.push(vec![
                i.to_string(),
                o.label.clone(),
                s.to_string(),
                u8::from(o.initiation[s]).to_string(),
                o.policy[s].to_string(),
                o.termination[s].to_string(),
            ]);
        }
    }
    art.write_rows(name, &["option", "label", "state", "initiation", "action", "termination"], &rows)
}

pub fn write_coverage_summary(art: &mut Artifacts, name: &str, reports: &[(&str, &CoverageReport)]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|(m, r)| {
            vec![
                m.to_string(),
                r.steps.len().to_string(),
                r.mean.to_string(),
                r.sd.to_string(),
                r.median.to_string(),
                r.min.to_string(),
                r.max.to_string(),
            ]
        })
        .collect();
    art.write_rows(name, &["method", "runs", "mean", "sd", "median", "min", "max"], &rows)
}

pub fn write_returns(art: &mut Artifacts, curves: &[(&str, &[ReturnCurve])]) -> Result<(), CliError> {
    let mut rows = Vec::new();
    let mut auc = Vec::new();
    for (method, cs) in curves {
        for (i, c) in cs.iter().enumerate() {
            for (e, (m, h)) in c.mean.iter().zip(&c.ci99).enumerate() {
                rows.push(vec![
                    method.to_string(),
                    i.to_string(),
                    c.task.start.to_string(),
                    c.task.goal.to_string(),
                    e.to_string(),
                    m.to_string(),
                    h.to_string(),
                ]);
            }
            auc.push(vec![
                method.to_string(),
                i.to_string(),
                c.task.start.to_string(),
                c.task.goal.to_string(),
                c.auc.to_string(),
                u8::from(c.unreachable).to_string(),
            ]);
        }
    }
    art.write_rows("returns.csv", &["method", "task", "start", "goal", "episode", "mean", "ci99"], &rows)?;
    art.write_rows("auc.csv", &["method", "task", "start", "goal", "auc", "unreachable"], &auc)
}

pub fn qparams(cfg: &ExperimentConfig) -> QParams {
    let r = &cfg.reward;
    QParams {
        alpha: r.alpha,
        gamma: r.gamma,
        epsilon: r.epsilon,
        episodes: r.episodes,
        max_steps: r.max_steps,
        tie_break: match r.tie_break {
            Tie::First => TieBreak::First,
            Tie::Random => TieBreak::Random,
        },
    }
}

/// Run the evaluations a config lists against `options`.
pub fn evaluate(
    cfg: &ExperimentConfig,
    grid: &GridSpec,
    mdp: &TabularMDP,
    options: &[OptionDef],
    art: &mut Artifacts,
    seeds: &mut SeedSchedule,
) -> Result<(), CliError> {
    let method = cfg.method.name();
    for kind in &cfg.eval {
        match kind {
            EvalKind::Diffusion => {
                let counts = cfg.diffusion.counts.clone().unwrap_or_else(|| (0..=options.len()).collect());
                let reports = diffusion_curve(mdp, options, &counts, method)?;
                art.write("diffusion.csv", |w| write_diffusion_csv(&reports, w))?;
            }
            EvalKind::Cover => {
                let start = start_state(grid, mdp, cfg.cover.start.or(cfg.params.start));
                let rng_seed = seeds.derive("cover", cfg.seed(), COVER_STREAM);
                let ccfg = CoverConfig { episode_len: cfg.cover.episode_len, start, seeds: cfg.cover.runs, rng_seed };
                for i in 0..ccfg.seeds as u64 {
                    seeds.derive(format!("cover:run{i}"), rng_seed, i);
                }
                let mode = if cfg.method == Method::Ceo {
                    CoverMode::Ceo(ceo_params(cfg, start))
                } else {
                    let sampler = cfg.cover.p_option.map_or(Sampler::Uniform, Sampler::POption);
                    CoverMode::Fixed { options: options.to_vec(), sampler }
                };
                let report = monte_carlo_cover(mdp, &mode, &ccfg)?;
                art.write("coverage.csv", |w| write_coverage_csv(&report, w))?;
                write_coverage_summary(art, "coverage_summary.csv", &[(method, &report)])?;
                art.write("visitation.txt", |w| write_heatmap(w, grid, mdp, &report.visitation))?;
            }
            EvalKind::Reward => {
                let tasks = sample_tasks(mdp.n_states, cfg.reward.tasks, cfg.reward.task_seed);
                let rng_seed = seeds.derive("reward", cfg.seed(), REWARD_STREAM);
                for i in 0..tasks.len() as u64 {
                    seeds.derive(format!("reward:task{i}"), rng_seed, i);
                }
                let rcfg = RewardConfig { qparams: qparams(cfg), seeds: cfg.reward.runs, rng_seed };
                let base = reward_experiment(mdp, &tasks, &[], &rcfg)?;
                let with = reward_experiment(mdp, &tasks, options, &rcfg)?;
                write_returns(art, &[("primitive", &base), (method, &with)])?;
            }
            EvalKind::Heatmaps => {
                let freq = terminal_frequency(options, mdp.n_states)?;
                art.write("terminal_frequency.txt", |w| write_heatmap(w, grid, mdp, &freq.relative))?;
                let coords = mdp.state_coords.clone().unwrap_or_default();
                let rows: Vec<Vec<String>> = freq
                    .counts
                    .iter()
                    .enumerate()
                    .map(|(s, c)| {
                        let (r, col) = coords.get(s).copied().unwrap_or((0, 0));
                        vec![s.to_string(), r.to_string(), col.to_string(), c.to_string()]
                    })
                    .collect();
                art.write_rows("terminal_counts.csv", &["state", "row", "col", "count"], &rows)?;
            }
        }
    }
    Ok(())
}

/// Execute a config end to end inside `art`.
pub fn execute(
    cfg: &ExperimentConfig,
    base: Option<&Path>,
    stages: Stages,
    art: &mut Artifacts,
    seeds: &mut SeedSchedule,
) -> Result<(), CliError> {
    let (grid, mdp) = environment(cfg, base)?;
    let options = discover(cfg, &grid, &mdp, art, seeds)?;
    if stages == Stages::All {
        evaluate(cfg, &grid, &mdp, &options, art, seeds)?;
    }
    Ok(())
}
