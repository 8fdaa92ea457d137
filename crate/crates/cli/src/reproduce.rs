//! Pre-registered experiment recipes, one per figure or study.

use std::collections::BTreeSet;

use serde_json::json;
use sr_options::discovery::{
    discover_covering_options, discover_eigenoptions, eigenpurposes, with_broad_initiation, with_point_initiation,
    CeoParams, CoverBasis, CoveringParams, OptionSolver,
};
use sr_options::evaluation::{
    diffusion_curve, monte_carlo_cover, reward_experiment, sample_tasks, terminal_frequency, write_coverage_csv,
    write_diffusion_csv, write_heatmap, CoverConfig, CoverMode, CoverageReport, DiffusionReport, RewardConfig,
};
use sr_options::keyboard::{unique_counts_by_prefix, QCube};
use sr_options::learn::{QParams, TieBreak};
use sr_options::online::{online_covering_options, online_eigenoptions, OnlineParams};
use sr_options::option::OptionDef;
use sr_options::rollout::Sampler;
use sr_options::{build_mdp, GridSpec, TabularMDP};

use crate::artifacts::{Artifacts, SeedSchedule};
use crate::run::{keyboard_options, sr_basis, write_coverage_summary, write_options, write_returns};
use crate::CliError;

pub const TARGETS: [&str; 12] =
    ["fig7", "fig8", "fig9", "fig10", "fig11", "fig13", "fig14", "fig15", "fig16", "fig17", "ceo", "appendixF"];

const GAMMA: f64 = 0.9;
/// Top-right floor cell of the four-room map.
pub const FOURROOM_TOP_RIGHT: (usize, usize) = (1, 11);
/// Bottom-left floor cell of the four-room map.
pub const FOURROOM_BOTTOM_LEFT: (usize, usize) = (11, 1);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReproOptions {
    pub seed: u64,
    /// Replicate count override (cover runs, reward seeds, online runs).
    pub runs: Option<usize>,
}

pub fn env(name: &str) -> Result<(GridSpec, TabularMDP), CliError> {
    let grid = GridSpec::bundled(name).ok_or_else(|| CliError::Runtime(format!("missing bundled map {name}")))?;
    let mdp = build_mdp(&grid, GAMMA)?;
    Ok((grid, mdp))
}

fn state(mdp: &TabularMDP, rc: (usize, usize)) -> Result<usize, CliError> {
    mdp.state_of(rc).ok_or_else(|| CliError::Runtime(format!("cell {rc:?} is not a floor cell")))
}

/// Run target `id`, writing into `art`; returns the recipe for the run record.
pub fn reproduce(id: &str, opts: ReproOptions, art: &mut Artifacts, seeds: &mut SeedSchedule) -> Result<serde_json::Value, CliError> {
    match id {
        "fig7" => fig7(art),
        "fig8" => fig8(opts, art, seeds),
        "fig9" => fig9(art),
        "fig10" => fig10(opts, art, seeds),
        "fig11" => fig11(opts, art, seeds),
        "fig13" => fig13(art),
        "fig14" => terminal_heatmaps("openroom", art),
        "fig15" => terminal_heatmaps("fourroom", art),
        "fig16" => keyboard_diffusion("openroom", art),
        "fig17" => keyboard_diffusion("fourroom", art),
        "ceo" => ceo(opts, art, seeds),
        "appendixF" => appendix_f(art),
        other => Err(CliError::UnknownTarget(other.to_string())),
    }
}

pub const FIG7_EIGEN_COUNTS: [usize; 20] = [0, 1, 2, 3, 4, 6, 8, 10, 12, 14, 16, 20, 24, 28, 32, 36, 40, 64, 128, 200];
pub const FIG7_COVER_ITERS: usize = 20;

/// Closed-form eigenoptions and covering options on four-room.
pub fn fig7_curves(mdp: &TabularMDP) -> Result<(Vec<DiffusionReport>, Vec<DiffusionReport>), CliError> {
    let basis = sr_basis(mdp, GAMMA)?;
    let k = *FIG7_EIGEN_COUNTS.last().unwrap();
    let eig = discover_eigenoptions(mdp, &basis, k, GAMMA, OptionSolver::ClosedForm)?;
    let cov = covering(mdp, FIG7_COVER_ITERS, CoverBasis::Laplacian)?;
    let eig_curve = diffusion_curve(mdp, &eig, &FIG7_EIGEN_COUNTS, "eigenoptions")?;
    let cov_counts: Vec<usize> = (0..=cov.len()).collect();
    let cov_curve = diffusion_curve(mdp, &cov, &cov_counts, "covering")?;
    Ok((eig_curve, cov_curve))
}

pub fn covering(mdp: &TabularMDP, n_iter: usize, basis: CoverBasis) -> Result<Vec<OptionDef>, CliError> {
    Ok(discover_covering_options(mdp, &CoveringParams { n_iter, basis, gamma_sr: GAMMA, gamma_o: GAMMA })?)
}

fn fig7(art: &mut Artifacts) -> Result<serde_json::Value, CliError> {
    let (_, mdp) = env("fourroom")?;
    let (eig, cov) = fig7_curves(&mdp)?;
    let all: Vec<DiffusionReport> = eig.into_iter().chain(cov).collect();
    art.write("diffusion.csv", |w| write_diffusion_csv(&all, w))?;
    Ok(json!({ "env": "fourroom", "gamma_sr": GAMMA, "gamma_o": GAMMA, "eigen_counts": FIG7_EIGEN_COUNTS, "covering_iterations": FIG7_COVER_ITERS }))
}

pub const REWARD_TASKS: usize = 10;
pub const REWARD_RUNS: usize = 50;
pub const REWARD_OPTIONS: usize = 4;

pub fn reward_qparams() -> QParams {
    QParams { tie_break: TieBreak::Random, ..QParams::default() }
}

/// Four eigenoptions and four covering options for the goal-task study.
pub fn reward_option_sets(mdp: &TabularMDP) -> Result<(Vec<OptionDef>, Vec<OptionDef>), CliError> {
    let eig = discover_eigenoptions(mdp, &sr_basis(mdp, GAMMA)?, REWARD_OPTIONS, GAMMA, OptionSolver::ClosedForm)?;
    let cov = covering(mdp, REWARD_OPTIONS / 2, CoverBasis::Laplacian)?;
    Ok((eig, cov))
}

fn fig8(opts: ReproOptions, art: &mut Artifacts, seeds: &mut SeedSchedule) -> Result<serde_json::Value, CliError> {
    let (_, mdp) = env("fourroom")?;
    let (eig, cov) = reward_option_sets(&mdp)?;
    let runs = opts.runs.unwrap_or(REWARD_RUNS);
    let tasks = sample_tasks(mdp.n_states, REWARD_TASKS, opts.seed);
    let rng_seed = seeds.derive("reward", opts.seed, crate::run::REWARD_STREAM);
    let cfg = RewardConfig { qparams: reward_qparams(), seeds: runs, rng_seed };
    let base = reward_experiment(&mdp, &tasks, &[], &cfg)?;
    let with_eig = reward_experiment(&mdp, &tasks, &eig, &cfg)?;
    let with_cov = reward_experiment(&mdp, &tasks, &cov, &cfg)?;
    write_returns(art, &[("primitive", &base), ("eigenoptions", &with_eig), ("covering", &with_cov)])?;
    let q = cfg.qparams;
    Ok(json!({
        "env": "fourroom", "tasks": REWARD_TASKS, "task_seed": opts.seed, "runs": runs, "options": REWARD_OPTIONS,
        "alpha": q.alpha, "gamma": q.gamma, "epsilon": q.epsilon, "episodes": q.episodes, "max_steps": q.max_steps,
        "tie_break": "random", "return": "undiscounted"
    }))
}

pub const ABLATION_MAX: usize = 40;

/// The four initiation-set / iteration variants compared by the ablation.
pub fn ablation_sets(mdp: &TabularMDP) -> Result<Vec<(&'static str, Vec<OptionDef>)>, CliError> {
    let basis = sr_basis(mdp, GAMMA)?;
    let eig = discover_eigenoptions(mdp, &basis, ABLATION_MAX, GAMMA, OptionSolver::ClosedForm)?;
    let purposes = eigenpurposes(&basis, ABLATION_MAX);
    let point_eig: Vec<OptionDef> =
        eig.iter().zip(&purposes).map(|(o, (_, e))| with_point_initiation(o, e.argmin())).collect();
    let cov = covering(mdp, ABLATION_MAX / 2, CoverBasis::Laplacian)?;
    let broad_cov: Vec<OptionDef> = cov.iter().map(with_broad_initiation).collect();
    Ok(vec![("covering", cov), ("covering-broad", broad_cov), ("eigenoptions-point", point_eig), ("eigenoptions", eig)])
}

fn fig9(art: &mut Artifacts) -> Result<serde_json::Value, CliError> {
    let (_, mdp) = env("fourroom")?;
    let counts: Vec<usize> = (0..=ABLATION_MAX).collect();
    let mut all = Vec::new();
    for (name, set) in ablation_sets(&mdp)? {
        all.extend(diffusion_curve(&mdp, &set, &counts, name)?);
    }
    art.write("diffusion.csv", |w| write_diffusion_csv(&all, w))?;
    Ok(json!({ "env": "fourroom", "max_options": ABLATION_MAX, "variants": ["covering", "covering-broad", "eigenoptions-point", "eigenoptions"] }))
}

pub const ONLINE_EPISODES: [usize; 3] = [1, 10, 50];
pub const ONLINE_RUNS: usize = 5;
pub const ONLINE_MAX: usize = 20;

fn mean_curve(method: String, runs: &[Vec<DiffusionReport>]) -> Vec<DiffusionReport> {
    let n = runs.len() as f64;
    (0..runs[0].len())
        .map(|i| DiffusionReport {
            num_options: runs[0][i].num_options,
            method: method.clone(),
            avg: runs.iter().map(|r| r[i].avg).sum::<f64>() / n,
            median: runs.iter().map(|r| r[i].median).sum::<f64>() / n,
            per_pair: None,
            num_unreachable: runs.iter().map(|r| r[i].num_unreachable).max().unwrap_or(0),
        })
        .collect()
}

fn fig10(opts: ReproOptions, art: &mut Artifacts, seeds: &mut SeedSchedule) -> Result<serde_json::Value, CliError> {
    let (_, mdp) = env("fourroom")?;
    let runs = opts.runs.unwrap_or(ONLINE_RUNS);
    let params = OnlineParams::standard(state(&mdp, FOURROOM_BOTTOM_LEFT)?);
    let counts: Vec<usize> = (0..=ONLINE_MAX).collect();
    let mut all = Vec::new();
    let basis = sr_basis(&mdp, GAMMA)?;
    let closed = discover_eigenoptions(&mdp, &basis, ONLINE_MAX, GAMMA, OptionSolver::ClosedForm)?;
    all.extend(diffusion_curve(&mdp, &closed, &counts, "eigenoptions-closed-form")?);
    let parent = seeds.derive("online", opts.seed, 0);
    for (ei, &episodes) in ONLINE_EPISODES.iter().enumerate() {
        let mut curves = Vec::with_capacity(runs);
        for r in 0..runs {
            let seed = seeds.derive(format!("online-eigen:episodes{episodes}:run{r}"), parent, (ei * runs + r) as u64);
            let set = online_eigenoptions(&mdp, &params, episodes, ONLINE_MAX, seed)?;
            curves.push(diffusion_curve(&mdp, &set, &counts, "")?);
        }
        all.extend(mean_curve(format!("eigenoptions-online-{episodes}ep"), &curves));
    }
    let cov = covering(&mdp, ONLINE_MAX / 2, CoverBasis::Sr)?;
    all.extend(diffusion_curve(&mdp, &cov, &counts, "covering-closed-form")?);
    let mut curves = Vec::with_capacity(runs);
    for r in 0..runs {
        let seed = seeds.derive(format!("online-covering:run{r}"), parent, (ONLINE_EPISODES.len() * runs + r) as u64);
        let set = online_covering_options(&mdp, &params, ONLINE_MAX / 2, seed)?;
        curves.push(diffusion_curve(&mdp, &set, &counts, "")?);
    }
    all.extend(mean_curve("covering-online".into(), &curves));
    art.write("diffusion.csv", |w| write_diffusion_csv(&all, w))?;
    Ok(json!({
        "env": "fourroom", "runs": runs, "episodes": ONLINE_EPISODES, "episode_len": params.episode_len,
        "start": FOURROOM_BOTTOM_LEFT, "eta": params.eta, "gamma_sr": params.gamma_sr, "alpha_o": params.alpha_o,
        "gamma_o": params.gamma_o, "sr_passes": params.sr_passes, "q_passes": params.q_passes, "max_options": ONLINE_MAX,
        "averaging": "mean of avg and median over runs; num_unreachable is the max over runs"
    }))
}

pub const COVER_RUNS: usize = 100;
pub const COVER_EPISODE: usize = 100;

/// Random-walk and covering-eigenoptions cover-time runs from the top-right cell.
pub fn cover_reports(runs: usize, seed: u64, seeds: &mut SeedSchedule) -> Result<(CoverageReport, CoverageReport), CliError> {
    let (_, mdp) = env("fourroom")?;
    let start = state(&mdp, FOURROOM_TOP_RIGHT)?;
    let random_seed = seeds.derive("cover:random", seed, 0);
    let ceo_seed = seeds.derive("cover:ceo", seed, 1);
    let cfg = |rng_seed| CoverConfig { episode_len: COVER_EPISODE, start, seeds: runs, rng_seed };
    let random = monte_carlo_cover(&mdp, &CoverMode::Fixed { options: vec![], sampler: Sampler::Uniform }, &cfg(random_seed))?;
    let ceo = monte_carlo_cover(&mdp, &CoverMode::Ceo(CeoParams::standard(start)), &cfg(ceo_seed))?;
    Ok((random, ceo))
}

fn cover_recipe(runs: usize) -> serde_json::Value {
    let p = CeoParams::standard(0);
    json!({
        "env": "fourroom", "runs": runs, "episode_len": COVER_EPISODE, "start": FOURROOM_TOP_RIGHT,
        "eta": p.eta, "alpha_o": p.alpha_o, "gamma_sr": p.gamma_sr, "gamma_o": p.gamma_o, "p_option": p.p_option,
        "sr_passes": p.sr_passes, "q_passes": p.q_passes
    })
}

fn fig11(opts: ReproOptions, art: &mut Artifacts, seeds: &mut SeedSchedule) -> Result<serde_json::Value, CliError> {
    let (grid, mdp) = env("fourroom")?;
    let runs = opts.runs.unwrap_or(COVER_RUNS);
    let (random, ceo) = cover_reports(runs, opts.seed, seeds)?;
    art.write("visitation_random.txt", |w| write_heatmap(w, &grid, &mdp, &random.visitation))?;
    art.write("visitation_ceo.txt", |w| write_heatmap(w, &grid, &mdp, &ceo.visitation))?;
    write_coverage_summary(art, "coverage_summary.csv", &[("random", &random), ("ceo", &ceo)])?;
    Ok(cover_recipe(runs))
}

fn ceo(opts: ReproOptions, art: &mut Artifacts, seeds: &mut SeedSchedule) -> Result<serde_json::Value, CliError> {
    let runs = opts.runs.unwrap_or(COVER_RUNS);
    let (random, ceo) = cover_reports(runs, opts.seed, seeds)?;
    art.write("coverage.csv", |w| write_coverage_csv(&ceo, w))?;
    art.write("coverage_random.csv", |w| write_coverage_csv(&random, w))?;
    write_coverage_summary(art, "coverage_summary.csv", &[("random", &random), ("ceo", &ceo)])?;
    Ok(cover_recipe(runs))
}

pub const KEYBOARD_BASES: usize = 10;
pub const ALPHABET_01: [f64; 2] = [0.0, 1.0];
pub const ALPHABET_SIGNED: [f64; 3] = [-1.0, 0.0, 1.0];

fn alphabet_name(a: &[f64]) -> String {
    let parts: Vec<String> = a.iter().map(|x| x.to_string()).collect();
    format!("{{{}}}", parts.join(";"))
}

/// Base eigenoptions plus the evaluated cube for the first `n` of them.
pub fn keyboard_cube(mdp: &TabularMDP, n: usize) -> Result<(Vec<OptionDef>, QCube), CliError> {
    let (base, _, cube) = keyboard_options(mdp, &sr_basis(mdp, GAMMA)?, n, &ALPHABET_01, GAMMA)?;
    Ok((base, cube))
}

fn fig13(art: &mut Artifacts) -> Result<serde_json::Value, CliError> {
    let mut rows = Vec::new();
    for name in ["openroom", "fourroom"] {
        let (_, mdp) = env(name)?;
        let (_, cube) = keyboard_cube(&mdp, KEYBOARD_BASES)?;
        for alphabet in [&ALPHABET_01[..], &ALPHABET_SIGNED[..]] {
            for (i, c) in unique_counts_by_prefix(&cube, alphabet)?.iter().enumerate() {
                rows.push(vec![name.to_string(), alphabet_name(alphabet), (i + 1).to_string(), c.to_string()]);
            }
        }
    }
    art.write_rows("keyboard_counts.csv", &["env", "alphabet", "n_base", "unique_options"], &rows)?;
    let (_, mdp) = env("openroom")?;
    let (_, result, _) = keyboard_options(&mdp, &sr_basis(&mdp, GAMMA)?, 3, &ALPHABET_01, GAMMA)?;
    art.write("keyboard_openroom_3.csv", |w| result.write_manifest(w))?;
    Ok(json!({ "envs": ["openroom", "fourroom"], "max_bases": KEYBOARD_BASES, "alphabets": ["{0;1}", "{-1;0;1}"], "gamma": GAMMA }))
}

fn terminal_heatmaps(name: &str, art: &mut Artifacts) -> Result<serde_json::Value, CliError> {
    let (grid, mdp) = env(name)?;
    let (base, result, _) = keyboard_options(&mdp, &sr_basis(&mdp, GAMMA)?, KEYBOARD_BASES, &ALPHABET_01, GAMMA)?;
    let synth: Vec<OptionDef> = result.options.into_iter().map(|o| o.option).collect();
    let fb = terminal_frequency(&base, mdp.n_states)?;
    let fk = terminal_frequency(&synth, mdp.n_states)?;
    art.write("terminal_base.txt", |w| write_heatmap(w, &grid, &mdp, &fb.relative))?;
    art.write("terminal_keyboard.txt", |w| write_heatmap(w, &grid, &mdp, &fk.relative))?;
    let coords = mdp.state_coords.clone().unwrap_or_default();
    let rows: Vec<Vec<String>> = (0..mdp.n_states)
        .map(|s| {
            let (r, c) = coords[s];
            vec![s.to_string(), r.to_string(), c.to_string(), fb.counts[s].to_string(), fk.counts[s].to_string()]
        })
        .collect();
    art.write_rows("terminal_counts.csv", &["state", "row", "col", "base", "keyboard"], &rows)?;
    let summary = vec![
        vec!["base".to_string(), base.len().to_string(), fb.distinct_states().to_string()],
        vec!["keyboard".to_string(), synth.len().to_string(), fk.distinct_states().to_string()],
    ];
    art.write_rows("terminal_summary.csv", &["set", "options", "distinct_terminal_states"], &summary)?;
    Ok(json!({ "env": name, "bases": KEYBOARD_BASES, "alphabet": "{0;1}", "gamma": GAMMA }))
}

/// Union of terminal states over options.
pub fn terminal_union(options: &[OptionDef]) -> BTreeSet<usize> {
    options.iter().flat_map(|o| o.terminal_states()).collect()
}

pub const KEYBOARD_DIFFUSION_BASES: usize = 8;

fn keyboard_diffusion(name: &str, art: &mut Artifacts) -> Result<serde_json::Value, CliError> {
    let (_, mdp) = env(name)?;
    let basis = sr_basis(&mdp, GAMMA)?;
    let n = KEYBOARD_DIFFUSION_BASES;
    let (base, _, cube) = keyboard_options(&mdp, &basis, n, &ALPHABET_01, GAMMA)?;
    let mut all = diffusion_curve(&mdp, &base, &(0..=n).collect::<Vec<_>>(), "eigenoptions")?;
    let mut rows = Vec::new();
    for alphabet in [&ALPHABET_01[..], &ALPHABET_SIGNED[..]] {
        let label = format!("keyboard{}", alphabet_name(alphabet));
        for m in 1..=n {
            let result = sr_options::keyboard::enumerate_keyboard(&cube.prefix(m), alphabet)?;
            let synth: Vec<OptionDef> = result.options.into_iter().map(|o| o.option).collect();
            let mut r = diffusion_curve(&mdp, &synth, &[synth.len()], &label)?;
            rows.push(vec![label.clone(), m.to_string(), synth.len().to_string()]);
            all.append(&mut r);
        }
    }
    art.write("diffusion.csv", |w| write_diffusion_csv(&all, w))?;
    art.write_rows("keyboard_sets.csv", &["method", "n_base", "num_options"], &rows)?;
    write_options(art, "base_options.csv", &base)?;
    Ok(json!({ "env": name, "bases": n, "alphabets": ["{0;1}", "{-1;0;1}"], "gamma": GAMMA }))
}

pub const APPENDIX_F_ITERS: usize = 10;

/// Covering-option diffusion curves from the SR basis and the Laplacian basis.
pub fn appendix_f_curves(mdp: &TabularMDP) -> Result<(Vec<DiffusionReport>, Vec<DiffusionReport>), CliError> {
    let counts: Vec<usize> = (0..=2 * APPENDIX_F_ITERS).collect();
    let sr = covering(mdp, APPENDIX_F_ITERS, CoverBasis::Sr)?;
    let lap = covering(mdp, APPENDIX_F_ITERS, CoverBasis::Laplacian)?;
    Ok((diffusion_curve(mdp, &sr, &counts, "covering-sr")?, diffusion_curve(mdp, &lap, &counts, "covering-laplacian")?))
}

fn appendix_f(art: &mut Artifacts) -> Result<serde_json::Value, CliError> {
    let (_, mdp) = env("fourroom")?;
    let (sr, lap) = appendix_f_curves(&mdp)?;
    let all: Vec<DiffusionReport> = sr.into_iter().chain(lap).collect();
    art.write("diffusion.csv", |w| write_diffusion_csv(&all, w))?;
    Ok(json!({ "env": "fourroom", "iterations": APPENDIX_F_ITERS, "gamma_sr": GAMMA, "gamma_o": GAMMA }))
}
