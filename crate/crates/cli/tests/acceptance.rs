//! Acceptance criteria. Each test prints one `[PASS]` or `[FAIL]` line;
//! run with `--nocapture` to see them.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use sr_options::discovery::{discover_eigenoptions, eigenpurposes, OptionSolver};
use sr_options::evaluation::{diffusion_curve, diffusion_time, reward_experiment, sample_tasks, RewardConfig};
use sr_options::keyboard::{enumerate_keyboard, evaluate_base_options, evaluate_synthesized, gpe, gpi_synthesize};
use sr_options::rng::split;
use sr_options::rollout::{run_with_options, RolloutConfig, Sampler, TransitionDataset};
use sr_options::sr::{sr_closed_form, sr_neumann, sr_td_learn};
use sr_options::verify::{verify_pvf_sr_equivalence, verify_transition_diff_laplacian};
use sr_options::{induced_transition_matrix, Policy, TabularMDP};

use sropt::artifacts::{Artifacts, SeedSchedule, MANIFEST};
use sropt::reproduce::{self, ReproOptions};
use sropt::run::{sr_basis, REWARD_STREAM};

const GAMMA: f64 = 0.9;

fn mdp(name: &str) -> TabularMDP {
    reproduce::env(name).unwrap().1
}

fn uniform_p(mdp: &TabularMDP) -> nalgebra::DMatrix<f64> {
    induced_transition_matrix(mdp, &Policy::uniform(mdp.n_states, mdp.n_actions)).unwrap()
}

fn report(name: &str, pass: bool, started: Instant, limit: Option<Duration>, detail: String) {
    let elapsed = started.elapsed();
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let ok = pass && in_time;
    let budget = limit.map(|l| format!(" / {}s", l.as_secs())).unwrap_or_default();
    println!("[{}] {name}: {detail} ({:.1}s{budget})", if ok { "PASS" } else { "FAIL" }, elapsed.as_secs_f64());
    assert!(pass, "{name}: {detail}");
    assert!(in_time, "{name}: took {elapsed:?}, limit {limit:?}");
}

#[test]
fn pvf_sr_equivalence() {
    let t = Instant::now();
    let r = verify_pvf_sr_equivalence(&mdp("fourroom"), GAMMA).unwrap();
    report(
        "pvf-sr equivalence",
        r.max_residual < 1e-6 && r.max_angle < 1e-6,
        t,
        Some(Duration::from_secs(5)),
        format!("max eigenvalue residual {:.2e}, max angle {:.2e} rad", r.max_residual, r.max_angle),
    );
}

#[test]
fn transition_differences_give_the_laplacian() {
    let t = Instant::now();
    let m = mdp("fourroom");
    let data = TransitionDataset::full_sweep(&m).unwrap();
    let r = verify_transition_diff_laplacian(&data, &m).unwrap();
    report(
        "transition-difference gram",
        r.gram_matches && r.max_gram_error == 0 && r.max_angle < 1e-8,
        t,
        Some(Duration::from_secs(5)),
        format!("gram exact {}, max angle {:.2e} rad", r.gram_matches, r.max_angle),
    );
}

#[test]
fn every_eigenoption_terminates() {
    let t = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;
    for name in ["fourroom", "openroom"] {
        let m = mdp(name);
        let basis = sr_basis(&m, GAMMA).unwrap();
        let k = eigenpurposes(&basis, 2 * m.n_states).len();
        let options = discover_eigenoptions(&m, &basis, k, GAMMA, OptionSolver::ClosedForm).unwrap();
        let empty = options.iter().filter(|o| o.terminal_states().is_empty()).count();
        pass &= empty == 0 && options.len() == k;
        details.push(format!("{name}: {empty} of {k} without terminal states"));
    }
    report("eigenoption termination", pass, t, Some(Duration::from_secs(30)), details.join("; "));
}

#[test]
fn sr_estimates_agree() {
    let t = Instant::now();
    let m = mdp("fourroom");
    let p = uniform_p(&m);
    let closed = sr_closed_form(&p, GAMMA).unwrap().psi;
    let horizon = 200;
    let bound = GAMMA.powi(horizon as i32 + 1) / (1.0 - GAMMA);
    let neumann_err = (&closed - sr_neumann(&p, GAMMA, horizon)).amax();

    let mut rng = split(0, 0);
    let walk = run_with_options(&m, &[], Sampler::Uniform, &RolloutConfig::new(&m, 50_000, 0), &mut rng);
    let td = sr_td_learn(&walk.dataset, 0.1, GAMMA, 100).unwrap().psi;
    let td_err = (&closed - td).amax();
    let td_bound = 0.05 / (1.0 - GAMMA);
    report(
        "sr consistency",
        neumann_err <= bound && td_err <= td_bound,
        t,
        None,
        format!("neumann {neumann_err:.2e} <= {bound:.2e}; td {td_err:.3} <= {td_bound:.3}"),
    );
}

#[test]
fn diffusion_orderings() {
    let t = Instant::now();
    let m = mdp("fourroom");
    let baseline = diffusion_time(&m, &[], "primitive").unwrap();
    let basis = sr_basis(&m, GAMMA).unwrap();
    let eig = discover_eigenoptions(&m, &basis, 40, GAMMA, OptionSolver::ClosedForm).unwrap();
    let cov = reproduce::covering(&m, 20, sr_options::discovery::CoverBasis::Laplacian).unwrap();
    let counts: Vec<usize> = (1..=40).collect();
    let eig_curve = diffusion_curve(&m, &eig, &counts, "eigenoptions").unwrap();
    let cov_curve = diffusion_curve(&m, &cov, &counts, "covering").unwrap();

    let a = cov_curve[0].median < baseline.median;
    // smallest k* such that eigenoptions win at every count from k* to 40
    let k_star = (1..=40usize).rev().take_while(|&k| eig_curve[k - 1].avg < cov_curve[k - 1].avg).last();
    let b = k_star.is_some();
    let sink: Vec<String> = eig_curve[..3].iter().map(|r| format!("{:.3e}", r.avg)).collect();
    let c = eig_curve[..3].iter().all(|r| r.avg > baseline.avg);
    report(
        "diffusion orderings",
        a && b && c,
        t,
        Some(Duration::from_secs(600)),
        format!(
            "(a) covering median {:.1} < baseline {:.1}: {a}; (b) k* = {k_star:?}: {b}; (c) eigen avg {sink:?} > baseline {:.1}: {c}",
            cov_curve[0].median, baseline.median, baseline.avg
        ),
    );
}

#[test]
fn ceo_cover_time() {
    let t = Instant::now();
    let (random, ceo) = reproduce::cover_reports(100, 0, &mut SeedSchedule::new(0)).unwrap();
    let ratio = random.mean / ceo.mean;
    let pass = (1800.0..=3000.0).contains(&ceo.mean) && (20_000.0..=35_000.0).contains(&random.mean) && ratio >= 5.0;
    report(
        "ceo cover time",
        pass,
        t,
        Some(Duration::from_secs(900)),
        format!("ceo mean {:.1} (sd {:.1}), random mean {:.1}, ratio {ratio:.2}", ceo.mean, ceo.sd, random.mean),
    );
}

#[test]
fn keyboard_combinatorics() {
    let t = Instant::now();
    let m = mdp("openroom");
    let (_, cube3) = reproduce::keyboard_cube(&m, 3).unwrap();
    let three = enumerate_keyboard(&cube3, &reproduce::ALPHABET_01).unwrap().unique_count();
    let (base, cube10) = reproduce::keyboard_cube(&m, 10).unwrap();
    let base_terminals = reproduce::terminal_union(&base).len();
    let synth: Vec<_> = enumerate_keyboard(&cube10, &reproduce::ALPHABET_01).unwrap().options.into_iter().map(|o| o.option).collect();
    let closure: BTreeSet<usize> = reproduce::terminal_union(&synth);
    let pass = three == 5 && base_terminals == 16 && closure.len().abs_diff(96) <= 10;
    report(
        "keyboard combinatorics",
        pass,
        t,
        Some(Duration::from_secs(300)),
        format!("3 bases -> {three} options; 10 bases terminate in {base_terminals} states, closure in {}", closure.len()),
    );
}

#[test]
fn gpi_dominance() {
    use rand::Rng;
    let t = Instant::now();
    let m = mdp("openroom");
    let basis = sr_basis(&m, GAMMA).unwrap();
    let base = discover_eigenoptions(&m, &basis, 6, GAMMA, OptionSolver::ClosedForm).unwrap();
    let purposes: Vec<_> = eigenpurposes(&basis, 6).into_iter().map(|x| x.1).collect();
    let cube = evaluate_base_options(&base, &purposes, &m, GAMMA).unwrap();
    let mut rng = split(0, 0);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..50 {
        let w: Vec<f64> = (0..6).map(|_| [-1.0, 0.0, 1.0][rng.random_range(0..3)]).collect();
        let synth = gpi_synthesize(&cube, &w).unwrap();
        let q = evaluate_synthesized(&synth.option, &purposes, &w, &m, GAMMA).unwrap();
        let parts = gpe(&cube, &w).unwrap();
        for s in 0..m.n_states {
            for a in 0..m.n_actions {
                let best = parts.iter().map(|p| p.get(s, a)).fold(f64::NEG_INFINITY, f64::max);
                worst = worst.max(best - q.get(s, a));
            }
        }
    }
    report(
        "gpi dominance",
        worst <= 1e-8,
        t,
        Some(Duration::from_secs(120)),
        format!("largest shortfall max_i q_i - q_synth = {worst:.2e} over 50 weight vectors"),
    );
}

#[test]
fn reward_directionality() {
    let t = Instant::now();
    let m = mdp("fourroom");
    let (eig, cov) = reproduce::reward_option_sets(&m).unwrap();
    let tasks = sample_tasks(m.n_states, reproduce::REWARD_TASKS, 0);
    let rng_seed = SeedSchedule::new(0).derive("reward", 0, REWARD_STREAM);
    let cfg = RewardConfig { qparams: reproduce::reward_qparams(), seeds: reproduce::REWARD_RUNS, rng_seed };
    let base = reward_experiment(&m, &tasks, &[], &cfg).unwrap();
    let with_eig = reward_experiment(&m, &tasks, &eig, &cfg).unwrap();
    let with_cov = reward_experiment(&m, &tasks, &cov, &cfg).unwrap();
    let eig_wins = base.iter().zip(&with_eig).filter(|(b, e)| e.auc >= b.auc).count();
    let cov_gap = base.iter().zip(&with_cov).map(|(b, c)| (c.auc - b.auc).abs() / b.auc).fold(0.0, f64::max);
    report(
        "reward directionality",
        eig_wins >= 9 && cov_gap <= 0.10,
        t,
        Some(Duration::from_secs(1200)),
        format!("eigenoptions >= baseline on {eig_wins}/10 tasks; covering max relative gap {:.1}%", 100.0 * cov_gap),
    );
}

#[test]
fn covering_basis_parity() {
    let t = Instant::now();
    let (sr, lap) = reproduce::appendix_f_curves(&mdp("fourroom")).unwrap();
    let gap = sr.iter().zip(&lap).map(|(a, b)| (a.avg - b.avg).abs() / b.avg).fold(0.0, f64::max);
    report(
        "covering basis parity",
        sr.len() == 21 && gap < 0.15,
        t,
        None,
        format!("max relative avg gap {:.1}% over 0..=20 options", 100.0 * gap),
    );
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != MANIFEST)
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn reproduce_is_deterministic() {
    let t = Instant::now();
    let mut differing = Vec::new();
    for id in reproduce::TARGETS {
        let mut runs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            let mut art = Artifacts::create(dir.path()).unwrap();
            let opts = ReproOptions { seed: 7, runs: Some(2) };
            reproduce::reproduce(id, opts, &mut art, &mut SeedSchedule::new(7)).unwrap();
            runs.push(csv_bytes(dir.path()));
        }
        if runs[0] != runs[1] || runs[0].is_empty() {
            differing.push(id);
        }
    }
    report(
        "reproduce determinism",
        differing.is_empty(),
        t,
        None,
        format!("{} targets rerun, differing: {differing:?}", reproduce::TARGETS.len()),
    );
}
