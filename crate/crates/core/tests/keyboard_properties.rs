mod common;

use std::sync::OnceLock;

use proptest::prelude::*;
use sr_options::discovery::*;
use sr_options::keyboard::*;
use sr_options::spectral::eigendecompose;
use sr_options::sr::sr_closed_form;
use sr_options::{induced_transition_matrix, Policy, TabularMDP};

const N_BASE: usize = 4;

struct Setup {
    mdp: TabularMDP,
    options: Vec<sr_options::option::OptionDef>,
    purposes: Vec<Eigenpurpose>,
    cube: QCube,
}

fn setup() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| {
        let mdp = common::bundled("openroom");
        let p = induced_transition_matrix(&mdp, &Policy::uniform(mdp.n_states, 4)).unwrap();
        let basis = eigendecompose(&sr_closed_form(&p, 0.9).unwrap().psi, true).unwrap();
        let options = discover_eigenoptions(&mdp, &basis, N_BASE, 0.9, OptionSolver::ClosedForm).unwrap();
        let purposes: Vec<_> = eigenpurposes(&basis, N_BASE).into_iter().map(|x| x.1).collect();
        let cube = evaluate_base_options(&options, &purposes, &mdp, 0.9).unwrap();
        Setup { mdp, options, purposes, cube }
    })
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, N_BASE)
}

fn ternary() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::sample::select(vec![-1.0, 0.0, 1.0]), N_BASE)
}

#[test]
fn one_hot_weights_recover_base_options() {
    let s = setup();
    for i in 0..N_BASE {
        let mut w = vec![0.0; N_BASE];
        w[i] = 1.0;
        let synth = gpi_synthesize(&s.cube, &w).unwrap();
        assert_eq!(synth.key, s.options[i].terminal_states(), "base {i}");
    }
}

#[test]
fn enumeration_is_idempotent() {
    let s = setup();
    let a = enumerate_keyboard(&s.cube, &[-1.0, 0.0, 1.0]).unwrap();
    let b = enumerate_keyboard(&s.cube, &[-1.0, 0.0, 1.0]).unwrap();
    let keys = |r: &KeyboardResult| r.options.iter().map(|o| o.key.clone()).collect::<Vec<_>>();
    assert_eq!(keys(&a), keys(&b));
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gpe_is_linear(w1 in weights(), w2 in weights(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let cube = &setup().cube;
        let mix: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + b * y).collect();
        let (q1, q2, qm) = (gpe(cube, &w1).unwrap(), gpe(cube, &w2).unwrap(), gpe(cube, &mix).unwrap());
        for i in 0..N_BASE {
            for ((x, y), z) in q1[i].values.iter().zip(&q2[i].values).zip(&qm[i].values) {
                prop_assert!((a * x + b * y - z).abs() <= 1e-12 * (1.0 + z.abs()));
            }
        }
    }

    #[test]
    fn positive_scaling_keeps_the_option(w in ternary(), lambda in 0.01f64..100.0) {
        let cube = &setup().cube;
        let scaled: Vec<f64> = w.iter().map(|x| x * lambda).collect();
        let a = gpi_synthesize(cube, &w).unwrap();
        let b = gpi_synthesize(cube, &scaled).unwrap();
        prop_assert_eq!(a.option.policy, b.option.policy);
        prop_assert_eq!(a.option.termination, b.option.termination);
    }

    #[test]
    fn synthesized_option_dominates_its_parts(w in ternary()) {
        let s = setup();
        let synth = gpi_synthesize(&s.cube, &w).unwrap();
        let q = evaluate_synthesized(&synth.option, &s.purposes, &w, &s.mdp, 0.9).unwrap();
        let parts = gpe(&s.cube, &w).unwrap();
        for st in 0..s.mdp.n_states {
            for a in 0..s.mdp.n_actions {
                let best = parts.iter().map(|p| p.get(st, a)).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(q.get(st, a) >= best - 1e-8);
            }
        }
    }
}
