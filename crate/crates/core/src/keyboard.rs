//! The option keyboard: generalized policy evaluation and improvement over a
//! set of base options, and enumeration of the options it synthesises.

use std::collections::HashSet;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::discovery::Eigenpurpose;
use crate::error::{Error, Result};
use crate::mdp::TabularMDP;
use crate::option::OptionDef;
use crate::solve::{QTable, TIE_TOL};

/// Largest base-set size [`enumerate_keyboard`] accepts.
pub const MAX_BASE: usize = 14;

/// q_i^{r_j}(s, a) for base option i and base reward j; the last action
/// column is terminate (always 0).
#[derive(Debug, Clone, PartialEq)]
pub struct QCube {
    pub n_base: usize,
    pub n_states: usize,
    pub n_actions: usize,
    values: Vec<f64>,
}

impl QCube {
    fn width(&self) -> usize {
        self.n_actions + 1
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        (i * self.n_base + j) * self.n_states * self.width()
    }

    pub fn get(&self, i: usize, j: usize, s: usize, a: usize) -> f64 {
        self.values[self.offset(i, j) + s * self.width() + a]
    }

    /// The (i, j) slice as a q table with a terminate column.
    pub fn slice(&self, i: usize, j: usize) -> QTable {
        let len = self.n_states * self.width();
        let start = self.offset(i, j);
        QTable {
            n_states: self.n_states,
            n_actions: self.n_actions,
            terminate: true,
            values: self.values[start..start + len].to_vec(),
        }
    }

    /// The cube restricted to the first `m` options and rewards.
    pub fn prefix(&self, m: usize) -> QCube {
        let len = self.n_states * self.width();
        let mut values = Vec::with_capacity(m * m * len);
        for i in 0..m {
            for j in 0..m {
                let start = self.offset(i, j);
                values.extend_from_slice(&self.values[start..start + len]);
            }
        }
        QCube { n_base: m, n_states: self.n_states, n_actions: self.n_actions, values }
    }
}

/// Evaluate every base option under every base reward.
///
/// The option acts with its policy until a state with β = 1, where it
/// terminates with value 0; q_i^{r_j}(s, a) takes one primitive step with
/// reward r_j and then follows option i.
pub fn evaluate_base_options(options: &[OptionDef], rewards: &[Eigenpurpose], mdp: &TabularMDP, gamma: f64) -> Result<QCube> {
    if options.len() != rewards.len() {
        return Err(Error::Shape(format!("{} options but {} rewards", options.len(), rewards.len())));
    }
    let (n, na, nb) = (mdp.n_states, mdp.n_actions, options.len());
    if options.iter().any(|o| o.n_states() != n) || rewards.iter().any(|r| r.vector.len() != n) {
        return Err(Error::Shape("base options or rewards do not match the state count".into()));
    }
    let tables: Vec<Vec<f64>> = rewards.iter().map(|r| r.reward_table(mdp)).collect();
    let width = na + 1;
    let blocks: Vec<Result<Vec<f64>>> = options
        .par_iter()
        .map(|opt| {
            let mut a = DMatrix::<f64>::identity(n, n);
            let mut b = DMatrix::<f64>::zeros(n, nb);
            for s in 0..n {
                if opt.is_terminal(s) {
                    continue;
                }
                let act = opt.policy[s];
                for &(next, p) in mdp.successors(s, act) {
                    a[(s, next)] -= gamma * p;
                }
                for j in 0..nb {
                    b[(s, j)] = tables[j][s * na + act];
                }
            }
            let v = a.lu().solve(&b).ok_or_else(|| Error::Numeric("singular option evaluation".into()))?;
            let mut out = vec![0.0; nb * n * width];
            for j in 0..nb {
                for s in 0..n {
                    for act in 0..na {
                        let mut q = tables[j][s * na + act];
                        for &(next, p) in mdp.successors(s, act) {
                            q += gamma * p * v[(next, j)];
                        }
                        out[(j * n + s) * width + act] = q;
                    }
                }
            }
            Ok(out)
        })
        .collect();
    let mut values = Vec::with_capacity(nb * nb * n * width);
    for block in blocks {
        values.extend(block?);
    }
    Ok(QCube { n_base: nb, n_states: n, n_actions: na, values })
}

/// q_i^c = Σ_j w_j q_i^{r_j} for every base option i.
pub fn gpe(cube: &QCube, w: &[f64]) -> Result<Vec<QTable>> {
    if w.len() != cube.n_base {
        return Err(Error::Shape(format!("{} weights for {} base options", w.len(), cube.n_base)));
    }
    let len = cube.n_states * cube.width();
    Ok((0..cube.n_base)
        .map(|i| {
            let mut values = vec![0.0; len];
            for (j, &wj) in w.iter().enumerate() {
                if wj == 0.0 {
                    continue;
                }
                let start = cube.offset(i, j);
                for (x, &q) in values.iter_mut().zip(&cube.values[start..start + len]) {
                    *x += wj * q;
                }
            }
            QTable { n_states: cube.n_states, n_actions: cube.n_actions, terminate: true, values }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOption {
    pub option: OptionDef,
    pub weights: Vec<f64>,
    /// Sorted terminal states; two synthesised options are the same when
    /// their keys match.
    pub key: Vec<usize>,
    /// Terminates everywhere (empty initiation set).
    pub degenerate: bool,
}

/// GPI over the extended action set: terminate where no primitive beats 0,
/// otherwise the primitive with the largest max_i q_i^c.
pub fn gpi_synthesize(cube: &QCube, w: &[f64]) -> Result<SynthOption> {
    let qs = gpe(cube, w)?;
    let (n, na) = (cube.n_states, cube.n_actions);
    let mut initiation = vec![false; n];
    let mut policy = vec![0; n];
    let mut termination = vec![1.0; n];
    // tolerances scale with w so that λw gives the same option for λ > 0
    let tol = TIE_TOL * w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut best = vec![0.0; na];
    for s in 0..n {
        for (a, b) in best.iter_mut().enumerate() {
            *b = qs.iter().map(|q| q.get(s, a)).fold(f64::NEG_INFINITY, f64::max);
        }
        let top = best.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let arg = best.iter().position(|&b| b >= top - tol).unwrap_or(0);
        if top > tol {
            initiation[s] = true;
            policy[s] = arg;
            termination[s] = 0.0;
        }
    }
    let key: Vec<usize> = (0..n).filter(|&s| termination[s] >= 1.0).collect();
    let degenerate = key.len() == n;
    let label = format!("ok:[{}]", fmt_weights(w, ","));
    Ok(SynthOption { option: OptionDef { initiation, policy, termination, label }, weights: w.to_vec(), key, degenerate })
}

fn fmt_weights(w: &[f64], sep: &str) -> String {
    w.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(sep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyboardResult {
    /// Non-degenerate options with distinct keys, first occurrence in
    /// lexicographic weight order.
    pub options: Vec<SynthOption>,
    /// Degenerate composites, one per key, kept for inspection only.
    pub degenerate: Vec<SynthOption>,
    /// Every non-zero weight vector with its key, in enumeration order.
    pub all: Vec<(Vec<f64>, Vec<usize>, bool)>,
}

impl KeyboardResult {
    pub fn unique_count(&self) -> usize {
        self.options.len()
    }

    /// Manifest CSV: weights, canonical key, degenerate flag, kept flag.
    pub fn write_manifest<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Numeric(format!("csv write: {e}"));
        wr.write_record(["weights", "key", "degenerate", "kept"]).map_err(io)?;
        let mut kept: HashSet<&[usize]> = HashSet::new();
        for (weights, key, degenerate) in &self.all {
            let first = !degenerate && kept.insert(key.as_slice());
            let key_text = key.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ");
            wr.write_record([
                fmt_weights(weights, " "),
                key_text,
                u8::from(*degenerate).to_string(),
                u8::from(first).to_string(),
            ])
            .map_err(io)?;
        }
        wr.flush().map_err(|e| Error::Numeric(format!("csv write: {e}")))
    }
}

/// All weight vectors over `alphabet`^n_base, excluding zero, in
/// lexicographic order (first base option most significant).
pub fn weight_vectors(n_base: usize, alphabet: &[f64]) -> Vec<Vec<f64>> {
    let k = alphabet.len();
    let total = k.pow(n_base as u32);
    (0..total)
        .map(|mut code| {
            let mut w = vec![0.0; n_base];
            for i in (0..n_base).rev() {
                w[i] = alphabet[code % k];
                code /= k;
            }
            w
        })
        .filter(|w| w.iter().any(|&x| x != 0.0))
        .collect()
}

/// Synthesise one option per non-zero weight vector and deduplicate by the
/// set of terminal states.
pub fn enumerate_keyboard(cube: &QCube, alphabet: &[f64]) -> Result<KeyboardResult> {
    if cube.n_base > MAX_BASE {
        return Err(Error::Budget(format!("{} base options exceed the limit of {MAX_BASE}", cube.n_base)));
    }
    let synth: Vec<SynthOption> = weight_vectors(cube.n_base, alphabet)
        .par_iter()
        .map(|w| gpi_synthesize(cube, w))
        .collect::<Result<_>>()?;
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut seen_degenerate: HashSet<Vec<usize>> = HashSet::new();
    let mut options = Vec::new();
    let mut degenerate = Vec::new();
    let mut all = Vec::with_capacity(synth.len());
    for o in synth {
        all.push((o.weights.clone(), o.key.clone(), o.degenerate));
        if o.degenerate {
            if seen_degenerate.insert(o.key.clone()) {
                degenerate.push(o);
            }
        } else if seen.insert(o.key.clone()) {
            options.push(o);
        }
    }
    Ok(KeyboardResult { options, degenerate, all })
}

/// Unique-option count using only the first m base options, m = 1..=n_base.
pub fn unique_counts_by_prefix(cube: &QCube, alphabet: &[f64]) -> Result<Vec<usize>> {
    (1..=cube.n_base).map(|m| Ok(enumerate_keyboard(&cube.prefix(m), alphabet)?.unique_count())).collect()
}

/// Evaluate a synthesised option under the combined reward Σ_j w_j r_j,
/// with value 0 at its terminal states; returns q over primitives.
pub fn evaluate_synthesized(
    synth: &OptionDef,
    rewards: &[Eigenpurpose],
    w: &[f64],
    mdp: &TabularMDP,
    gamma: f64,
) -> Result<QTable> {
    let (n, na) = (mdp.n_states, mdp.n_actions);
    let mut r = vec![0.0; n * na];
    for (e, &wj) in rewards.iter().zip(w) {
        for (x, y) in r.iter_mut().zip(e.reward_table(mdp)) {
            *x += wj * y;
        }
    }
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        if synth.is_terminal(s) {
            continue;
        }
        let act = synth.policy[s];
        b[s] = r[s * na + act];
        for &(next, p) in mdp.successors(s, act) {
            a[(s, next)] -= gamma * p;
        }
    }
    let v = a.lu().solve(&b).ok_or_else(|| Error::Numeric("singular evaluation".into()))?;
    let mut q = QTable::zeros(n, na, true);
    for s in 0..n {
        for act in 0..na {
            let mut x = r[s * na + act];
            for &(next, p) in mdp.successors(s, act) {
                x += gamma * p * v[next];
            }
            q.set(s, act, x);
        }
    }
    Ok(q)
}
