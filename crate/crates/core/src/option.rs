//! Options: initiation set, deterministic policy, termination probabilities.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::mdp::TabularMDP;

#[derive(Debug, Clone, PartialEq)]
pub struct OptionDef {
    pub initiation: Vec<bool>,
    pub policy: Vec<usize>,
    pub termination: Vec<f64>,
    pub label: String,
}

/// Outcome of executing an option to completion from one start state.
#[derive(Debug, Clone, PartialEq)]
pub struct Landing {
    /// Distribution over the states where execution stops.
    pub states: Vec<(usize, f64)>,
    /// Probability mass still running when the step cap was hit.
    pub capped: f64,
    /// States entered with positive probability during execution.
    pub touched: Vec<usize>,
}

impl OptionDef {
    pub fn new(initiation: Vec<bool>, policy: Vec<usize>, termination: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        let n = initiation.len();
        if policy.len() != n || termination.len() != n {
            return Err(Error::Shape(format!(
                "option vectors have lengths {}, {}, {}",
                n,
                policy.len(),
                termination.len()
            )));
        }
        if termination.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::Precondition("termination probability outside [0, 1]".into()));
        }
        Ok(Self { initiation, policy, termination, label: label.into() })
    }

    /// Option with initiation set `{start}` that terminates only at `goal`.
    pub fn point(start: usize, goal: usize, policy: Vec<usize>, label: impl Into<String>) -> Self {
        let n = policy.len();
        let mut initiation = vec![false; n];
        initiation[start] = true;
        let mut termination = vec![0.0; n];
        termination[goal] = 1.0;
        Self { initiation, policy, termination, label: label.into() }
    }

    pub fn n_states(&self) -> usize {
        self.policy.len()
    }

    pub fn available(&self, s: usize) -> bool {
        self.initiation[s]
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.termination[s] >= 1.0
    }

    pub fn terminal_states(&self) -> Vec<usize> {
        (0..self.n_states()).filter(|&s| self.termination[s] > 0.0).collect()
    }

    pub fn initiation_states(&self) -> Vec<usize> {
        (0..self.n_states()).filter(|&s| self.initiation[s]).collect()
    }

    /// Where the option stops when started at `s`, following the kernel for
    /// at most `cap` primitive steps. The first step is always taken.
    pub fn landing(&self, mdp: &TabularMDP, s: usize, cap: usize) -> Landing {
        self.landing_until(mdp, s, cap, None)
    }

    /// As [`OptionDef::landing`], but entering `goal` ends the execution
    /// there regardless of β.
    pub fn landing_until(&self, mdp: &TabularMDP, s: usize, cap: usize, goal: Option<usize>) -> Landing {
        let mut current: Vec<(usize, f64)> = vec![(s, 1.0)];
        let mut stopped: HashMap<usize, f64> = HashMap::new();
        let mut touched: Vec<usize> = Vec::new();
        for _ in 0..cap {
            let mut next: HashMap<usize, f64> = HashMap::new();
            for &(x, m) in &current {
                for &(y, p) in mdp.successors(x, self.policy[x]) {
                    touched.push(y);
                    if Some(y) == goal {
                        *stopped.entry(y).or_default() += m * p;
                        continue;
                    }
                    let beta = self.termination[y];
                    if beta > 0.0 {
                        *stopped.entry(y).or_default() += m * p * beta;
                    }
                    if beta < 1.0 {
                        *next.entry(y).or_default() += m * p * (1.0 - beta);
                    }
                }
            }
            current = next.into_iter().filter(|&(_, m)| m > 0.0).collect();
            current.sort_by_key(|&(x, _)| x);
            if current.is_empty() {
                break;
            }
        }
        let capped: f64 = current.iter().map(|&(_, m)| m).sum();
        for (x, m) in current {
            *stopped.entry(x).or_default() += m;
        }
        let mut states: Vec<(usize, f64)> = stopped.into_iter().collect();
        states.sort_by_key(|&(x, _)| x);
        touched.sort_unstable();
        touched.dedup();
        Landing { states, capped, touched }
    }

    /// Number of primitive steps from `s` to termination, for deterministic
    /// dynamics; `None` when the cap is reached first.
    pub fn length_from(&self, mdp: &TabularMDP, s: usize, cap: usize) -> Option<usize> {
        let mut x = s;
        for k in 1..=cap {
            x = mdp.next_state(x, self.policy[x])?;
            if self.is_terminal(x) {
                return Some(k);
            }
        }
        None
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Numeric(format!("csv write: {e}"));
        wr.write_record(["state", "initiation", "action", "termination"]).map_err(io)?;
        for s in 0..self.n_states() {
            wr.write_record([
                s.to_string(),
                u8::from(self.initiation[s]).to_string(),
                self.policy[s].to_string(),
                self.termination[s].to_string(),
            ])
            .map_err(io)?;
        }
        wr.flush().map_err(|e| Error::Numeric(format!("csv write: {e}")))?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn from_csv(text: &str, label: impl Into<String>) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let headers = rd.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
        if headers != vec!["state", "initiation", "action", "termination"] {
            return Err(Error::Parse { line: 1, msg: format!("unexpected header {headers:?}") });
        }
        let (mut initiation, mut policy, mut termination) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in rd.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
            let field = |k: usize| rec.get(k).ok_or(Error::Parse { line, msg: "missing field".into() });
            let bad = |what: &str| Error::Parse { line, msg: format!("invalid {what}") };
            let s: usize = field(0)?.parse().map_err(|_| bad("state"))?;
            if s != policy.len() {
                return Err(Error::Parse { line, msg: format!("expected state {}, found {s}", policy.len()) });
            }
            initiation.push(match field(1)? {
                "1" | "true" => true,
                "0" | "false" => false,
                _ => return Err(bad("initiation flag")),
            });
            policy.push(field(2)?.parse().map_err(|_| bad("action"))?);
            termination.push(field(3)?.parse().map_err(|_| bad("termination"))?);
        }
        Self::new(initiation, policy, termination, label)
    }
}

/// Cap on primitive steps taken by one option execution.
pub fn max_option_steps(n_states: usize) -> usize {
    4 * n_states
}
