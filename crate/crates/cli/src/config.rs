//! Experiment configuration: TOML parsing, defaults and validation.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sr_options::{GridSpec, TabularMDP};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Eigenoptions,
    Covering,
    Ceo,
    Keyboard,
    Baseline,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Eigenoptions => "eigenoptions",
            Method::Covering => "covering",
            Method::Ceo => "ceo",
            Method::Keyboard => "keyboard",
            Method::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalKind {
    Diffusion,
    Cover,
    Reward,
    Heatmaps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Laplacian,
    Sr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tie {
    First,
    Random,
}

/// Method parameters; unset values fall back to per-method defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodParams {
    /// Number of eigenoptions.
    pub k: Option<usize>,
    /// Use the true transition matrix instead of a learned SR.
    pub closed_form: Option<bool>,
    /// Covering / CEO iterations.
    pub n_iter: Option<usize>,
    pub basis: Option<Basis>,
    pub gamma_sr: Option<f64>,
    pub gamma_o: Option<f64>,
    pub eta: Option<f64>,
    pub alpha_o: Option<f64>,
    pub p_option: Option<f64>,
    pub sr_passes: Option<usize>,
    pub q_passes: Option<usize>,
    /// Episodes of data for online eigenoptions.
    pub episodes: Option<usize>,
    pub episode_len: Option<usize>,
    /// Start cell `[row, col]` for data collection.
    pub start: Option<[usize; 2]>,
    pub n_base: Option<usize>,
    pub weight_alphabet: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSection {
    /// Option counts to evaluate; default 0..=number of options.
    pub counts: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoverSection {
    pub episode_len: usize,
    pub start: Option<[usize; 2]>,
    pub runs: usize,
    pub p_option: Option<f64>,
}

impl Default for CoverSection {
    fn default() -> Self {
        Self { episode_len: 100, start: None, runs: 100, p_option: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSection {
    pub tasks: usize,
    pub task_seed: u64,
    pub runs: usize,
    pub episodes: usize,
    pub max_steps: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub tie_break: Tie,
}

impl Default for RewardSection {
    fn default() -> Self {
        Self {
            tasks: 10,
            task_seed: 0,
            runs: 50,
            episodes: 50,
            max_steps: 1000,
            alpha: 0.1,
            gamma: 0.9,
            epsilon: 0.05,
            tie_break: Tie::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Bundled map name or path to a map file.
    pub env: String,
    pub method: Method,
    #[serde(default)]
    pub eval: Vec<EvalKind>,
    /// Master seed; every stochastic stage derives its stream from it.
    pub seed: Option<u64>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub params: MethodParams,
    #[serde(default)]
    pub diffusion: DiffusionSection,
    #[serde(default)]
    pub cover: CoverSection,
    #[serde(default)]
    pub reward: RewardSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn new(env: &str, method: Method) -> Self {
        Self {
            env: env.into(),
            method,
            eval: Vec::new(),
            seed: None,
            out_dir: default_out(),
            params: MethodParams::default(),
            diffusion: DiffusionSection::default(),
            cover: CoverSection::default(),
            reward: RewardSection::default(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// True when discovery or evaluation draws random numbers.
    pub fn is_stochastic(&self) -> bool {
        self.method == Method::Ceo
            || (self.method == Method::Eigenoptions && self.params.closed_form == Some(false))
            || (self.method == Method::Covering && self.params.closed_form == Some(false))
            || self.eval.iter().any(|e| matches!(e, EvalKind::Cover | EvalKind::Reward))
    }
}

/// One problem with a configuration, with the line it refers to when known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// Parse a config. Syntax and schema errors carry the line of the fault.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, Diagnostic> {
    toml::from_str(text).map_err(|e| Diagnostic {
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().to_string(),
    })
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line on which `key` is set, inside `[section]` when given.
fn locate(text: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = Some(rest.trim_end_matches(']').trim().to_string());
            continue;
        }
        let k = line.split('=').next().unwrap_or("").trim();
        let dotted = current.is_none() && section.is_some_and(|s| k == format!("{s}.{key}"));
        if (k == key && current.as_deref() == section) || dotted {
            return Some(i + 1);
        }
    }
    None
}

/// Directories searched for map files given by relative path.
pub fn search_paths(base: Option<&Path>) -> Vec<PathBuf> {
    let mut out = Vec::new();
    if let Some(b) = base.filter(|b| !b.as_os_str().is_empty()) {
        out.push(b.to_path_buf());
    }
    if !out.iter().any(|p| p == Path::new(".")) {
        out.push(PathBuf::from("."));
    }
    out
}

/// Resolve `env` to a grid: a bundled name, or a map file relative to the
/// search paths.
pub fn resolve_env(env: &str, base: Option<&Path>) -> Result<GridSpec, String> {
    if let Some(g) = GridSpec::bundled(env) {
        return Ok(g);
    }
    let paths = search_paths(base);
    for dir in &paths {
        let p = dir.join(env);
        if p.is_file() {
            let text = std::fs::read_to_string(&p).map_err(|e| format!("reading {}: {e}", p.display()))?;
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("grid");
            return sr_options::grid::parse_grid_named(&text, name).map_err(|e| format!("{}: {e}", p.display()));
        }
    }
    let searched: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    Err(format!(
        "environment `{env}` is neither a bundled map ({}) nor a file in [{}]",
        sr_options::grid::BUNDLED.join(", "),
        searched.join(", ")
    ))
}

/// Cross-field checks. `text` is the source the config came from, used to
/// attach line numbers; `base` is the config file's directory.
pub fn validate(cfg: &ExperimentConfig, text: &str, base: Option<&Path>) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut err = |section: Option<&str>, key: &str, message: String| {
        out.push(Diagnostic { line: locate(text, section, key), message });
    };
    let grid = match resolve_env(&cfg.env, base) {
        Ok(g) => Some(g),
        Err(e) => {
            err(None, "env", e);
            None
        }
    };
    let mdp = grid.as_ref().and_then(|g| sr_options::build_mdp(g, 0.9).ok());
    if grid.is_some() && mdp.is_none() {
        err(None, "env", format!("environment `{}` has no floor cells", cfg.env));
    }
    let p = &cfg.params;
    if let (Some(k), Some(mdp)) = (p.k, &mdp) {
        if k > 2 * mdp.n_states {
            err(Some("params"), "k", format!("k = {k} exceeds the bound 2·|S| = {}", 2 * mdp.n_states));
        }
    }
    for (key, v) in [("gamma_sr", p.gamma_sr), ("gamma_o", p.gamma_o)] {
        if let Some(g) = v {
            if !(0.0..1.0).contains(&g) {
                err(Some("params"), key, format!("{key} = {g} must lie in [0, 1)"));
            }
        }
    }
    for (key, v) in [("eta", p.eta), ("alpha_o", p.alpha_o)] {
        if let Some(x) = v {
            if !(x > 0.0 && x <= 1.0) {
                err(Some("params"), key, format!("{key} = {x} must lie in (0, 1]"));
            }
        }
    }
    if let Some(x) = p.p_option {
        if !(0.0..0.2).contains(&x) {
            err(Some("params"), "p_option", format!("p_option = {x} must lie in [0, 0.2), below the probability of a primitive"));
        }
    }
    if let Some(n) = p.n_base {
        if n == 0 || n > sr_options::keyboard::MAX_BASE {
            err(Some("params"), "n_base", format!("n_base = {n} must lie in 1..={}", sr_options::keyboard::MAX_BASE));
        }
        if let Some(mdp) = &mdp {
            if n > 2 * mdp.n_states {
                err(Some("params"), "n_base", format!("n_base = {n} exceeds the bound 2·|S| = {}", 2 * mdp.n_states));
            }
        }
    }
    if let Some(a) = &p.weight_alphabet {
        if a.is_empty() || a.iter().any(|x| !x.is_finite()) {
            err(Some("params"), "weight_alphabet", "weight_alphabet must be a non-empty list of finite numbers".into());
        }
    }
    if p.episode_len == Some(0) {
        err(Some("params"), "episode_len", "episode_len must be positive".into());
    }
    if cfg.method == Method::Eigenoptions && p.closed_form == Some(false) && p.episodes == Some(0) {
        err(Some("params"), "episodes", "online eigenoptions need at least one episode".into());
    }
    if let (Some(mdp), Some(grid)) = (&mdp, &grid) {
        for (section, start) in [(Some("params"), p.start), (Some("cover"), cfg.cover.start)] {
            if let Some([r, c]) = start {
                if r >= grid.height || c >= grid.width || mdp.state_of((r, c)).is_none() {
                    err(section, "start", format!("start [{r}, {c}] is not a floor cell of `{}`", cfg.env));
                }
            }
        }
    }
    if cfg.eval.contains(&EvalKind::Cover) {
        if cfg.cover.episode_len == 0 {
            err(Some("cover"), "episode_len", "cover.episode_len must be positive".into());
        }
        if cfg.cover.runs == 0 {
            err(Some("cover"), "runs", "cover.runs must be positive".into());
        }
    }
    if cfg.eval.contains(&EvalKind::Reward) {
        let r = &cfg.reward;
        if r.runs == 0 || r.tasks == 0 || r.episodes == 0 || r.max_steps == 0 {
            err(Some("reward"), "runs", "reward.tasks, runs, episodes and max_steps must be positive".into());
        }
        if !(0.0..=1.0).contains(&r.epsilon) {
            err(Some("reward"), "epsilon", format!("epsilon = {} must lie in [0, 1]", r.epsilon));
        }
        if !(0.0..1.0).contains(&r.gamma) {
            err(Some("reward"), "gamma", format!("gamma = {} must lie in [0, 1)", r.gamma));
        }
        if let Some(mdp) = &mdp {
            let pairs = mdp.n_states * mdp.n_states.saturating_sub(1);
            if r.tasks > pairs {
                err(Some("reward"), "tasks", format!("{} tasks requested but only {pairs} start/goal pairs exist", r.tasks));
            }
        }
    }
    if cfg.is_stochastic() && cfg.seed.is_none() {
        err(None, "seed", "stochastic methods and evaluations need an explicit `seed`".into());
    }
    out
}

/// Read, parse and validate a config file.
pub fn load(path: &Path) -> Result<(ExperimentConfig, String), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let cfg = parse_config(&text).map_err(|d| CliError::Config(vec![d]))?;
    let diags = validate(&cfg, &text, path.parent());
    if !diags.is_empty() {
        return Err(CliError::Config(diags));
    }
    Ok((cfg, text))
}

/// Grid and MDP for a validated config.
pub fn environment(cfg: &ExperimentConfig, base: Option<&Path>) -> Result<(GridSpec, TabularMDP), CliError> {
    let grid = resolve_env(&cfg.env, base).map_err(|m| CliError::Config(vec![Diagnostic { line: None, message: m }]))?;
    let gamma = cfg.params.gamma_sr.unwrap_or(0.9);
    let mdp = sr_options::build_mdp(&grid, gamma).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok((grid, mdp))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn syntax_errors_name_the_line() {
        let d = parse_config("env = \"fourroom\"\nmethod = \"eigenoptions\"\nseed = \n").unwrap_err();
        assert_eq!(d.line, Some(3));
        let d = parse_config("env = \"fourroom\"\nmethod = \"nope\"\n").unwrap_err();
        assert_eq!(d.line, Some(2));
    }

    #[test]
    fn k_bound_is_reported_on_its_line() {
        let text = "env = \"fourroom\"\nmethod = \"eigenoptions\"\n\n[params]\nk = 500\n";
        let cfg = parse_config(text).unwrap();
        let d = validate(&cfg, text, None);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].line, Some(5));
        assert!(d[0].message.contains("2·|S| = 208"), "{}", d[0].message);
    }

    #[test]
    fn missing_env_lists_search_paths() {
        let text = "env = \"nowhere.txt\"\nmethod = \"baseline\"\n";
        let d = validate(&parse_config(text).unwrap(), text, Some(Path::new("/tmp/cfgdir")));
        assert_eq!(d[0].line, Some(1));
        assert!(d[0].message.contains("/tmp/cfgdir") && d[0].message.contains("fourroom"));
    }

    #[test]
    fn stochastic_runs_need_a_seed() {
        let text = "env = \"fourroom\"\nmethod = \"ceo\"\n";
        let d = validate(&parse_config(text).unwrap(), text, None);
        assert!(d.iter().any(|d| d.message.contains("seed")));
    }
}
