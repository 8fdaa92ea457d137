use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::IntoDeserializer;
use serde::Deserialize;

use sropt::artifacts::{Artifacts, SeedSchedule};
use sropt::config::{self, Diagnostic, ExperimentConfig, Method};
use sropt::reproduce::{self, ReproOptions};
use sropt::run::{execute, Stages};
use sropt::CliError;

#[derive(Parser)]
#[command(name = "sropt", version, about = "Option discovery experiments on tabular gridworlds")]
struct Cli {
    /// Worker threads (default: number of cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Discover options and write them to options.csv.
    Discover(Overrides),
    /// Discover options and run the configured evaluations.
    Evaluate(Overrides),
    /// Compose eigenoptions with the option keyboard.
    Keyboard(Overrides),
    /// Cover-time study with covering eigenoptions.
    Ceo(Overrides),
    /// Run a pre-registered experiment.
    Reproduce {
        /// Target id, e.g. fig7 or ceo.
        id: String,
        /// Replicate count (cover runs, reward seeds, online runs).
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (default out/<id>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config file without running it.
    Validate { config: PathBuf },
}

/// Flags mirror config keys and override values read from `--config`.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated evaluations: diffusion, cover, reward, heatmaps.
    #[arg(long, value_delimiter = ',')]
    eval: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replicate count for cover and reward evaluations.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, conflicts_with = "online")]
    closed_form: bool,
    #[arg(long)]
    online: bool,
    #[arg(long)]
    n_iter: Option<usize>,
    #[arg(long)]
    basis: Option<String>,
    #[arg(long)]
    gamma_sr: Option<f64>,
    #[arg(long)]
    gamma_o: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    alpha_o: Option<f64>,
    #[arg(long)]
    p_option: Option<f64>,
    #[arg(long)]
    sr_passes: Option<usize>,
    #[arg(long)]
    q_passes: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    episode_len: Option<usize>,
    #[arg(long)]
    n_base: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    alphabet: Vec<f64>,
}

fn parse_enum<'de, T: Deserialize<'de>>(key: &str, value: &'de str) -> Result<T, CliError> {
    T::deserialize(value.into_deserializer()).map_err(|e: serde::de::value::Error| {
        CliError::Config(vec![Diagnostic { line: None, message: format!("--{key}: {e}") }])
    })
}

/// Build the effective config: file (if any), then flags, then the
/// subcommand's fixed choices.
fn assemble(o: &Overrides, forced: Option<Method>) -> Result<(ExperimentConfig, String, Option<PathBuf>), CliError> {
    let (mut cfg, text, base) = match &o.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let cfg = config::parse_config(&text).map_err(|d| CliError::Config(vec![d]))?;
            (cfg, text, path.parent().map(Path::to_path_buf))
        }
        None => {
            let env = o.env.clone().unwrap_or_else(|| "fourroom".into());
            let method = match (&o.method, forced) {
                (Some(m), _) => parse_enum("method", m)?,
                (None, Some(m)) => m,
                (None, None) => {
                    return Err(CliError::Config(vec![Diagnostic {
                        line: None,
                        message: "--method is required without --config".into(),
                    }]))
                }
            };
            (ExperimentConfig::new(&env, method), String::new(), None)
        }
    };
    if let Some(e) = &o.env {
        cfg.env = e.clone();
    }
    if let Some(m) = &o.method {
        cfg.method = parse_enum("method", m)?;
    }
    if let Some(m) = forced {
        cfg.method = m;
    }
    if !o.eval.is_empty() {
        cfg.eval = o.eval.iter().map(|e| parse_enum("eval", e)).collect::<Result<_, _>>()?;
    }
    if o.seed.is_some() {
        cfg.seed = o.seed;
    }
    if let Some(n) = o.seeds {
        cfg.cover.runs = n;
        cfg.reward.runs = n;
    }
    if let Some(d) = &o.out {
        cfg.out_dir = d.clone();
    }
    let p = &mut cfg.params;
    if o.closed_form {
        p.closed_form = Some(true);
    }
    if o.online {
        p.closed_form = Some(false);
    }
    if let Some(b) = &o.basis {
        p.basis = Some(parse_enum("basis", b)?);
    }
    if !o.alphabet.is_empty() {
        p.weight_alphabet = Some(o.alphabet.clone());
    }
    macro_rules! set {
        ($($f:ident),*) => { $( if o.$f.is_some() { p.$f = o.$f; } )* };
    }
    set!(k, n_iter, gamma_sr, gamma_o, eta, alpha_o, p_option, sr_passes, q_passes, episodes, episode_len, n_base);
    Ok((cfg, text, base))
}

fn run_config(name: &str, o: &Overrides, forced: Option<Method>, stages: Stages, adjust: impl FnOnce(&mut ExperimentConfig)) -> Result<(), CliError> {
    let (mut cfg, text, base) = assemble(o, forced)?;
    adjust(&mut cfg);
    let diags = config::validate(&cfg, &text, base.as_deref());
    if !diags.is_empty() {
        return Err(CliError::Config(diags));
    }
    let echo = serde_json::to_value(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut art = Artifacts::create(&cfg.out_dir)?;
    let mut seeds = SeedSchedule::new(cfg.seed());
    match execute(&cfg, base.as_deref(), stages, &mut art, &mut seeds) {
        Ok(()) => {
            let path = art.finish(name, &echo, &seeds)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Err(e) => {
            art.abandon(name, &echo, &seeds, &e)?;
            Err(e)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global().map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match cli.command {
        Command::Discover(o) => run_config("discover", &o, None, Stages::DiscoverOnly, |_| {}),
        Command::Evaluate(o) => run_config("evaluate", &o, None, Stages::All, |_| {}),
        Command::Keyboard(o) => run_config("keyboard", &o, Some(Method::Keyboard), Stages::All, |_| {}),
        Command::Ceo(o) => run_config("ceo", &o, Some(Method::Ceo), Stages::All, |cfg| {
            if cfg.eval.is_empty() {
                cfg.eval = vec![config::EvalKind::Cover];
            }
        }),
        Command::Reproduce { id, seeds: runs, seed, out } => {
            if !reproduce::TARGETS.contains(&id.as_str()) {
                return Err(CliError::UnknownTarget(id));
            }
            let dir = out.unwrap_or_else(|| PathBuf::from("out").join(&id));
            let mut art = Artifacts::create(&dir)?;
            let mut schedule = SeedSchedule::new(seed);
            let opts = ReproOptions { seed, runs };
            match reproduce::reproduce(&id, opts, &mut art, &mut schedule) {
                Ok(recipe) => {
                    let echo = serde_json::json!({ "target": id, "seed": seed, "seeds": runs, "recipe": recipe });
                    let path = art.finish(&format!("reproduce {id}"), &echo, &schedule)?;
                    println!("wrote {}", path.display());
                    Ok(())
                }
                Err(e) => {
                    let echo = serde_json::json!({ "target": id, "seed": seed, "seeds": runs });
                    art.abandon(&format!("reproduce {id}"), &echo, &schedule, &e)?;
                    Err(e)
                }
            }
        }
        Command::Validate { config: path } => {
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let diags = match config::parse_config(&text) {
                Ok(cfg) => config::validate(&cfg, &text, path.parent()),
                Err(d) => vec![d],
            };
            if diags.is_empty() {
                println!("{}: ok", path.display());
                Ok(())
            } else {
                Err(CliError::Config(diags))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
