use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deepgrasp::config::RunConfig;
use deepgrasp::harness::{
    self, activation_dump, cross_evaluate, evaluate, stream_rng, value_trace, EpisodeMetrics, Policy,
    ScriptedPolicy, Stream, UniformRandomPolicy,
};
use deepgrasp::nn::{checkpoint, QNetwork};
use deepgrasp::render::Observation;
use deepgrasp::selftest;
use deepgrasp::sim::ResetMode;

/// Environment variable that, when set, replaces `run.output_dir`.
const OUTPUT_ROOT_VAR: &str = "DEEPGRASP_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "deepgrasp", version, about = "Deep Q-learning for pixel-based grasping of a simulated arm")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Agent arguments accept a parameter file written by `train`, or
/// `builtin:scripted` / `builtin:random` for the reference policies.
#[derive(Subcommand)]
enum Command {
    /// Train an agent, writing metrics and checkpoints to the output directory.
    Train {
        config: PathBuf,
        /// Continue from the last checkpoint of the same run.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate one agent without learning.
    Eval { config: PathBuf, agent: String },
    /// Evaluate two agents in the fixed and the randomized environment.
    CrossEval {
        config: PathBuf,
        agent_a: String,
        agent_b: String,
    },
    /// Log the greedy value estimate frame by frame over one episode.
    Trace { config: PathBuf, agent: String },
    /// Dump the convolutional feature maps for one input image.
    Activations {
        config: PathBuf,
        checkpoint: PathBuf,
        image: PathBuf,
    },
    /// Write the initial observation as a graymap.
    Render { config: PathBuf },
    /// Run the gradient checks and the tabular Q-learning oracle.
    Selftest,
}

type Result<T> = std::result::Result<T, Box<dyn Error>>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

/// Loads the config, applies the output-root override and records the
/// fully resolved copy next to the run's other outputs.
fn load_config(path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(root) = std::env::var_os(OUTPUT_ROOT_VAR) {
        cfg.run.output_dir = PathBuf::from(root);
    }
    fs::create_dir_all(&cfg.run.output_dir)
        .map_err(|e| format!("{}: {e}", cfg.run.output_dir.display()))?;
    let resolved = output(&cfg, "resolved.cfg");
    fs::write(&resolved, cfg.to_text()).map_err(|e| format!("{}: {e}", resolved.display()))?;
    Ok(cfg)
}

fn output(cfg: &RunConfig, suffix: &str) -> PathBuf {
    cfg.run.output_dir.join(format!("{}.{suffix}", cfg.run.name))
}

fn load_network(cfg: &RunConfig, path: &Path) -> Result<QNetwork> {
    let params = checkpoint::load_params(path)?;
    Ok(QNetwork::new(cfg.network(), params).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn load_agent(cfg: &RunConfig, spec: &str, env_mode: ResetMode) -> Result<Box<dyn Policy>> {
    let mut task = cfg.task.clone();
    task.mode = env_mode;
    Ok(match spec {
        "builtin:scripted" => Box::new(ScriptedPolicy::new(cfg.chain.clone(), task)),
        "builtin:random" => Box::new(UniformRandomPolicy::new(stream_rng(cfg.run.seed, Stream::Init, 1))),
        path => Box::new(load_network(cfg, Path::new(path))?),
    })
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::Train { config, resume } => {
            let cfg = load_config(&config)?;
            let settings = cfg.train_settings();
            let every = cfg.run.checkpoint_every;
            let mut recent: Vec<bool> = Vec::new();
            let mut report = |m: &EpisodeMetrics| {
                recent.push(m.success);
                if m.episode % every == 0 {
                    let tail = &recent[recent.len().saturating_sub(50)..];
                    let rate = tail.iter().filter(|&&s| s).count() as f64 / tail.len() as f64;
                    println!(
                        "episode {} successes {} trailing_success_rate {:.2} epsilon {:.3}",
                        m.episode, m.cumulative_successes, rate, m.epsilon
                    );
                }
            };
            let outcome = harness::train(&settings, resume, Some(&mut report))?;
            println!(
                "episodes={} successes={} metrics={}",
                outcome.state.episodes_done,
                outcome.state.cumulative_successes,
                settings.metrics_path().display()
            );
            Ok(true)
        }
        Command::Eval { config, agent } => {
            let cfg = load_config(&config)?;
            let env = cfg.environment();
            let mut policy = load_agent(&cfg, &agent, cfg.task.mode)?;
            let report = evaluate(&env, policy.as_mut(), cfg.run.eval_episodes, cfg.run.eval_epsilon, cfg.run.seed)?;
            println!("episodes={} epsilon={}", report.episodes, report.epsilon);
            println!("successes={} mean_length={}", report.successes, report.mean_length);
            println!("success_rate={}", report.success_rate());
            Ok(true)
        }
        Command::CrossEval {
            config,
            agent_a,
            agent_b,
        } => {
            let cfg = load_config(&config)?;
            let mut env_a = cfg.environment();
            env_a.reset.mode = ResetMode::Fixed;
            let mut env_b = cfg.environment();
            env_b.reset.mode = ResetMode::Randomized;
            // Built-in policies see the true task parameters, which do not
            // depend on the reset mode.
            let mut a = load_agent(&cfg, &agent_a, ResetMode::Fixed)?;
            let mut b = load_agent(&cfg, &agent_b, ResetMode::Fixed)?;
            let report = cross_evaluate(
                [a.as_mut(), b.as_mut()],
                [&env_a, &env_b],
                cfg.run.eval_episodes,
                cfg.run.eval_epsilon,
                cfg.run.seed,
            )?;
            let path = output(&cfg, "crosseval.csv");
            fs::write(&path, report.to_csv()).map_err(|e| format!("{}: {e}", path.display()))?;
            print!("{}", report.to_table());
            println!("matrix={}", path.display());
            Ok(true)
        }
        Command::Trace { config, agent } => {
            let cfg = load_config(&config)?;
            let mut policy = load_agent(&cfg, &agent, cfg.task.mode)?;
            let trace = value_trace(&cfg.environment(), policy.as_mut(), cfg.run.seed, &output(&cfg, "trace"))?;
            println!(
                "frames={} status={:?} csv={}",
                trace.log.len(),
                trace.log.status,
                trace.csv_path.display()
            );
            Ok(true)
        }
        Command::Activations {
            config,
            checkpoint,
            image,
        } => {
            let cfg = load_config(&config)?;
            let net = load_network(&cfg, &checkpoint)?;
            let obs = Observation::read_pgm(&image).map_err(|e| format!("{}: {e}", image.display()))?;
            if (obs.width, obs.height) != (cfg.width, cfg.height) {
                return Err(format!(
                    "{}: image is {}x{}, the network expects {}x{}",
                    image.display(),
                    obs.width,
                    obs.height,
                    cfg.width,
                    cfg.height
                )
                .into());
            }
            let dir = output(&cfg, "activations");
            let written = activation_dump(&net, &obs, &dir)?;
            println!("maps={} dir={}", written.len(), dir.display());
            Ok(true)
        }
        Command::Render { config } => {
            let cfg = load_config(&config)?;
            let env = cfg.environment();
            let world = env.reset(&mut stream_rng(cfg.run.seed, Stream::EvalReset, 0));
            let path = output(&cfg, "render.pgm");
            env.observe(&world)?.write_pgm(&path)?;
            println!("image={}", path.display());
            Ok(true)
        }
        Command::Selftest => {
            let mut ok = true;
            for check in selftest::gradient_suite(1)? {
                println!(
                    "gradient {:<8} instances={} components={} max_rel_err={:.3e} {}",
                    check.name,
                    check.instances,
                    check.components,
                    check.max_relative_error,
                    verdict(check.passed())
                );
                ok &= check.passed();
            }
            let tab = selftest::tabular_oracle(selftest::TABULAR_STEPS, 1)?;
            println!(
                "tabular  steps={} max_abs_err={:.3e} {}",
                tab.steps,
                tab.max_error,
                verdict(tab.passed())
            );
            ok &= tab.passed();
            Ok(ok)
        }
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}
