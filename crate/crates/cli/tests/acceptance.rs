//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use deepgrasp::config::{Preset, RunConfig};
use deepgrasp::dqn::{EpsilonSchedule, ReplayBuffer};
use deepgrasp::harness::{read_metrics, run_episode, stream_rng, EpisodeRngs, HarnessError, Policy, Stream};
use deepgrasp::nn::{checkpoint, QNetwork};
use deepgrasp::render::Observation;
use deepgrasp::selftest;
use deepgrasp::sim::{self, gripper_point, Action, KinematicChain, ResetMode, ResetSpec, Status, WorldState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Episodes over which the training success rate is averaged.
const TRAILING: usize = 50;
const DESK_TARGET_RATE: f64 = 0.8;
const DESK_EPISODE_LIMIT: u64 = 20_000;
const DESK_TIME_LIMIT: Duration = Duration::from_secs(30 * 60);

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

type Check = Result<Outcome, String>;

fn main() -> ExitCode {
    let work = tempfile::tempdir().expect("temporary directory");
    let criteria: [(&str, &dyn Fn(&Path) -> Check); 7] = [
        ("reward exactness", &|_| reward_exactness()),
        ("gradient suite", &|_| gradient_suite()),
        ("tabular oracle", &|_| tabular_oracle()),
        ("desk-scale training", &desk_training),
        ("cross-eval protocol", &cross_eval_protocol),
        ("determinism", &determinism),
        ("structural invariants", &|_| structural_invariants()),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let dir = work.path().join(format!("c{}", i + 1));
        fs::create_dir_all(&dir).expect("criterion directory");
        let start = Instant::now();
        let outcome = check(&dir).unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        failures += usize::from(!outcome.passed);
        println!(
            "criterion {} {name}: {} ({:.1}s) {}",
            i + 1,
            if outcome.passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}

fn deepgrasp(args: &[&str], output_root: &Path) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_deepgrasp"))
        .args(args)
        .env("DEEPGRASP_OUTPUT_ROOT", output_root)
        .output()
        .map_err(|e| format!("spawning deepgrasp: {e}"))?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    if !out.status.success() {
        return Err(format!(
            "deepgrasp {args:?} failed: {}{}",
            stdout,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(stdout)
}

fn write_config(dir: &Path, name: &str, text: &str) -> Result<PathBuf, String> {
    let path = dir.join(format!("{name}.cfg"));
    fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(path)
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn reward_exactness() -> Check {
    let start = Instant::now();
    let chain = KinematicChain::default();
    let spec = ResetSpec {
        mode: ResetMode::Randomized,
        ..ResetSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut counts = [0; 3];
    for i in 0..1000 {
        let mut w = sim::reset(&spec, &chain, &mut rng);
        for angle in w.arm.joint_angles.iter_mut() {
            *angle = (*angle + rng.random_range(-10.0..10.0)).clamp(-170.0, 170.0);
        }
        let expected = match i % 3 {
            0 => {
                w.succeeded = true;
                w.cube.grasped = true;
                100.0
            }
            1 => {
                w.cube.grasped = true;
                w.arm.gripper_closed = true;
                w.cube.position[1] = rng.random_range(0.0..spec.lift_height);
                1.0 + w.cube.position[1]
            }
            _ => {
                let g = gripper_point(&chain, &w.arm);
                let c = w.cube.position;
                let d = ((g[0] - c[0]).powi(2) + (g[1] - c[1]).powi(2) + (g[2] - c[2]).powi(2)).sqrt();
                (-0.25 * d).exp()
            }
        };
        counts[i % 3] += 1;
        let got = sim::compute_reward(&w, &chain, &spec);
        if i % 3 == 0 && got != 100.0 {
            return Ok(Outcome::new(false, format!("terminal reward {got}")));
        }
        worst = worst.max((got - expected).abs());
    }
    let elapsed = start.elapsed();
    Ok(Outcome::new(
        worst <= 1e-12 && elapsed < Duration::from_secs(1),
        format!(
            "states={} (terminal {}, grasped {}, free {}) max_abs_err={worst:.1e} time={:.3}s",
            counts.iter().sum::<usize>(),
            counts[0],
            counts[1],
            counts[2],
            elapsed.as_secs_f64()
        ),
    ))
}

fn gradient_suite() -> Check {
    let start = Instant::now();
    let checks = selftest::gradient_suite(1).map_err(|e| e.to_string())?;
    let mut passed = start.elapsed() < Duration::from_secs(60);
    let mut parts = Vec::new();
    for c in &checks {
        passed &= c.passed() && c.instances >= 20;
        parts.push(format!("{}={:.1e}/{}", c.name, c.max_relative_error, c.instances));
    }
    let names: Vec<&str> = checks.iter().map(|c| c.name).collect();
    for required in ["conv", "pool", "fc", "relu", "td_loss"] {
        passed &= names.contains(&required);
    }
    Ok(Outcome::new(passed, format!("max_rel_err/instances {}", parts.join(" "))))
}

fn tabular_oracle() -> Check {
    let start = Instant::now();
    let report = selftest::tabular_oracle(10_000, 1).map_err(|e| e.to_string())?;
    Ok(Outcome::new(
        report.passed() && report.max_error < 1e-2 && start.elapsed() < Duration::from_secs(60),
        format!("steps={} max|Q-Q*|={:.2e}", report.steps, report.max_error),
    ))
}

/// First episode at which the trailing window reaches the target rate.
fn first_success_window(success: &[bool]) -> Option<usize> {
    (TRAILING..=success.len()).find(|&end| {
        let hits = success[end - TRAILING..end].iter().filter(|&&s| s).count();
        hits as f64 / TRAILING as f64 >= DESK_TARGET_RATE
    })
}

fn desk_training(dir: &Path) -> Check {
    let preset = RunConfig::preset(Preset::Desk);
    let cfg = write_config(dir, "desk", "run.preset = desk\n")?;
    let start = Instant::now();
    deepgrasp(&["train", cfg.to_str().unwrap()], dir)?;
    let elapsed = start.elapsed();
    let metrics = read_metrics(&dir.join(format!("{}.metrics.csv", preset.run.name))).map_err(|e| e.to_string())?;
    let success: Vec<bool> = metrics.iter().map(|m| m.success).collect();
    let reached = first_success_window(&success);
    let best = (TRAILING..=success.len())
        .map(|end| success[end - TRAILING..end].iter().filter(|&&s| s).count())
        .max()
        .unwrap_or(0);
    let passed = reached.is_some_and(|e| e as u64 <= DESK_EPISODE_LIMIT) && elapsed < DESK_TIME_LIMIT;
    Ok(Outcome::new(
        passed,
        format!(
            "seed={} episodes={} reached_80pct_at={} best_trailing50={:.2} time={:.0}s",
            preset.run.seed,
            metrics.len(),
            reached.map_or("never".into(), |e| e.to_string()),
            best as f64 / TRAILING as f64,
            elapsed.as_secs_f64()
        ),
    ))
}

fn cross_eval_protocol(dir: &Path) -> Check {
    let cfg = write_config(dir, "full", "run.name = full\n")?;
    let stdout = deepgrasp(&["cross-eval", cfg.to_str().unwrap(), "builtin:scripted", "builtin:random"], dir)?;
    let csv = fs::read_to_string(dir.join("full.crosseval.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{s}: {e}"));
    if rows.len() != 2 || rows.iter().any(|r| r.len() != 5) {
        return Err(format!("unexpected matrix:\n{csv}"));
    }
    let protocol = rows.iter().all(|r| r[3] == "50" && r[4] == "0.1");
    let scripted_a = num(rows[0][1])?;
    let random = [num(rows[1][1])?, num(rows[1][2])?];
    let in_range = rows.iter().all(|r| r[1..3].iter().all(|v| v.parse::<f64>().is_ok_and(|x| (0.0..=1.0).contains(&x))));
    Ok(Outcome::new(
        protocol && in_range && scripted_a == 1.0 && random.iter().all(|&r| r < 0.1) && stdout.contains("Env A"),
        format!(
            "episodes/cell={} epsilon={} scripted_env_a={scripted_a} random_env_a={} random_env_b={}",
            rows[0][3], rows[0][4], random[0], random[1]
        ),
    ))
}

fn determinism(dir: &Path) -> Check {
    let text = "run.preset = desk\nrun.name = twin\nrun.episodes = 12\nrun.checkpoint_every = 6\nrun.eval_episodes = 3\n\
                task.max_episode_steps = 60\nagent.min_replay = 64\nschedule.anneal_span = 400\n";
    let mut compared = 0;
    let mut runs = Vec::new();
    for k in 0..2 {
        let root = dir.join(format!("run{k}"));
        fs::create_dir_all(&root).map_err(|e| e.to_string())?;
        let cfg = write_config(&root, "twin", text)?;
        let cfg = cfg.to_str().unwrap();
        deepgrasp(&["train", cfg], &root)?;
        let net = root.join("twin.net");
        let net = net.to_str().unwrap();
        let eval = deepgrasp(&["eval", cfg, net], &root)?;
        let cross = deepgrasp(&["cross-eval", cfg, net, "builtin:random"], &root)?;
        deepgrasp(&["trace", cfg, net], &root)?;
        deepgrasp(&["render", cfg], &root)?;
        // Stdout names output files, which live under each run's own root.
        let local = |out: String| out.replace(root.to_str().unwrap(), "<root>");
        runs.push((root.clone(), local(eval), local(cross)));
    }
    let (a, b) = (&runs[0], &runs[1]);
    if a.1 != b.1 || a.2 != b.2 {
        return Ok(Outcome::new(false, "evaluation output differs between runs"));
    }
    let suffixes = [
        "metrics.csv",
        "net",
        "target.net",
        "adam",
        "replay",
        "state",
        "crosseval.csv",
        "trace.csv",
        "render.pgm",
    ];
    for suffix in suffixes {
        let name = format!("twin.{suffix}");
        if read(&a.0.join(&name))? != read(&b.0.join(&name))? {
            return Ok(Outcome::new(false, format!("{name} differs between runs")));
        }
        compared += 1;
    }
    Ok(Outcome::new(true, format!("{compared} artifacts byte-identical across two runs")))
}

struct OpenForever;

impl Policy for OpenForever {
    fn action_values(&mut self, _: &Observation, _: &WorldState) -> Result<Vec<f64>, HarnessError> {
        let mut q = vec![0.0; 14];
        q[Action::OPEN.id()] = 1.0;
        Ok(q)
    }
}

fn structural_invariants() -> Check {
    let mut failed = Vec::new();

    let cfg = RunConfig::default();
    let mut rngs = EpisodeRngs {
        reset: stream_rng(1, Stream::Reset, 0),
        explore: stream_rng(1, Stream::Explore, 0),
    };
    let log = run_episode(&cfg.environment(), &mut OpenForever, |_| 0.0, &mut rngs, false, |_, _| Ok(()))
        .map_err(|e| e.to_string())?;
    if log.len() != 1000 || log.status != Status::Timeout {
        failed.push(format!("episode cap: {} steps, {:?}", log.len(), log.status));
    }

    let schedule = EpsilonSchedule::default();
    if schedule.epsilon_at(0) != 1.0 || schedule.epsilon_at(schedule.anneal_span) != 0.1 {
        failed.push("epsilon endpoints".into());
    }

    let mut replay = ReplayBuffer::new(3).map_err(|e| e.to_string())?;
    for k in 0..5 {
        replay.push(k);
    }
    if replay.iter().copied().collect::<Vec<_>>() != [2, 3, 4] {
        failed.push("replay eviction".into());
    }

    let net = QNetwork::init(RunConfig::preset(Preset::Desk).network(), &mut ChaCha8Rng::seed_from_u64(4))
        .map_err(|e| e.to_string())?;
    let bytes = checkpoint::encode_params(&net.params);
    let decoded = checkpoint::decode_params(&bytes).map_err(|e| e.to_string())?;
    if decoded != net.params || checkpoint::encode_params(&decoded) != bytes {
        failed.push("checkpoint round trip".into());
    }

    // Cumulative successes from a short training run.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut desk = RunConfig::preset(Preset::Desk);
    desk.run.output_dir = dir.path().to_path_buf();
    desk.run.episodes = 8;
    desk.task.max_episode_steps = 40;
    desk.agent.min_replay_before_learning = 32;
    let settings = desk.train_settings();
    deepgrasp::harness::train(&settings, false, None).map_err(|e| e.to_string())?;
    let rows = read_metrics(&settings.metrics_path()).map_err(|e| e.to_string())?;
    let mut total = 0;
    for r in &rows {
        total += u64::from(r.success);
        if r.cumulative_successes != total {
            failed.push("cumulative successes".into());
            break;
        }
    }

    Ok(Outcome::new(
        failed.is_empty(),
        if failed.is_empty() {
            "cap=1000, epsilon 1.0->0.1, FIFO eviction, checkpoint bytes, cumulative successes".to_string()
        } else {
            format!("failed: {}", failed.join(", "))
        },
    ))
}
