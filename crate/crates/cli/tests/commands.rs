use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn deepgrasp(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepgrasp"))
        .args(args)
        .env("DEEPGRASP_OUTPUT_ROOT", root)
        .output()
        .expect("spawn deepgrasp")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn shipped_config(name: &str) -> String {
    format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn shipped_configs_resolve() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["desk.cfg", "full.cfg", "randomized.cfg"] {
        let out = deepgrasp(&["render", &shipped_config(name)], dir.path());
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).starts_with("image="));
    }
    let resolved = fs::read_to_string(dir.path().join("randomized.resolved.cfg")).unwrap();
    assert!(resolved.contains("task.mode = randomized"));
}

#[test]
fn unknown_key_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "run.seed = 3\nagent.dicsount = 0.9\n").unwrap();
    let out = deepgrasp(&["eval", cfg.to_str().unwrap(), "builtin:random"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("agent.dicsount"), "{err}");
}

#[test]
fn missing_checkpoint_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = deepgrasp(&["eval", &shipped_config("desk.cfg"), "nope.net"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.net"));
}

#[test]
fn scripted_eval_on_desk_task() {
    let dir = tempfile::tempdir().unwrap();
    let out = deepgrasp(&["eval", &shipped_config("desk.cfg"), "builtin:scripted"], dir.path());
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("episodes=50 epsilon=0.1"), "{text}");
    let rate: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("success_rate="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(rate >= 0.9, "{rate}");
}

#[test]
fn train_then_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    fs::write(
        &cfg,
        "run.preset = desk\nrun.name = tiny\nrun.episodes = 4\nrun.checkpoint_every = 2\n\
         task.max_episode_steps = 20\nagent.min_replay = 32\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let out = deepgrasp(&["train", cfg], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("episodes=4"));

    // Extend the finished run by two episodes.
    let extended = fs::read_to_string(cfg).unwrap().replace("run.episodes = 4", "run.episodes = 6");
    fs::write(cfg, extended).unwrap();
    let out = deepgrasp(&["train", cfg, "--resume"], dir.path());
    assert!(out.status.success());
    let metrics = fs::read_to_string(dir.path().join("tiny.metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 7);

    let net = dir.path().join("tiny.net");
    let net = net.to_str().unwrap();
    let out = deepgrasp(&["trace", cfg, net], dir.path());
    assert!(out.status.success());
    let trace = fs::read_to_string(dir.path().join("tiny.trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("frame,max_q,reward"));
    let frames = fs::read_dir(dir.path().join("tiny.trace")).unwrap().count();
    assert_eq!(frames, trace.lines().count() - 1);

    let out = deepgrasp(&["render", cfg], dir.path());
    assert!(out.status.success());
    let image = dir.path().join("tiny.render.pgm");
    let out = deepgrasp(&["activations", cfg, net, image.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_dir(dir.path().join("tiny.activations")).unwrap().count(), 8 + 16 + 16);
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = deepgrasp(&["selftest"], dir.path());
    let text = stdout(&out);
    assert!(out.status.success(), "{text}");
    assert_eq!(text.matches("PASS").count(), 6, "{text}");
}
