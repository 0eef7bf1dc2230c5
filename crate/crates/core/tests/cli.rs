//! Drives the `digiq` binary: exit codes, overrides, reproducible collection and resume.

use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[data]
n_traj = 16

[repr]
epochs = 2

[critic]
iterations = 3

[actor]
epochs = 2

[extraction]
epochs = 2

[eval]
episodes_per_task = 1
"#;

fn digiq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_digiq"))
        .args(args)
        .env("DIGIQ_THREADS", "1")
        .output()
        .expect("spawn digiq")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p.to_string_lossy().into_owned()
}

fn sha_of(summary: &str) -> &str {
    summary.trim().rsplit(' ').next().unwrap()
}

#[test]
fn collect_is_reproducible_and_honours_n_traj() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.jsonl");
    let b = tmp.path().join("b.jsonl");
    let ra = digiq(&["collect", "--n-traj", "8", "--seed", "3", "--out", a.to_str().unwrap()]);
    let rb = digiq(&["collect", "--n-traj", "8", "--seed", "3", "--out", b.to_str().unwrap()]);
    assert!(ra.status.success() && rb.status.success());
    assert_eq!(sha_of(&stdout(&ra)), sha_of(&stdout(&rb)));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(tmp.path().join("a.jsonl.config.toml").exists());

    let one = tmp.path().join("one.jsonl");
    let r = digiq(&["collect", "--n-traj", "1", "--out", one.to_str().unwrap()]);
    assert!(r.status.success());
    assert!(stdout(&r).contains(": 1 trajectories"), "{}", stdout(&r));

    // refusing to overwrite is a usage error
    let again = digiq(&["collect", "--n-traj", "1", "--out", one.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(2));
}

#[test]
fn exit_codes_distinguish_usage_and_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let unknown = digiq(&["ablate", "nonsense", "--out", out.to_str().unwrap()]);
    assert_eq!(unknown.status.code(), Some(2));
    assert_eq!(digiq(&["collect", "--bogus-flag"]).status.code(), Some(2));

    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[env]\np_popup = 1.5\n").unwrap();
    let r = digiq(&["collect", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(3));
    let unknown_key = tmp.path().join("typo.toml");
    std::fs::write(&unknown_key, "[critic]\ngama = 0.9\n").unwrap();
    let r = digiq(&["collect", "--config", unknown_key.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(3));
}

#[test]
fn pipeline_resumes_and_routes_actor_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("run");
    let out_s = out.to_str().unwrap();

    let first = digiq(&["pipeline", "--config", &cfg, "--out", out_s]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(stdout(&first).contains("bon: success"));
    assert!(!stdout(&first).contains("reused"));
    for f in ["dataset.jsonl", "featurizer.json", "critic.json", "behavior_clone.json", "actor.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let critic_before = std::fs::read(out.join("critic.json")).unwrap();

    // a non-empty output directory needs --force or --resume
    assert_eq!(digiq(&["pipeline", "--config", &cfg, "--out", out_s]).status.code(), Some(2));

    let resumed = digiq(&["pipeline", "--config", &cfg, "--out", out_s, "--resume", "actor"]);
    assert!(resumed.status.success());
    let text = stdout(&resumed);
    for stage in ["featurizer", "critic", "behavior_clone"] {
        assert!(text.contains(&format!("reused {stage} checkpoint")), "{text}");
    }
    assert!(!text.contains("reused actor"));
    assert_eq!(std::fs::read(out.join("critic.json")).unwrap(), critic_before);

    let awr_out = tmp.path().join("awr");
    let awr = digiq(&["pipeline", "--config", &cfg, "--actor-loss", "awr", "--out", awr_out.to_str().unwrap()]);
    assert!(awr.status.success());
    assert!(stdout(&awr).contains("awr: success"));
    let echo = std::fs::read_to_string(awr_out.join("config.toml")).unwrap();
    assert!(echo.contains("actor_loss = \"awr\""), "{echo}");
}
