use std::process::{Command, Output};

fn edgedrive(args: &[&str], dir: &std::path::Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgedrive"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgedrive(&["verify", "--bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error kind=usage message="), "{}", stderr(&o));
}

#[test]
fn missing_config_reports_io() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgedrive(&["--config", "absent.toml", "gen-data"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error kind=io"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_fails_closed() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "master_seed = 3\nrepetitons = 4\n").unwrap();
    let o = edgedrive(&["--config", "c.toml", "gen-data"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("kind=config"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn sweep_without_checkpoint_points_at_train() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgedrive(&["sweep-snr"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("kind=usage") && err.contains("train"), "{err}");
}

#[test]
fn expert_episode_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgedrive(&["run-episode", "--expert", "--delay", "4", "--out", "t.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(text.lines().count() > 10);
    assert!(String::from_utf8_lossy(&o.stdout).contains("score"));
}

#[test]
fn gen_data_creates_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[data]\nepisodes = 1\nstride = 40\n[paths]\ndataset = \"a/b/d.elp\"\n").unwrap();
    let o = edgedrive(&["--config", "c.toml", "gen-data"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("a/b/d.elp").exists());
}
