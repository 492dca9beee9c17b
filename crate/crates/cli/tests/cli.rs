use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
channels = 8
compression_ratio = 2
strategies = ["gt_fg"]
seeds = [4, 5]
curriculum_epochs = 4

[grid]
preset = "custom"
width = 24
height = 14

[scene]
agents = 2
min_objects = 1
max_objects = 3
occluders = 2
max_occluder_size = 3

[observation]
n_rays = 180
max_range = 20.0
"#;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsecomm")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn sweep_writes_expected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = bin(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--parallel", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "seed,epoch,agent,strategy,ratio,recall,precision,iou,mean_fg_act,mean_bg_act,bits_sent,bits_received,rejected_msgs"
    );
    // 2 seeds x 1 epoch x 2 agents x 1 strategy x 3 ratios.
    assert_eq!(lines.count(), 12);
}

#[test]
fn seeds_and_mode_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = bin(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--seeds", "7", "--mode", "infer"]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("7,")));
}

#[test]
fn render_then_reuse_scene() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(bin(&["render", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    for view in ["pre", "post", "shared"] {
        let img = std::fs::read(a.join(format!("images/agent1_{view}.pgm"))).unwrap();
        assert!(img.starts_with(b"P5\n24 14\n255\n"));
        assert_eq!(img.len(), 13 + 24 * 14);
    }
    let scene = a.join("scene.toml");
    let o = bin(&["render", "--config", &cfg, "--out", b.to_str().unwrap(), "--scene", scene.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["images/agent0_post.pgm", "message_agent0.bin", "scene.toml"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let dump = bin(&["dump-message", a.join("message_agent1.bin").to_str().unwrap()]);
    assert!(dump.status.success());
    let text = String::from_utf8(dump.stdout).unwrap();
    assert!(text.contains("agent_id: 1"));
    assert!(text.contains("grid: 14x24"));
}

#[test]
fn curriculum_and_bandwidth_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    assert!(bin(&["curriculum", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let trace = std::fs::read_to_string(out.join("curriculum.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 4 * 2);
    assert!(bin(&["bandwidth", "--out", out.to_str().unwrap()]).status.success());
    let table = std::fs::read_to_string(out.join("bandwidth.csv")).unwrap();
    assert!(table.contains("0.01,sparse_fp16,84,24320,3040,"));
    assert!(table.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ratios = [0.0]\n");
    let o = bin(&["validate-config", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ratios[0]"));
    let o = bin(&["sweep", "--mode", "sideways"]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin(&["sweep", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, [1u8, 2, 3]).unwrap();
    let o = bin(&["dump-message", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("malformed message"));
}

#[test]
fn validate_config_prints_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = bin(&["validate-config", "--config", &cfg]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("channels = 8"));
    assert!(text.contains("budget_bits = 2800000"));
}
