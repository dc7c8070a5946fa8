use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cyclecon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cyclecon"))
        .args(args)
        .output()
        .expect("spawn cyclecon")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMOKE: &str = "epochs = 2\nbatch_size = 8\nqueue_capacity = 64\nm_nb = 16\n";

fn gen_small(dir: &Path, name: &str, seed: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    let out = cyclecon(&["gen-data", "--out", s(&p), "--videos", "50", "--seed", seed]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    p
}

#[test]
fn gen_data_defaults_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ccv");
    let out = cyclecon(&["gen-data", "--out", s(&a)]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("videos=2000 frames=4 size=32x32 classes=10 seed=0"));
    let b = dir.path().join("b.ccv");
    assert_eq!(code(&cyclecon(&["gen-data", "--out", s(&b)])), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn usage_and_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.ccv");
    assert_eq!(code(&cyclecon(&["gen-data", "--out", s(&p), "--videos", "0"])), 1);
    assert_eq!(code(&cyclecon(&["no-such-command"])), 1);
    assert_eq!(code(&cyclecon(&["--help"])), 0);
    let bad = dir.path().join("missing").join("x.ccv");
    assert_eq!(code(&cyclecon(&["gen-data", "--out", s(&bad), "--videos", "5"])), 2);
    let out = cyclecon(&["eval", "--ckpt", s(&dir.path().join("none.cckp")), "--data", s(&p), "--mode", "probe"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path(), "train.ccv", "0");
    let test = gen_small(dir.path(), "test.ccv", "1");
    let cfg = dir.path().join("smoke.cfg");
    fs::write(&cfg, SMOKE).unwrap();
    let run = dir.path().join("run");
    let out = cyclecon(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run), "--loss", "full"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let echoed = fs::read_to_string(run.join("effective_config.txt")).unwrap();
    assert!(echoed.contains("epochs = 2") && echoed.contains("loss = full"), "{echoed}");

    // Rerunning from the echoed config reproduces the run bit-exactly.
    let again = dir.path().join("again");
    let out = cyclecon(&["train", "--config", s(&run.join("effective_config.txt")), "--out", s(&again)]);
    assert_eq!(code(&out), 0);
    for f in ["metrics.csv", "final.cckp"] {
        assert_eq!(fs::read(run.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }

    let ckpt = run.join("final.cckp");
    let res = dir.path().join("r.txt");
    let out = cyclecon(&[
        "eval", "--ckpt", s(&ckpt), "--data", s(&data), "--test-data", s(&test),
        "--mode", "retrieve", "--k", "1,5", "--out", s(&res), "--verbose",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&res).unwrap();
    for key in ["mode = retrieve", "space = backbone", "query_rows = 200", "gallery_rows = 200", "hit@1 = ", "hit@5 = "] {
        assert!(text.contains(key), "{key} missing from {text}");
    }
    let ranks = fs::read_to_string(res.with_extension("ranks.csv")).unwrap();
    assert!(ranks.starts_with("source,video_id,frame_idx,label,first_hit_rank"));
    assert_eq!(ranks.lines().count(), 201);

    let out = cyclecon(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--mode", "probe"]);
    assert_eq!(code(&out), 0);
    let probe = fs::read_to_string(ckpt.with_extension("cckp.probe.txt")).unwrap();
    let acc: f64 = probe
        .lines()
        .find_map(|l| l.strip_prefix("probe_top1 = "))
        .expect("probe_top1")
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn numeric_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path(), "train.ccv", "0");
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, format!("{SMOKE}lr = 1e30\n")).unwrap();
    let run = dir.path().join("run");
    let out = cyclecon(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]);
    assert_eq!(code(&out), 3);
    assert!(run.join("nonfinite.txt").exists());
}

#[test]
fn gradcheck_passes() {
    let out = cyclecon(&["gradcheck", "--trials", "5"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for name in ["intra_image", "intra_video", "soft_neighbor_cycle", "combined"] {
        assert!(text.contains(name), "{text}");
    }
}
