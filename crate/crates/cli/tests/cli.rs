use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
variant = "normal"
horizon = 4

[render]
rows = 8
cols = 16

[model.perception]
horizon = 4
rows = 8
cols = 16
conv_channels = [4, 4]
latent = 16
head_hidden = 16

[model.dynamics]
horizon = 4
hidden = [16]

[data.perception]
episodes = 20
max_steps = 20

[data.dynamics]
min_transitions = 300
max_steps = 40

[trainer.perception]
steps = 30
eval_every = 10
batch_size = 16

[trainer.perception.adam]
learning_rate = 0.003

[trainer.dynamics]
steps = 30
eval_every = 10
batch_size = 16

[trainer.dynamics.adam]
learning_rate = 0.003

[solver]
kind = "cem"
population = 32
iterations = 2

[hierarchy.path]
population = 32
iterations = 2

[hierarchy.tracking]
population = 32
iterations = 2

[evaluation]
starts = 2
trials = 2
max_steps = 8
"#;

fn hint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hint")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(&o));
    o
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn collect_reports_steps_and_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let out = ok(hint(&["collect", "--config", s(&cfg), "--out", s(&a)]));
    ok(hint(&["collect", "--config", s(&cfg), "--out", s(&b)]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("steps"));
    let manifest = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    let steps: usize = manifest.lines().find_map(|l| l.strip_prefix("steps = ")).and_then(|v| v.parse().ok()).expect("manifest lists steps");
    assert!(steps >= 300);
    assert_eq!(read_dir_bytes(&a), read_dir_bytes(&b));
    assert!(a.join("config.toml").exists());
}

#[test]
fn default_config_collects_five_thousand_dynamics_steps() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("default.toml");
    let printed = ok(hint(&["config"]));
    std::fs::write(&cfg, &printed.stdout).unwrap();
    let out = tmp.path().join("dyn");
    ok(hint(&["collect", "--config", s(&cfg), "--out", s(&out)]));
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    let steps: usize = manifest.lines().find_map(|l| l.strip_prefix("steps = ")).unwrap().parse().unwrap();
    assert!(steps >= 5000, "{steps}");
    assert!(manifest.contains("variant = normal"));
    assert!(std::fs::read_to_string(&cfg).unwrap().contains("horizon = 6"));
}

#[test]
fn bad_variant_lists_valid_ones_with_config_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let o = hint(&["collect", "--config", s(&cfg), "--out", s(&tmp.path().join("x")), "--variant", "hovercraft"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("hovercraft") && e.contains("right-turn-only") && e.contains("lag"), "{e}");
}

#[test]
fn config_errors_name_the_field_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "horizon = 6\n\n[evaluation]\nstarts = 5\ntrails = 5\n").unwrap();
    let o = hint(&["collect", "--config", s(&cfg), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("trails") && e.contains("line 5"), "{e}");

    std::fs::write(&cfg, "horizon = 6\n[model.dynamics]\nhorizon = 10\n").unwrap();
    let o = hint(&["collect", "--config", s(&cfg), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.dynamics.horizon"), "{}", stderr(&o));
}

#[test]
fn missing_files_exit_with_io_code() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hint(&["collect", "--config", s(&tmp.path().join("nope.toml")), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let cfg = small_config(tmp.path());
    let o = hint(&["train-dynamics", "--config", s(&cfg), "--data", s(&tmp.path().join("absent")), "--out", s(&tmp.path().join("d.ckpt"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn pooled_training_then_evaluation_and_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let cfg = small_config(t);
    let (pa, pb, dn) = (t.join("per-normal"), t.join("per-ls"), t.join("dyn"));
    ok(hint(&["collect", "--config", s(&cfg), "--kind", "perception", "--variant", "normal", "--out", s(&pa)]));
    ok(hint(&["collect", "--config", s(&cfg), "--kind", "perception", "--variant", "limited-steering", "--source", "1", "--out", s(&pb)]));
    ok(hint(&["collect", "--config", s(&cfg), "--out", s(&dn)]));

    let per = t.join("models/perception.ckpt");
    ok(hint(&["train-perception", "--config", s(&cfg), "--data", s(&pa), s(&pb), "--out", s(&per)]));
    let curve = std::fs::read_to_string(t.join("models/perception.loss.csv")).unwrap();
    let rows: Vec<Vec<f64>> = curve.lines().skip(1).map(|l| l.split(',').take(2).map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(curve.lines().next(), Some("step,train_loss,val_loss"));
    assert!(rows.last().unwrap()[1] < rows[0][1], "{curve}");
    // Two pooled sources double the configured 30 steps.
    assert_eq!(rows.last().unwrap()[0], 60.0, "{curve}");
    assert!(t.join("models/perception.config.toml").exists());

    let dy = t.join("models/dynamics.ckpt");
    ok(hint(&["train-dynamics", "--config", s(&cfg), "--data", s(&dn), "--out", s(&dy)]));
    assert!(t.join("models/dynamics.loss.csv").exists());

    let mut outputs = Vec::new();
    for method in ["hint", "hierarchy"] {
        let out = t.join("eval").join(method);
        let o = ok(hint(&["evaluate", "--config", s(&cfg), "--perception", s(&per), "--dynamics", s(&dy), "--method", method, "--out", s(&out)]));
        assert!(String::from_utf8_lossy(&o.stdout).contains(method));
        let trials = std::fs::read_to_string(out.join("trials.csv")).unwrap();
        let keys: Vec<String> = trials.lines().skip(1).map(|l| l.split(',').take(2).collect::<Vec<_>>().join(",")).collect();
        assert_eq!(keys, ["0,0", "0,1", "1,0", "1,1"]);
        assert!(trials.starts_with("start,trial,success,steps,min_clearance"));
        outputs.push(trials);
    }
    // Same seeds, same rows.
    let again = t.join("again");
    ok(hint(&["evaluate", "--config", s(&cfg), "--perception", s(&per), "--dynamics", s(&dy), "--method", "hint", "--out", s(&again)]));
    assert_eq!(std::fs::read_to_string(again.join("trials.csv")).unwrap(), outputs[0]);

    let svg = t.join("plot.svg");
    ok(hint(&["plot", "--trajectories", s(&t.join("eval")), "--out", s(&svg)]));
    let text = std::fs::read_to_string(&svg).unwrap();
    roxmltree::Document::parse(&text).expect("well-formed SVG");
    assert_eq!(text.matches("<polyline").count(), 8);
    assert!(text.contains("#2a9d3a") && text.contains("#1f5fbf"));
}

#[test]
fn pooled_dynamics_with_different_state_dims_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let cfg = small_config(t);
    let (a, b) = (t.join("normal"), t.join("lag"));
    ok(hint(&["collect", "--config", s(&cfg), "--out", s(&a)]));
    ok(hint(&["collect", "--config", s(&cfg), "--variant", "lag", "--out", s(&b)]));
    let o = hint(&["train-dynamics", "--config", s(&cfg), "--data", s(&a), s(&b), "--out", s(&t.join("d.ckpt"))]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("lag:3") && e.contains("normal"), "{e}");
}

#[test]
fn evaluate_rejects_checkpoint_horizon_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let cfg = small_config(t);
    let data = t.join("dyn");
    ok(hint(&["collect", "--config", s(&cfg), "--out", s(&data)]));
    let dy = t.join("d.ckpt");
    ok(hint(&["train-dynamics", "--config", s(&cfg), "--data", s(&data), "--out", s(&dy)]));
    let per_data = t.join("per");
    ok(hint(&["collect", "--config", s(&cfg), "--kind", "perception", "--out", s(&per_data)]));
    let per = t.join("p.ckpt");
    ok(hint(&["train-perception", "--config", s(&cfg), "--data", s(&per_data), "--out", s(&per)]));

    let other = t.join("h6.toml");
    let text = SMALL.replace("horizon = 4", "horizon = 6");
    std::fs::write(&other, text).unwrap();
    let o = hint(&["evaluate", "--config", s(&other), "--perception", s(&per), "--dynamics", s(&dy), "--method", "hint", "--out", s(&t.join("e"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("H=4"), "{}", stderr(&o));
}

#[test]
fn plot_of_empty_directory_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hint(&["plot", "--trajectories", s(tmp.path()), "--out", s(&tmp.path().join("x.svg"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no trajectories"));
    assert!(!tmp.path().join("x.svg").exists());
}

#[test]
fn commands_do_not_modify_their_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let cfg = small_config(t);
    let data = t.join("dyn");
    ok(hint(&["collect", "--config", s(&cfg), "--out", s(&data)]));
    let before = read_dir_bytes(&data);
    let cfg_before = std::fs::read(&cfg).unwrap();
    ok(hint(&["train-dynamics", "--config", s(&cfg), "--data", s(&data), "--out", s(&t.join("d.ckpt"))]));
    assert_eq!(read_dir_bytes(&data), before);
    assert_eq!(std::fs::read(&cfg).unwrap(), cfg_before);
}
