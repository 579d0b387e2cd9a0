use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn explainer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_explainer")).args(args).output().unwrap()
}

fn fast_config(dir: &Path) -> String {
    let path = dir.join("fast.toml");
    std::fs::write(&path, "[engine]\nmcts_iterations = 100\nmax_cycles = 300\n").unwrap();
    path.to_str().unwrap().to_string()
}

fn interact(dir: &Path, stdin: &str) -> (Output, String) {
    let transcript = dir.join("t.jsonl");
    let mut child = Command::new(env!("CARGO_BIN_EXE_explainer"))
        .args(["interact", "--seed", "1", "--config", &fast_config(dir)])
        .args(["--transcript", transcript.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    let saved = std::fs::read_to_string(transcript).unwrap_or_default();
    (out, saved)
}

#[test]
fn simulate_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_config(dir.path());
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = explainer(&[
            "simulate", "--graph", "quarto", "--personas", "hermione,ron", "--runs", "2", "--seed", "7",
            "--config", &cfg, "--out", out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let files: Vec<Vec<u8>> = ["runs.csv", "cycles.csv", "summary.json"]
            .iter()
            .map(|f| std::fs::read(out_dir.join(f)).unwrap())
            .collect();
        let stdout = String::from_utf8(out.stdout).unwrap().replace(out_dir.to_str().unwrap(), "<out>");
        (stdout, files)
    };
    let (a, fa) = run("a");
    let (b, fb) = run("b");
    assert_eq!(a, b);
    assert_eq!(fa, fb);
    assert!(a.starts_with("persona"));
    assert!(a.contains("Hermione") && a.contains("Ron"));
}

#[test]
fn missing_graph_is_a_config_error() {
    let out = explainer(&["simulate", "--graph", "/no/such/graph.json", "--runs", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/graph.json"));
}

#[test]
fn bad_inputs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let personas = dir.path().join("p.toml");
    std::fs::write(&personas, "[[persona]]\nname = \"X\"\np_no = 0.5\np_bc = 0.5\np_s = 0.5\np_pos = 1.0\np_neg = 0.0\n").unwrap();
    let out = explainer(&["simulate", "--personas", personas.to_str().unwrap(), "--runs", "1"]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[engine]\nalpha = 3.0\n").unwrap();
    let out = explainer(&["inspect", "--pm-config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha"));

    let out = explainer(&["simulate", "--personas", "dumbledore", "--runs", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(explainer(&["inspect"]).status.code(), Some(2));
}

#[test]
fn inspect_lists_blocks_and_settings() {
    let out = explainer(&["inspect", "--graph", "quarto"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("[setup]"));
    assert!(text.contains("quarto-is-boardgame"));

    let dir = tempfile::tempdir().unwrap();
    let out = explainer(&["inspect", "--pm-config", &fast_config(dir.path())]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("initial expectations"));
    assert!(text.contains("mcts_iterations = 100"));
}

#[test]
fn terminal_session_accepts_feedback_and_questions() {
    let dir = tempfile::tempdir().unwrap();
    let (out, saved) = interact(dir.path(), "+\n:pm\n?p nope\n?p quarto-is-boardgame\n:kb\n\n");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("[1] provide/"));
    assert!(text.contains("E 0."));
    assert!(text.contains("unknown triple `nope`"));
    assert!(text.contains("[3] answer/"));
    assert!(text.contains("block: setup"));
    assert!(text.contains("transcript saved"));
    let lines: Vec<&str> = saved.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[2].contains("\"feedback\":\"substantive\""));
}

#[test]
fn terminal_session_can_finish() {
    let dir = tempfile::tempdir().unwrap();
    let (out, saved) = interact(dir.path(), &"+\n".repeat(400));
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("explanation complete after"), "{}", &text[text.len().saturating_sub(300)..]);
    assert!(!saved.is_empty());
}
