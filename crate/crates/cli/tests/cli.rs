use std::path::Path;
use std::process::{Command, Output};

use stylediff::fixtures::synthetic_manifest;
use stylediff::report;

fn stylediff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stylediff"))
        .args(args)
        .env_remove("ARCHILENS_API_TOKEN")
        .output()
        .unwrap()
}

fn workspace(dir: &Path, extra: &str) -> String {
    let manifest = synthetic_manifest(&[("A", 20), ("B", 20), ("C", 20)]);
    std::fs::write(dir.join("manifest.tsv"), manifest.to_manifest_string()).unwrap();
    let config = format!(
        r#"
manifest = "manifest.tsv"
{extra}
[backend.mock.planted]
noise = 0.1
[backend.mock.planted.descriptions]
A = ["Sweeping curved facades."]
"#
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, config).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn validate_reports_duplicate_id() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dup.tsv");
    let hash = "a".repeat(64);
    std::fs::write(
        &path,
        format!("archdiff-manifest v1\nimg-7\tA\tx.jpg\t{hash}\nimg-7\tB\ty.jpg\t{hash}\n"),
    )
    .unwrap();
    let out = stylediff(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("img-7"));

    let good = dir.path().join("good.tsv");
    std::fs::write(&good, synthetic_manifest(&[("A", 3), ("B", 2)]).to_manifest_string()).unwrap();
    let out = stylediff(&["validate", good.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok\t5 records\t2 groups"));
}

#[test]
fn run_writes_complete_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let config = workspace(dir.path(), "");
    let out = stylediff(&["run", &config, "--run-id", "first"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = dir.path().join("runs/first");
    let files = report::verify_bundle(&run_dir).unwrap();
    let paths: Vec<&str> = files.iter().map(|f| f.path.as_str()).collect();
    for expected in [
        "report.json",
        "evaluations.tsv",
        "pairs.tsv",
        "similarity.tsv",
        "prompts.txt",
        "run.json",
        "wordfreq/a.tsv",
        "wordfreq/b.tsv",
        "wordfreq/c.tsv",
    ] {
        assert!(paths.contains(&expected), "missing {expected}");
    }
    assert!(paths
        .iter()
        .any(|p| p.starts_with("charts/") && p.ends_with(".hist.tsv")));

    // `report` re-emits the same bytes; `prompts` prints sections.
    let before = std::fs::read(run_dir.join("evaluations.tsv")).unwrap();
    let out = stylediff(&["report", run_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read(run_dir.join("evaluations.tsv")).unwrap(), before);
    report::verify_bundle(&run_dir).unwrap();

    let out = stylediff(&["prompts", run_dir.to_str().unwrap(), "--top", "1"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        String::from_utf8_lossy(&out.stdout),
        "[A]\nSweeping curved facades.\n\n[B]\nEMPTY\n\n[C]\nEMPTY\n"
    );
}

#[test]
fn pair_command_and_self_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let config = workspace(dir.path(), "");
    let out = stylediff(&["pair", &config, "--a", "A", "--b", "B"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let rows = report::parse_tsv(&stdout);
    assert_eq!(rows[0][0], "pair");
    assert_eq!(rows[1][2], "Sweeping curved facades.");

    let out = stylediff(&["pair", &config, "--a", "A", "--b", "A"]);
    assert_eq!(out.status.code(), Some(64));
    let out = stylediff(&["pair", &config, "--a", "A", "--b", "A", "--allow-self"]);
    assert_eq!(out.status.code(), Some(0));

    let out = stylediff(&["pair", &config, "--a", "A", "--b", "Missing"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(stylediff(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(stylediff(&["run"]).status.code(), Some(64));
    assert_eq!(stylediff(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let config = workspace(dir.path(), "alpha = 2.0");
    let out = stylediff(&["run", &config]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha"));
}

#[test]
fn unreachable_http_backend_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let addr = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap();
    let manifest = synthetic_manifest(&[("A", 3), ("B", 3)]);
    std::fs::write(dir.path().join("manifest.tsv"), manifest.to_manifest_string()).unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(
        &path,
        format!("n_per_group = 3\n[backend]\nkind = \"http\"\nbase_url = \"http://{addr}\"\ntimeout_secs = 2\n"),
    )
    .unwrap();
    let out = stylediff(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
