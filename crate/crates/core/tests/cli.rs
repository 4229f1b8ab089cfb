use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_col-bandit"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn results(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

const GEN_MATRICES: &str = r#"
output = "data"
[synth]
queries = 3
[synth.spec]
n = 50
t = 32
seed = 5
"#;

#[test]
fn gen_writes_expected_sizes_and_reuses_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "gen.toml", GEN_MATRICES);
    assert!(run(&["gen", "--config", cfg.to_str().unwrap()]).status.success());
    let m = dir.path().join("data/matrix_0000.cbh");
    assert_eq!(fs::metadata(&m).unwrap().len(), 12 + 50 * 32 * 4);
    let first = fs::read(&m).unwrap();
    fs::remove_dir_all(dir.path().join("data")).unwrap();
    assert!(run(&["gen", "--config", cfg.to_str().unwrap()]).status.success());
    assert_eq!(first, fs::read(&m).unwrap());

    let v = run(&["verify", dir.path().join("data").to_str().unwrap()]);
    assert!(v.status.success(), "{}", stdout(&v));
    assert!(stdout(&v).contains("PASS"));
}

#[test]
fn invalid_gen_spec_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "gen.toml", "[synth.spec]\nn = 0\n");
    let o = run(&["gen", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn full_mode_reports_full_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        "mode = \"full\"\nk = 3\n[data.synth]\nqueries = 6\n[data.synth.spec]\nn = 12\nt = 8\n",
    );
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = results(&dir.path().join("results.jsonl"));
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r["coverage"], 1.0);
        assert_eq!(r["overlap"], 1.0);
        assert!(r.get("trace").is_none());
    }
}

#[test]
fn alpha_sweep_yields_sixteen_frontier_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        "[data.synth]\nqueries = 50\n[data.synth.spec]\nn = 20\nt = 16\n[sweep]\nalpha = \"default\"\n",
    );
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--workers", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("frontier.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "method,param,mean_coverage,std_coverage,overlap@5,recall@5,ndcg@5,mrr@5,n_queries"
    );
    assert_eq!(lines.len(), 17);
    assert!(lines[1..]
        .iter()
        .all(|l| l.starts_with("col-bandit,") && l.ends_with(",50")));
    assert_eq!(results(&dir.path().join("results.jsonl")).len(), 16 * 50);
}

#[test]
fn identical_runs_are_byte_identical_and_seed_override_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        "seed = 1\n[data.synth]\nqueries = 10\n[data.synth.spec]\nn = 20\nt = 16\n[sweep]\nalpha = [0.05, 0.5]\n",
    );
    let c = cfg.to_str().unwrap();
    let read = || {
        (
            fs::read(dir.path().join("results.jsonl")).unwrap(),
            fs::read(dir.path().join("frontier.csv")).unwrap(),
        )
    };
    assert!(run(&["run", "--config", c, "--trace"]).status.success());
    let a = read();
    assert!(run(&["run", "--config", c, "--trace", "--workers", "1"])
        .status
        .success());
    assert_eq!(a, read());
    assert!(results(&dir.path().join("results.jsonl"))[0]["trace"].is_array());
    assert!(run(&["run", "--config", c, "--trace", "--seed", "2"]).status.success());
    assert_ne!(a.0, read().0);
}

#[test]
fn well_separated_ladder_is_recovered_by_full_scoring() {
    let dir = tempfile::tempdir().unwrap();
    let g = write(
        dir.path(),
        "gen.toml",
        "[synth]\nqueries = 2\n[synth.spec]\nn = 10\nt = 16\nprofile = \"well-separated\"\nnoise_scale = 0.01\n",
    );
    assert!(run(&["gen", "--config", g.to_str().unwrap()]).status.success());
    let r = write(
        dir.path(),
        "run.toml",
        "mode = \"full\"\nk = 10\n[data.matrix]\nmanifest = \"data/matrices.jsonl\"\nrange = [0.0, 1.0]\n",
    );
    let o = run(&["run", "--config", r.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ladder: Vec<Value> = (0..10).map(|i| Value::String(i.to_string())).collect();
    for row in results(&dir.path().join("results.jsonl")) {
        assert_eq!(row["topk"].as_array().unwrap(), &ladder);
    }
}

#[test]
fn verify_reports_truncated_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "gen.toml", GEN_MATRICES);
    assert!(run(&["gen", "--config", cfg.to_str().unwrap()]).status.success());
    let m = dir.path().join("data/matrix_0001.cbh");
    let bytes = fs::read(&m).unwrap();
    fs::write(&m, &bytes[..bytes.len() - 10]).unwrap();
    let o = run(&["verify", dir.path().join("data").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stdout(&o).contains("short read"), "{}", stdout(&o));
}

#[test]
fn verify_catches_a_corrupted_ann_bound() {
    let dir = tempfile::tempdir().unwrap();
    let g = write(
        dir.path(),
        "gen.toml",
        "[synth]\nqueries = 2\nembeddings = { dim = 16, doc_tokens = 8 }\n[synth.spec]\nn = 30\nt = 8\nvalue_range = [0.2, 0.9]\n",
    );
    assert!(run(&["gen", "--config", g.to_str().unwrap()]).status.success());
    let r = write(
        dir.path(),
        "run.toml",
        "k = 3\n[data.embeddings]\nqueries = \"data/queries.jsonl\"\n[output]\ncandidates = \"cands\"\n",
    );
    let o = run(&["run", "--config", r.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let cands = dir.path().join("cands");
    let ok = run(&["verify", cands.to_str().unwrap()]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    let v = run(&["verify", dir.path().join("data").to_str().unwrap()]);
    assert!(v.status.success(), "{}", stdout(&v));

    let art = cands.join("q0000.json");
    let mut a: Value = serde_json::from_str(&fs::read_to_string(&art).unwrap()).unwrap();
    let lo = a["lo"][0][0].as_f64().unwrap();
    // hi below the true value while keeping lo <= hi
    a["lo"][0][0] = Value::from(lo.min(-0.5));
    a["hi"][0][0] = Value::from(-0.5);
    fs::write(&art, serde_json::to_vec(&a).unwrap()).unwrap();
    let bad = run(&["verify", cands.to_str().unwrap()]);
    assert!(!bad.status.success());
    assert!(stdout(&bad).contains("unsound bound"), "{}", stdout(&bad));
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        "[data.synth]\nqueries = 2\n[bandit.radius]\ndelta = 1.5\n",
    );
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bandit") && err.contains("delta"), "{err}");
    assert!(!dir.path().join("results.jsonl").exists());

    let cfg = write(
        dir.path(),
        "two.toml",
        "[data.synth]\n[data.matrix]\nmanifest = \"x.jsonl\"\n",
    );
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("data"));
}
