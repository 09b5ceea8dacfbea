use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_perish");

const SMALL_CONFIG: &str = r#"{
  "min_score": 1,
  "min_period_words": 30000,
  "dev_min_words": 3000,
  "test_min_words": 3000,
  "ladder_top": 20000,
  "ladder_floor": 2500
}"#;

struct Sandbox {
    dir: TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("cfg.json"), SMALL_CONFIG).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn work(&self) -> PathBuf {
        self.path("work")
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(BIN)
            .arg("--workdir")
            .arg(self.work())
            .arg("--config")
            .arg(self.path("cfg.json"))
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    /// Synthesise, ingest, slice and ladder a small three-period corpus.
    fn prepared(periods: &str) -> Self {
        let sb = Self::new();
        let corpus = sb.path("corpus.txt");
        sb.ok(&[
            "synth",
            "--out",
            corpus.to_str().unwrap(),
            "--drift",
            "0.5",
            "--periods",
            periods,
            "--words-per-period",
            "30000",
        ]);
        sb.ok(&["ingest", corpus.to_str().unwrap()]);
        sb.ok(&["slice"]);
        sb.ok(&["ladder"]);
        sb
    }

    fn manifest(&self) -> Vec<Value> {
        fs::read_to_string(self.work().join("manifest.jsonl"))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }
}

fn eval_losses(rows: &[Value], backend: &str) -> BTreeMap<(String, u64, String), f64> {
    rows.iter()
        .filter(|r| r["kind"] == "eval" && r["job"]["backend_id"] == backend)
        .map(|r| {
            (
                (
                    r["job"]["train_period"].as_str().unwrap().to_string(),
                    r["job"]["subset_size"].as_u64().unwrap(),
                    r["test_period"].as_str().unwrap().to_string(),
                ),
                r["loss"].as_f64().unwrap(),
            )
        })
        .collect()
}

fn ladder_len(sb: &Sandbox, period: &str) -> usize {
    let raw = fs::read_to_string(sb.work().join("slices/synthetic").join(period).join("slice.json")).unwrap();
    let v: Value = serde_json::from_str(&raw).unwrap();
    v["ladder"].as_array().unwrap().len()
}

fn body_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[test]
fn report_on_empty_manifest_writes_header_only_tables() {
    let sb = Sandbox::new();
    fs::create_dir_all(sb.work()).unwrap();
    fs::write(sb.work().join("manifest.jsonl"), "").unwrap();
    let out = sb.run(&["report"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["curves.csv", "effectiveness.csv", "decay.csv", "pairwise.csv", "forms.csv"] {
        let path = sb.work().join("reports").join(name);
        let raw = fs::read_to_string(&path).unwrap();
        assert!(raw.starts_with("# config_hash: "), "{name} lacks the hash line");
        assert_eq!(body_lines(&path).len(), 1, "{name} should hold only a header");
    }
}

#[test]
fn train_without_cross_eval_writes_one_line_per_run() {
    let sb = Sandbox::prepared("2012-10..2012-12");
    sb.ok(&["train", "--topic", "synthetic", "--periods", "2012-10..2012-12", "--cross-eval", "none"]);
    let rows = sb.manifest();
    let expected: usize = ["2012-10", "2012-11", "2012-12"].iter().map(|p| ladder_len(&sb, p)).sum();
    assert_eq!(rows.len(), expected);
    assert!(rows.iter().all(|r| r["kind"] == "eval" && r["job"]["train_period"] == r["test_period"]));
}

#[test]
fn period_filter_restricts_training() {
    let sb = Sandbox::prepared("2012-10..2012-12");
    sb.ok(&["train", "--periods", "2012-11..2012-11", "--cross-eval", "none"]);
    let rows = sb.manifest();
    assert_eq!(rows.len(), ladder_len(&sb, "2012-11"));
    assert!(rows.iter().all(|r| r["job"]["train_period"] == "2012-11"));
}

#[test]
fn missing_artifact_names_the_producing_subcommand() {
    let sb = Sandbox::new();
    let out = sb.run(&["curves"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("perish train"), "{err}");

    let out = sb.run(&["decay"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("perish effectiveness"));
}

#[test]
fn training_before_ladder_is_rejected() {
    let sb = Sandbox::new();
    let corpus = sb.path("corpus.txt");
    sb.ok(&["synth", "--out", corpus.to_str().unwrap(), "--periods", "2012-10..2012-10", "--words-per-period", "30000"]);
    sb.ok(&["ingest", corpus.to_str().unwrap()]);
    sb.ok(&["slice"]);
    let out = sb.run(&["train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("perish ladder"));
}

#[test]
fn usage_errors_exit_with_one() {
    let sb = Sandbox::new();
    assert_eq!(sb.run(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(sb.run(&["offload", "--n", "1e6", "--weights", "1,-1"]).status.code(), Some(1));
    assert_eq!(
        sb.run(&["train", "--backend", "external"]).status.code(),
        Some(1),
        "external backend without a command"
    );
    assert_eq!(Command::new(BIN).arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn external_ngram_backend_matches_in_process_training() {
    let sb = Sandbox::prepared("2012-10..2012-11");
    sb.ok(&["train", "--cross-eval", "all"]);
    let command = format!("{BIN} ngram-backend");
    sb.ok(&["train", "--backend", "external", "--backend-command", &command, "--backend-id", "ext", "--cross-eval", "all"]);
    let rows = sb.manifest();
    let native = eval_losses(&rows, "ngram");
    let external = eval_losses(&rows, "ext");
    assert!(!native.is_empty());
    assert_eq!(native.keys().collect::<Vec<_>>(), external.keys().collect::<Vec<_>>());
    for (k, v) in &native {
        assert!((v - external[k]).abs() <= 1e-9, "{k:?}: {v} vs {}", external[k]);
    }
}

fn write_script(path: &Path, body: &str) {
    fs::write(path, body).unwrap();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(path, fs::Permissions::from_mode(0o755)).unwrap();
    }
}

/// Stub that reports a fixed loss for every test file it is handed.
const STUB: &str = r#"#!/bin/sh
out=""; tests=""; mode=test
while [ $# -gt 0 ]; do
  case "$1" in
    --out) out="$2"; shift 2 ;;
    --test) shift; mode=collect ;;
    --*) mode=skip; shift 2 ;;
    *) if [ "$mode" = collect ]; then tests="$tests $1"; fi; shift ;;
  esac
done
rows=""
for t in $tests; do
  p=$(basename "$(dirname "$t")")
  rows="$rows${rows:+,}{\"test_period\": \"$p\", \"loss_nats_per_token\": 3.5, \"token_count\": 100}"
done
printf '{"job": {}, "results": [%s], "dev_loss": 3.4}\n' "$rows" > "$out"
"#;

#[test]
fn stub_backend_results_are_recorded() {
    let sb = Sandbox::prepared("2012-10..2012-10");
    let script = sb.path("stub.sh");
    write_script(&script, STUB);
    sb.ok(&["train", "--backend", "external", "--backend-command", script.to_str().unwrap(), "--cross-eval", "none"]);
    let rows = sb.manifest();
    assert_eq!(rows.len(), ladder_len(&sb, "2012-10"));
    for r in &rows {
        assert_eq!(r["kind"], "eval");
        assert_eq!(r["loss"], 3.5);
        assert_eq!(r["dev_loss"], 3.4);
        assert_eq!(r["job"]["backend_id"], "external");
    }
    let config: Value = serde_json::from_str(
        &fs::read_to_string(sb.work().join("runs/external/synthetic/2012-10/2500-0.config.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(config["subset_size"], 2500);
    assert_eq!(config["early_stop_patience"], 15);
}

#[test]
fn malformed_backend_output_becomes_failed_entries() {
    let sb = Sandbox::prepared("2012-10..2012-10");
    let script = sb.path("bad.sh");
    write_script(
        &script,
        "#!/bin/sh\nwhile [ $# -gt 0 ]; do [ \"$1\" = --out ] && out=\"$2\"; shift; done\necho '{\"results\": [{\"loss_nats_per_token\": 1}]}' > \"$out\"\n",
    );
    let out = sb.ok(&["train", "--backend", "external", "--backend-command", script.to_str().unwrap(), "--cross-eval", "none"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("failures"));
    let rows = sb.manifest();
    assert_eq!(rows.len(), ladder_len(&sb, "2012-10"));
    assert!(rows.iter().all(|r| r["kind"] == "failed" && r["reason"].as_str().unwrap().contains("test_period")));
}

#[test]
fn full_pipeline_produces_stamped_reports() {
    let sb = Sandbox::prepared("2012-10..2013-01");
    sb.ok(&["train", "--jobs", "2"]);
    sb.ok(&["curves"]);
    sb.ok(&["effectiveness"]);
    let decay = sb.ok(&["decay"]);
    let table = String::from_utf8_lossy(&decay.stdout);
    assert!(table.starts_with("topic,estimate_per_year,half_life_years,stderr,p_value"));
    assert!(table.contains("synthetic,"));
    sb.ok(&["pairwise"]);
    sb.ok(&["forms"]);
    sb.ok(&["report"]);

    let hash: Value = serde_json::from_str(&fs::read_to_string(sb.work().join("series.json")).unwrap()).unwrap();
    let hash = hash["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    let csv = fs::read_to_string(sb.work().join("reports/decay.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), format!("# config_hash: {hash}"));
    let svg = fs::read_to_string(sb.work().join("reports/effectiveness_synthetic.svg")).unwrap();
    assert!(svg.contains(&hash) && svg.contains("<svg"));
}

#[test]
fn offload_prints_a_trajectory() {
    let sb = Sandbox::new();
    let out = sb.ok(&[
        "offload", "--model", "drift", "--slope", "0.5", "--n", "1e6", "--weights", "1,0,0,1", "--bin-width", "1",
    ]);
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines[0], "step,removed,old_t_star,new_t_star,gain");
    assert!(lines.len() >= 2, "expected at least one off-loading step:\n{text}");
}

#[test]
fn synth_is_deterministic_for_a_seed() {
    let sb = Sandbox::new();
    let a = sb.path("a.txt");
    let b = sb.path("b.txt");
    for p in [&a, &b] {
        sb.ok(&["--seed", "4", "synth", "--out", p.to_str().unwrap(), "--periods", "2012-10..2012-11", "--words-per-period", "5000"]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}
