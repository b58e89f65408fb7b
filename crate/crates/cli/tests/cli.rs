use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn cogforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cogforge"))
        .args(args)
        .env_remove("COGFORGE_API_KEY")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn summary(out: &Output) -> Value {
    let stdout = String::from_utf8_lossy(&out.stdout);
    let last = stdout.lines().last().expect("stdout has a summary line");
    serde_json::from_str(last).expect("last line is JSON")
}

fn lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn curate(dir: &Path, extra: &[&str]) -> Output {
    let input = fixture("six_records.jsonl");
    let script = fixture("six_script.jsonl");
    let (out, dis, fam) = (
        dir.join("curated.jsonl"),
        dir.join("discards.jsonl"),
        dir.join("families.jsonl"),
    );
    let mut args = vec![
        "curate",
        "--input",
        s(&input),
        "--output",
        s(&out),
        "--discards",
        s(&dis),
        "--families",
        s(&fam),
        "--mock-script",
        s(&script),
    ];
    args.extend_from_slice(extra);
    cogforge(&args)
}

#[test]
fn curate_six_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = curate(dir.path(), &[]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let curated = lines(&dir.path().join("curated.jsonl"));
    let ids: Vec<&str> = curated.iter().map(|r| r["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["1", "3", "5"]);
    assert_eq!(curated[1]["source"], "rewritten");
    let discards = lines(&dir.path().join("discards.jsonl"));
    assert_eq!(discards.len(), 3);
    let stats = summary(&out);
    assert_eq!(stats["final_size"], 3);
    assert_eq!(stats["discarded"], 3);
    assert_eq!(stats["rewritten"], 2);
}

#[test]
fn curate_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    fs::write(&input, "").unwrap();
    let (o, d) = (dir.path().join("o.jsonl"), dir.path().join("d.jsonl"));
    let script = fixture("six_script.jsonl");
    let out = cogforge(&[
        "curate",
        "--input",
        s(&input),
        "--output",
        s(&o),
        "--discards",
        s(&d),
        "--mock-script",
        s(&script),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read_to_string(&o).unwrap(), "");
    assert_eq!(fs::read_to_string(&d).unwrap(), "");
    assert_eq!(summary(&out)["final_size"], 0);
}

#[test]
fn curate_missing_input() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.jsonl");
    let out = cogforge(&["curate", "--input", s(&missing), "--output", "o", "--discards", "d"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.jsonl"));
}

#[test]
fn curate_without_endpoints_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let (o, d) = (dir.path().join("o"), dir.path().join("d"));
    let input = fixture("six_records.jsonl");
    let out = cogforge(&["curate", "--input", s(&input), "--output", s(&o), "--discards", s(&d)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no endpoints"));
}

#[test]
fn interrupted_run_resumes_to_identical_files() {
    let straight = tempfile::tempdir().unwrap();
    assert_eq!(code(&curate(straight.path(), &[])), 2);

    let resumed = tempfile::tempdir().unwrap();
    let ckpt = resumed.path().join("run.ckpt");
    let first = curate(resumed.path(), &["--checkpoint", s(&ckpt), "--halt-after", "2"]);
    assert_eq!(code(&first), 1);
    assert!(String::from_utf8_lossy(&first.stderr).contains("interrupted"));
    assert!(ckpt.exists());
    let second = curate(resumed.path(), &["--checkpoint", s(&ckpt)]);
    assert_eq!(code(&second), 2);

    for name in ["curated.jsonl", "discards.jsonl", "families.jsonl"] {
        assert_eq!(
            fs::read(straight.path().join(name)).unwrap(),
            fs::read(resumed.path().join(name)).unwrap(),
            "{name}"
        );
    }
    assert_eq!(summary(&curate(straight.path(), &[])), summary(&second));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cogforge.toml");
    let from_file = dir.path().join("from_file.jsonl");
    let from_flag = dir.path().join("from_flag.jsonl");
    fs::write(
        &config,
        format!(
            "[pipeline]\nretry_cap = 1\n[paths]\ninput = {:?}\noutput = {:?}\ndiscards = {:?}\n",
            s(&fixture("six_records.jsonl")),
            s(&from_file),
            s(&dir.path().join("d.jsonl")),
        ),
    )
    .unwrap();
    let script = fixture("six_script.jsonl");
    let out = cogforge(&[
        "--config",
        s(&config),
        "curate",
        "--output",
        s(&from_flag),
        "--mock-script",
        s(&script),
    ]);
    assert_eq!(code(&out), 2);
    assert!(from_flag.exists() && !from_file.exists());
    // retry_cap = 1 from the file: record 5 needs two rethinks and is dropped
    let ids: Vec<String> = lines(&from_flag)
        .iter()
        .map(|r| r["id"].as_str().unwrap().to_owned())
        .collect();
    assert_eq!(ids, ["1", "3"]);

    let out = cogforge(&[
        "--config",
        s(&config),
        "curate",
        "--output",
        s(&from_flag),
        "--mock-script",
        s(&script),
        "--retry-cap",
        "3",
    ]);
    assert_eq!(summary(&out)["final_size"], 3);
}

#[test]
fn invalid_config_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(
        &config,
        "[schedule]\nbeta_small = 0.5\nbeta_medium = 0.2\nbeta_large = 0.1\n",
    )
    .unwrap();
    let out = cogforge(&["--config", s(&config), "selftest"]);
    assert_eq!(code(&out), 1);
}

fn family(id: &str, rating: &str, rewritten: Option<&str>, corrupted: Option<&str>) -> Value {
    let mut f = serde_json::json!({
        "id": id, "problem": "p", "answer": "a", "original_rating": rating, "r_original": format!("orig {id}"),
    });
    if let Some(r) = rewritten {
        f["r_rewritten"] = r.into();
    }
    if let Some(c) = corrupted {
        f["r_corrupted"] = c.into();
    }
    f
}

fn run_pairs(families: &[Value]) -> (Output, Vec<Value>) {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("families.jsonl");
    let output = dir.path().join("pairs.jsonl");
    let text: String = families.iter().map(|f| format!("{f}\n")).collect();
    fs::write(&input, text).unwrap();
    let out = cogforge(&["pairs", "--families", s(&input), "--output", s(&output)]);
    let pairs = lines(&output);
    (out, pairs)
}

#[test]
fn pairs_easy_and_medium_families() {
    let (out, pairs) = run_pairs(&[
        family("e", "easy", Some("star"), Some("bad")),
        family("m", "medium", None, Some("bad")),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(pairs.len(), 4);
    let counts = &summary(&out)["counts"];
    assert_eq!(
        (
            counts["small"].as_u64(),
            counts["medium"].as_u64(),
            counts["large"].as_u64()
        ),
        (Some(1), Some(1), Some(2))
    );
    assert_eq!(pairs[0]["id"], "e/small");
    assert_eq!(pairs[0]["beta"], 0.1);
    assert_eq!(pairs[3]["id"], "m/large");
}

#[test]
fn pairs_from_incomplete_families() {
    let (out, pairs) = run_pairs(&[family("a", "easy", None, None), family("b", "medium", None, None)]);
    assert_eq!(code(&out), 0);
    assert!(pairs.is_empty());
    assert_eq!(summary(&out)["skipped"], 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.matches("skipped").count(), 2, "{stderr}");

    let (_, pairs) = run_pairs(&[family("c", "hard", Some("star"), None)]);
    assert_eq!(pairs.len(), 1);
    assert_eq!(pairs[0]["gap"], "small");
}

fn loss_eval(pairs: &[(&str, &str)], logprobs: &[(&str, [f64; 4], &str)], schedule: Option<&str>) -> Output {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pairs.jsonl");
    let l = dir.path().join("lp.jsonl");
    let r = dir.path().join("report.json");
    let ptext: String = pairs
        .iter()
        .map(|(id, gap)| {
            format!(
                "{}\n",
                serde_json::json!({"id": id, "prompt": "p", "chosen": "c", "rejected": "r", "gap": gap, "beta": 0.0})
            )
        })
        .collect();
    let ltext: String = logprobs
        .iter()
        .map(|(id, q, gap)| {
            format!(
                "{}\n",
                serde_json::json!({"id": id, "lp_w_theta": q[0], "lp_w_ref": q[1], "lp_l_theta": q[2], "lp_l_ref": q[3], "gap": gap})
            )
        })
        .collect();
    fs::write(&p, ptext).unwrap();
    fs::write(&l, ltext).unwrap();
    let mut args = vec!["loss-eval", "--pairs", s(&p), "--logprobs", s(&l), "--output", s(&r)];
    if let Some(sched) = schedule {
        args.extend(["--schedule", sched]);
    }
    let out = cogforge(&args);
    if code(&out) == 0 {
        let report: Value = serde_json::from_str(&fs::read_to_string(&r).unwrap()).unwrap();
        assert_eq!(report["rows"].as_array().unwrap().len(), pairs.len());
    }
    out
}

fn loss_of(out: &Output) -> f64 {
    summary(out)["loss"].as_f64().unwrap()
}

#[test]
fn loss_eval_zero_margins() {
    let out = loss_eval(
        &[("a", "small"), ("b", "large")],
        &[
            ("b", [-3.0, -3.0, -1.0, -1.0], "large"),
            ("a", [-2.0, -2.0, -5.0, -5.0], "small"),
        ],
        None,
    );
    assert_eq!(code(&out), 0);
    assert!((loss_of(&out) - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn loss_eval_single_gap_is_dpo() {
    // beta 0.3, unscaled gaps 2 and -1: mean(softplus(-0.6), softplus(0.3))
    let out = loss_eval(
        &[("a", "medium"), ("b", "medium")],
        &[
            ("a", [-1.0, -2.0, -3.0, -2.0], "medium"),
            ("b", [-2.0, -2.0, -1.0, -2.0], "medium"),
        ],
        Some("0.1,0.3,0.5"),
    );
    assert_eq!(code(&out), 0);
    let expected = (f64::ln_1p((-0.6f64).exp()) + f64::ln_1p(0.3f64.exp())) / 2.0;
    assert!((loss_of(&out) - expected).abs() < 1e-12);
}

#[test]
fn loss_eval_mixed_gaps() {
    let q = [-1.0, -6.0, -3.0, -3.0];
    let out = loss_eval(
        &[("s", "small"), ("m", "medium"), ("l", "large")],
        &[("s", q, "small"), ("m", q, "medium"), ("l", q, "large")],
        None,
    );
    assert_eq!(code(&out), 0);
    assert!((loss_of(&out) - 0.28874280199695971).abs() < 1e-12);
}

#[test]
fn loss_eval_join_errors() {
    let out = loss_eval(&[("a", "small"), ("b", "small")], &[("a", [0.0; 4], "small")], None);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("join error"));
    let out = loss_eval(&[("a", "small")], &[("a", [0.0; 4], "large")], None);
    assert_eq!(code(&out), 1);
}

#[test]
fn selftest_rows() {
    let out = cogforge(&["selftest"]);
    assert_eq!(code(&out), 0);
    assert_eq!(summary(&out)["passed"], true);

    let out = cogforge(&["selftest", "--inject-gradient-fault"]);
    assert_eq!(code(&out), 1);
    let rows = summary(&out)["rows"].as_array().unwrap().clone();
    let failed: Vec<&str> = rows
        .iter()
        .filter(|r| r["passed"] == false)
        .map(|r| r["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed, ["gradient"]);

    let dir = tempfile::tempdir().unwrap();
    let out = cogforge(&["selftest", "--templates", s(&dir.path().join("none"))]);
    assert_eq!(code(&out), 1);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("FAIL") && l.contains("prompts")));
}
