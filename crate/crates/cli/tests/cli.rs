use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

fn run(args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_ipcascade"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary runs");
    {
        let mut pipe = child.stdin.take().unwrap();
        if let Some(text) = stdin {
            pipe.write_all(text.as_bytes()).unwrap();
        }
    }
    child.wait_with_output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args, None);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn fit_matches_golden_report() {
    let dir = TempDir::new().unwrap();
    let toy = data("toy8.txt");
    ok(&["fit", path(&toy), "--out", path(dir.path())]);
    assert_eq!(json(&dir.path().join("fit.json")), json(&data("toy8.fit.json")));
    assert_eq!(
        fs::read_to_string(dir.path().join("weights.csv")).unwrap(),
        fs::read_to_string(data("toy8.weights.csv")).unwrap()
    );
    let config = fs::read_to_string(dir.path().join("config.txt")).unwrap();
    assert!(config.contains("fit_levels = 8:16"));
}

#[test]
fn fit_exit_codes() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "# nothing here\n").unwrap();
    assert_eq!(
        code(&run(&["fit", path(&empty), "--out", path(dir.path())], None)),
        2
    );
    let v6 = dir.path().join("v6.txt");
    fs::write(&v6, "2001:db8::1\n").unwrap();
    assert_eq!(
        code(&run(&["fit", path(&v6), "--out", path(dir.path())], None)),
        1
    );
    assert_eq!(code(&run(&["no-such-command"], None)), 1);
    assert_eq!(code(&run(&["fit", "--levels", "nonsense", path(&v6)], None)), 1);
}

#[test]
fn generate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&[
            "generate",
            "--sigma",
            "1.61",
            "--n",
            "20000",
            "--seed",
            "7",
            "--out",
            path(out),
        ]);
    }
    for f in ["addresses.txt", "spillover.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(fs::read_to_string(a.join("spillover.csv"))
        .unwrap()
        .starts_with("level,spilled,total\n"));
}

#[test]
fn generate_edge_cases() {
    let dir = TempDir::new().unwrap();
    ok(&["generate", "--sigma", "1", "--n", "1", "--out", path(dir.path())]);
    let text = fs::read_to_string(dir.path().join("addresses.txt")).unwrap();
    assert_eq!(text.lines().count(), 1);
    let over = run(
        &[
            "generate",
            "--sigma",
            "1",
            "--n",
            "5000000000",
            "--out",
            path(dir.path()),
        ],
        None,
    );
    assert_eq!(code(&over), 1);
    assert_eq!(code(&run(&["generate", "--out", path(dir.path())], None)), 1);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "sigma = 0.5\nn = 100\nseed = 3\n").unwrap();
    let out = dir.path().join("out");
    ok(&[
        "generate",
        "--config",
        path(&conf),
        "--n",
        "50",
        "--out",
        path(&out),
    ]);
    let echoed = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echoed.contains("n = 50\n") && echoed.contains("seed = 3\n") && echoed.contains("sigma = 0.5\n"));
    assert_eq!(
        fs::read_to_string(out.join("addresses.txt"))
            .unwrap()
            .lines()
            .count(),
        50
    );
}

#[test]
fn analyze_uniform_addresses() {
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut text = String::with_capacity(500_000 * 16);
    for _ in 0..500_000 {
        text.push_str(&std::net::Ipv4Addr::from(rng.random::<u32>()).to_string());
        text.push('\n');
    }
    let input = dir.path().join("uniform.txt");
    fs::write(&input, text).unwrap();
    ok(&["analyze", path(&input), "--out", path(dir.path())]);
    let dims = json(&dir.path().join("dimensions.json"));
    let d0 = dims["d0"]["value"].as_f64().unwrap();
    assert!((d0 - 1.0).abs() <= 0.01, "d0 = {d0}");
    assert!(dims["d0"]["std"].is_f64() && dims["d2"]["std"].is_f64() && dims["d1"]["value"].is_f64());
    assert_eq!(dims["tau1_zero"], Value::Bool(true));
    assert_eq!(dims["linearity"]["is_linear"], Value::Bool(true));
    let structure = fs::read_to_string(dir.path().join("structure.csv")).unwrap();
    assert!(structure.starts_with("q,tau,variance,ci_lo,ci_hi\n"));
    let partition = fs::read_to_string(dir.path().join("partition.csv")).unwrap();
    assert!(partition.starts_with("q,level,log2_Z\n"));
}

#[test]
fn analyze_half_cascade_is_linear() {
    let dir = TempDir::new().unwrap();
    let reserved = dir.path().join("none.txt");
    fs::write(&reserved, "# no reserved ranges\n").unwrap();
    let gen = dir.path().join("gen");
    ok(&[
        "generate",
        "--sigma",
        "0",
        "--n",
        "300000",
        "--reserved",
        path(&reserved),
        "--out",
        path(&gen),
    ]);
    ok(&[
        "analyze",
        path(&gen.join("addresses.txt")),
        "--out",
        path(dir.path()),
    ]);
    let dims = json(&dir.path().join("dimensions.json"));
    assert_eq!(dims["linearity"]["is_linear"], Value::Bool(true));
}

#[test]
fn analyze_refuses_single_address() {
    let dir = TempDir::new().unwrap();
    let one = dir.path().join("one.txt");
    fs::write(&one, "192.0.2.1\n").unwrap();
    assert_eq!(
        code(&run(&["analyze", path(&one), "--out", path(dir.path())], None)),
        2
    );
}

fn stream_input() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    (0..40)
        .map(|_| format!("{}\n", std::net::Ipv4Addr::from(rng.random::<u32>())))
        .collect()
}

#[test]
fn stream_flags_warming_and_reruns_identically() {
    let dir = TempDir::new().unwrap();
    let args = [
        "anomaly",
        "--stream",
        "--slots",
        "8",
        "--lag",
        "2",
        "--levels",
        "1:6",
        "--qgrid",
        "-1:2:0.5",
        "--seed",
        "4",
        "--out",
        path(dir.path()),
    ];
    let input = stream_input();
    let first = run(&args, Some(&input));
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let text = String::from_utf8(first.stdout.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,address,score,warming"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 40);
    assert_eq!(rows[0][3], "true");
    assert_eq!(rows[0][2].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[39][3], "false");
    assert!(rows
        .iter()
        .all(|r| (0.0..=1.0).contains(&r[2].parse::<f64>().unwrap())));
    let second = run(&args, Some(&input));
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn stream_rejects_wrong_family() {
    let dir = TempDir::new().unwrap();
    let out = run(
        &[
            "anomaly",
            "--stream",
            "--slots",
            "4",
            "--sigma",
            "1",
            "--out",
            path(dir.path()),
        ],
        Some("10.0.0.1\n2001:db8::1\n"),
    );
    assert_eq!(code(&out), 1);
    assert_eq!(code(&run(&["anomaly", "--out", path(dir.path())], None)), 1);
}

#[test]
fn experiment_reports_every_lag() {
    let dir = TempDir::new().unwrap();
    let out = ok(&[
        "anomaly",
        "--experiment",
        "2,5",
        "--trials",
        "2",
        "--sigma",
        "1.61",
        "--n",
        "20000",
        "--slots",
        "4000",
        "--out",
        path(dir.path()),
    ]);
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    let saved = json(&dir.path().join("harness.json"));
    assert_eq!(printed, saved);
    let ks: Vec<u64> = saved
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["k"].as_u64().unwrap())
        .collect();
    assert_eq!(ks, vec![2, 5]);
    for s in saved.as_array().unwrap() {
        for side in ["anomalous", "control"] {
            for q in ["p5", "median", "p95"] {
                assert!(s[side][q].is_f64(), "{side}.{q}");
            }
        }
    }
}

#[test]
fn alloc_chain_and_coverage() {
    let dir = TempDir::new().unwrap();
    ok(&["alloc", path(&data("chain.csv")), "--out", path(dir.path())]);
    let depth = fs::read_to_string(dir.path().join("depth.csv")).unwrap();
    assert_eq!(
        depth,
        "depth,count,ccdf\n0,1,1\n1,1,0.6666666666666666\n2,1,0.3333333333333333\n"
    );
    let degree = fs::read_to_string(dir.path().join("degree.csv")).unwrap();
    assert_eq!(degree, "degree,count,ccdf\n1,2,1\n");

    let records = dir.path().join("half.csv");
    fs::write(&records, "10.0.0.0/8,A\n10.0.0.0/9,B\n").unwrap();
    ok(&["alloc", path(&records), "--out", path(dir.path())]);
    let coverage = fs::read_to_string(dir.path().join("coverage.csv")).unwrap();
    assert!(coverage.contains("\n10.0.0.0/8,A,0,1,0.5\n"), "{coverage}");
}

#[test]
fn alloc_aggregates_and_runs() {
    let dir = TempDir::new().unwrap();
    let records = dir.path().join("cluster.csv");
    fs::write(
        &records,
        "prefix,label\n10.0.0.0/18,Parent\n10.0.16.0/24,a\n10.0.17.0/24,b\n10.0.18.0/24,c\n10.0.19.0/24,d\n",
    )
    .unwrap();
    ok(&["alloc", path(&records), "--out", path(dir.path())]);
    let aggs = fs::read_to_string(dir.path().join("aggregates.csv")).unwrap();
    assert_eq!(
        aggs,
        "parent_prefix,aggregate_prefix,percent_covered\n10.0.0.0/18,10.0.16.0/22,1\n"
    );

    let blocks: String = (80..96).map(|i| format!("{i}.0.0.0/8,RIPE\n")).collect();
    let path_blocks = dir.path().join("blocks.csv");
    fs::write(&path_blocks, blocks).unwrap();
    ok(&["alloc", path(&path_blocks), "--runs", "--out", path(dir.path())]);
    let runs = fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    assert_eq!(
        runs,
        "label,first_prefix,blocks,aggregate_len\nRIPE,80.0.0.0/8,16,4\n"
    );

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "prefix,label\n").unwrap();
    assert_eq!(
        code(&run(&["alloc", path(&empty), "--out", path(dir.path())], None)),
        2
    );
}

#[test]
fn zoom_bins() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("four.txt");
    fs::write(&input, "0.0.0.0\n0.0.0.1\n64.0.0.0\n192.0.0.0\n").unwrap();
    ok(&[
        "zoom",
        path(&input),
        "0.0.0.0",
        "--zoom-bits",
        "2",
        "--zoom-levels",
        "0:0",
        "--out",
        path(dir.path()),
    ]);
    let csv = fs::read_to_string(dir.path().join("zoom.csv")).unwrap();
    assert_eq!(
        csv,
        "level,bin_prefix,count\n0,0.0.0.0/2,2\n0,64.0.0.0/2,1\n0,128.0.0.0/2,0\n0,192.0.0.0/2,1\n"
    );

    ok(&["zoom", path(&input), "64.0.0.0", "--out", path(dir.path())]);
    let csv = fs::read_to_string(dir.path().join("zoom.csv")).unwrap();
    let levels: std::collections::BTreeSet<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(levels.len(), 8);
    for level in &levels {
        let nonzero = csv
            .lines()
            .filter(|l| l.starts_with(&format!("{level},")) && !l.ends_with(",0"))
            .count();
        assert!(nonzero >= 1);
    }
}
