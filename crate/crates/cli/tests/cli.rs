use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn deephedge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deephedge"))
        .args(args)
        .current_dir(dir)
        .env_remove("DEEPHEDGE_OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = deephedge(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

const SMALL_BS: [&str; 12] = [
    "--set",
    "training.global.n_iter=200",
    "--set",
    "training.global.eval_every=50",
    "--set",
    "training.global.test_set_size=500",
    "--set",
    "training.global.norm_size=2000",
    "--set",
    "evaluation.n_sims=3000",
    "--set",
    "policy.architecture=\"ff_control\"",
];

#[test]
fn presets_are_listed_and_expanded() {
    let tmp = tempfile::tempdir().unwrap();
    let list = ok(tmp.path(), &["presets"]);
    assert!(list.lines().any(|l| l == "case1"));
    assert_eq!(list.lines().count(), 8);
    let toml = ok(tmp.path(), &["presets", "case2"]);
    assert!(toml.contains("name = \"case2\""));
    fs::write(tmp.path().join("c.toml"), &toml).unwrap();
    ok(tmp.path(), &["simulate", "--config", "c.toml", "--n", "10", "--out", "s"]);
}

#[test]
fn simulation_is_deterministic_and_respects_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let base = ["simulate", "--preset", "case1", "--n", "200", "--csv"];
    ok(tmp.path(), &[&base[..], &["--out", "a"]].concat());
    ok(tmp.path(), &[&base[..], &["--out", "b"]].concat());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(fs::read(a.join("paths.bin")).unwrap(), fs::read(b.join("paths.bin")).unwrap());
    assert_eq!(manifest(&a)["pathset_id"], manifest(&b)["pathset_id"]);
    assert!(manifest(&a)["seeds"]["simulation"].is_u64());

    ok(tmp.path(), &[&base[..], &["--out", "c", "--set", "seeds.simulation=99"]].concat());
    assert_ne!(manifest(&a)["pathset_id"], manifest(&tmp.path().join("c"))["pathset_id"]);

    let flat = [
        &base[..],
        &["--out", "flat", "--set", "market.assets.0.volatility=0", "--set", "market.assets.1.volatility=0"],
    ]
    .concat();
    ok(tmp.path(), &flat);
    let csv = fs::read_to_string(tmp.path().join("flat/paths.csv")).unwrap();
    let prices: Vec<f64> = csv.lines().skip(3).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(prices.len(), 200 * 15);
    assert!(prices.iter().all(|x| *x == prices[0]));
}

#[test]
fn train_evaluate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let train = [&["train", "--preset", "bs_call_table1", "--out", "t"][..], &SMALL_BS[..]].concat();
    ok(tmp.path(), &train);
    let t = tmp.path().join("t");
    let log = fs::read_to_string(t.join("train_log.csv")).unwrap();
    let mut best = f64::INFINITY;
    for line in log.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let test: f64 = cols[2].parse().unwrap();
        assert_eq!(cols[3] == "1", test < best);
        best = best.min(test);
    }
    assert_eq!(log.lines().count(), 5);

    let eval = |out: &str| {
        let args = [
            &["evaluate", "--preset", "bs_call_table1", "--checkpoint", "t/policy.ckpt", "--out", out][..],
            &SMALL_BS[..],
        ]
        .concat();
        ok(tmp.path(), &args);
    };
    eval("e1");
    eval("e2");
    for f in ["scores.csv", "pnl.csv", "deltas.csv", "density.csv"] {
        let a = fs::read(tmp.path().join("e1").join(f)).unwrap();
        assert_eq!(a, fs::read(tmp.path().join("e2").join(f)).unwrap(), "{f}");
    }
    let scores = fs::read_to_string(tmp.path().join("e1/scores.csv")).unwrap();
    assert!(scores.contains("unhedged"));
    let deltas = fs::read_to_string(tmp.path().join("e1/deltas.csv")).unwrap();
    assert_eq!(deltas.lines().count(), 1 + 10 * 30);
    let m = manifest(&tmp.path().join("e1"));
    assert_eq!(m["command"], "evaluate");
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);

    let bs = [&["evaluate", "--preset", "bs_call_table1", "--baseline", "bs-delta", "--out", "bs"][..], &SMALL_BS[..]]
        .concat();
    ok(tmp.path(), &bs);
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = deephedge(tmp.path(), &["evaluate", "--preset", "case1", "--checkpoint", "nope.ckpt", "--out", "x"]);
    assert_eq!(missing.status.code(), Some(3));
    let unknown = deephedge(tmp.path(), &["simulate", "--preset", "case1", "--set", "policy.hiden=[3]", "--out", "x"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("hiden"));
    let bad_corr = deephedge(
        tmp.path(),
        &[
            "simulate",
            "--preset",
            "case1",
            "--set",
            "market.correlation.0.1=1.5",
            "--set",
            "market.correlation.1.0=1.5",
            "--out",
            "x",
        ],
    );
    assert_eq!(bad_corr.status.code(), Some(2));
    let no_config = deephedge(tmp.path(), &["simulate", "--config", "absent.toml"]);
    assert_eq!(no_config.status.code(), Some(3));
    assert_eq!(deephedge(tmp.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn pareto_sweep_matches_evaluate_at_alpha_one() {
    let tmp = tempfile::tempdir().unwrap();
    let small = [
        "--set",
        "training.global.n_iter=40",
        "--set",
        "training.global.eval_every=20",
        "--set",
        "training.global.test_set_size=200",
        "--set",
        "training.global.norm_size=1000",
        "--set",
        "policy.hidden=[8]",
        "--set",
        "evaluation.n_sims=1000",
    ];
    ok(tmp.path(), &[&["train", "--preset", "pareto_case2", "--out", "t"][..], &small[..]].concat());
    let sweep = |points: &str, out: &str| {
        let args = [
            &[
                "pareto",
                "--preset",
                "pareto_case2",
                "--checkpoint",
                "t/policy.ckpt",
                "--alpha-points",
                points,
                "--out",
                out,
            ][..],
            &small[..],
        ]
        .concat();
        ok(tmp.path(), &args);
        fs::read_to_string(tmp.path().join(out).join("frontier.csv")).unwrap()
    };
    let full = sweep("21", "p21");
    assert_eq!(full.lines().count(), 22);
    let one = sweep("1", "p1");
    assert_eq!(one.lines().count(), 2);
    let last_full = full.lines().last().unwrap();
    assert_eq!(one.lines().nth(1).unwrap(), last_full);

    let args = [
        &["evaluate", "--preset", "pareto_case2", "--checkpoint", "t/policy.ckpt", "--alpha", "1", "--out", "e"][..],
        &small[..],
    ]
    .concat();
    ok(tmp.path(), &args);
    let pnl = fs::read_to_string(tmp.path().join("e/pnl.csv")).unwrap();
    let (mut y, mut c) = (Vec::new(), Vec::new());
    for line in pnl.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        y.push(cols[1]);
        c.push(cols[2]);
    }
    let n = y.len() as f64;
    let mean_cost = c.iter().sum::<f64>() / n;
    let risk = (y.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let cols: Vec<f64> = last_full.split(',').map(|s| s.parse().unwrap()).collect();
    assert!((cols[1] - mean_cost).abs() <= 1e-12 * mean_cost.abs().max(1.0), "{cols:?} vs {mean_cost}");
    assert!((cols[2] - risk).abs() <= 1e-12 * risk.max(1.0), "{cols:?} vs {risk}");
}
