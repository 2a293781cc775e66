use std::process::Command;

use openanneal::cli::{benchmark, parse_config, run, ResultTable};

fn chain_config(engine: &str, samples: usize) -> String {
    format!(
        r#"
engine = "{engine}"
seed = 11
[model]
problem = "chain"
qubits = 2
[protocol]
tau = 5
[bath]
coupling = 1e-2
[numeric]
samples = {samples}
output_points = 11
bootstrap = 200
"#
    )
}

fn svmc_sweep(values: &str) -> String {
    format!(
        r#"
engine = "sweep"
seed = 3
[model]
problem = "pspin"
qubits = 8
p = 2
schedule = "bundled"
[protocol]
kind = "ira_experimental"
tau = 1000
[initial]
state = "00000001"
[svmc]
variant = "svmc_tf"
[numeric]
samples = 400
[sweep]
engine = "svmc"
parameter = "s_inv"
values = {values}
"#
    )
}

#[test]
fn trajectory_table_tracks_master_equation() {
    let ame = run(&parse_config(&chain_config("ame", 1)).unwrap()).unwrap();
    let traj = run(&parse_config(&chain_config("traj", 100)).unwrap()).unwrap();
    let exact = ame.column("p0").unwrap();
    let mean = traj.column("ground").unwrap();
    let se = traj.column("ground_se").unwrap();
    assert_eq!(exact.len(), mean.len());
    for i in 0..exact.len() {
        let (e, m) = (exact[i].unwrap(), mean[i].unwrap());
        let tol = 4.0 * se[i].unwrap_or(0.0) + 1e-4;
        assert!((e - m).abs() <= tol, "row {i}: ame {e} traj {m} se {:?}", se[i]);
    }
    for c in ["ground_se", "ground_lo", "ground_hi", "success"] {
        assert!(traj.columns.iter().any(|n| n == c));
    }
}

#[test]
fn tables_reparse_and_carry_hash() {
    let cfg = parse_config(&chain_config("traj", 20)).unwrap();
    let t = run(&cfg).unwrap();
    let back = ResultTable::from_csv(&t.to_csv()).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.meta("config_hash"), Some(cfg.hash().as_str()));
    assert!(back.is_monotone());
}

#[test]
fn identical_runs_give_identical_bytes() {
    for text in [chain_config("traj", 30), svmc_sweep("[0.5, 0.7]")] {
        let cfg = parse_config(&text).unwrap();
        assert_eq!(run(&cfg).unwrap().to_csv(), run(&cfg).unwrap().to_csv());
    }
}

#[test]
fn svmc_sweep_drops_past_the_gap() {
    let cfg = parse_config(&svmc_sweep("[0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]")).unwrap();
    let t = run(&cfg).unwrap();
    assert_eq!(t.rows.len(), 8);
    let total = t.column("total").unwrap();
    let bars = t.column("total_2sigma").unwrap();
    assert!(total[0].unwrap() > 0.9);
    assert!(total[7].unwrap() < 0.05);
    for i in 1..total.len() {
        let (a, b) = (total[i - 1].unwrap(), total[i].unwrap());
        assert!(b <= a + bars[i - 1].unwrap() + bars[i].unwrap() + 1e-12, "rise at row {i}");
    }
    // p_g ∈ {0, 1} rows leave the time-to-solution empty.
    let tts = t.column("tts").unwrap();
    for (p, x) in total.iter().zip(&tts) {
        let p = p.unwrap();
        assert_eq!(x.is_none(), p == 0.0 || p == 1.0);
    }
}

#[test]
fn bench_clamps_workers_to_samples() {
    let mut cfg = parse_config(&chain_config("traj", 3)).unwrap();
    cfg.numeric.output_points = 3;
    let b = benchmark(&cfg, &[1, 8]).unwrap();
    assert_eq!(b.warnings.len(), 1);
    assert_eq!(b.table.column("workers").unwrap(), vec![Some(1.0), Some(3.0)]);
    assert_eq!(b.table.meta("config_hash"), Some(cfg.hash().as_str()));
}

#[test]
fn binary_reports_config_errors_and_writes_tables() {
    let dir = std::env::temp_dir().join(format!("openanneal-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("bad.toml");
    std::fs::write(&bad, "[protocol]\nkind = \"ira\"\ns_inv = 1.2\nbogus = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_openanneal")).args(["ame", "-c"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("seed is required") && err.contains("s_inv") && err.contains("protocol.bogus"), "{err}");

    let good = dir.join("good.toml");
    std::fs::write(&good, chain_config("ame", 1)).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_openanneal"))
        .args(["ame", "--seed", "4", "-c"])
        .arg(&good)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = ResultTable::from_csv(&std::fs::read_to_string(dir.join("ame.csv")).unwrap()).unwrap();
    assert_eq!(table.meta("seed"), Some("4"));
    assert_eq!(table.rows.len(), 11);
    std::fs::remove_dir_all(&dir).ok();
}
