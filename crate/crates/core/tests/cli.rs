use std::path::Path;
use std::process::{Command, Output};

fn pfpp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfpp")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn build_goe(dir: &Path) -> String {
    let path = dir.join("goe.pfk");
    let p = path.to_str().unwrap().to_string();
    stdout(&pfpp(&["kernel", "build", "--family", "goe", "--n", "4", "--grid=-6:7:0.1", "--out", &p]));
    p
}

/// Every field of a `points` column has the `{:.16e}` shape.
fn is_real17(t: &str) -> bool {
    let (mant, exp) = t.split_once('e').unwrap();
    let digits = mant.trim_start_matches('-');
    digits.len() == 18 && digits.as_bytes()[1] == b'.' && exp.parse::<i32>().is_ok() && t.parse::<f64>().is_ok()
}

#[test]
fn sample_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let k = build_goe(dir.path());
    let out = stdout(&pfpp(&["sample", "--kernel", &k, "--samples", "50", "--seed", "1"]));
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("sample_index,points"));
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let (idx, pts) = line.split_once(',').unwrap();
        assert_eq!(idx.parse::<usize>().unwrap(), i);
        let xs: Vec<f64> = pts.split(' ').map(|t| {
            assert!(is_real17(t), "{t}");
            t.parse().unwrap()
        }).collect();
        assert!(xs.windows(2).all(|w| w[0] < w[1]));
        assert!(xs.iter().all(|x| (-6.0..=7.0 + 1e-9).contains(x)));
        rows += 1;
    }
    assert_eq!(rows, 50);
}

#[test]
fn sidecar_describes_the_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let k = build_goe(dir.path());
    let side: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(format!("{k}.json")).unwrap()).unwrap();
    assert_eq!(side["family"], "goe");
    assert_eq!(side["params"]["n"], 4);
    assert_eq!(side["grid"]["delta"], 0.1);
    let expected = side["build_tolerances"]["expected_points"].as_f64().unwrap();
    assert!((expected - 4.0).abs() < 1e-2, "{expected}");
}

#[test]
fn seeds_control_the_output() {
    let dir = tempfile::tempdir().unwrap();
    let k = build_goe(dir.path());
    let run = |seed: &str| stdout(&pfpp(&["sample", "--kernel", &k, "--samples", "40", "--seed", seed]));
    assert_eq!(run("3"), run("3"));
    assert_ne!(run("3"), run("4"));
    let oracle = |seed: &str| stdout(&pfpp(&["oracle", "goe", "--n", "5", "--samples", "30", "--seed", seed]));
    assert_eq!(oracle("9"), oracle("9"));
    assert_ne!(oracle("9"), oracle("10"));
}

#[test]
fn top_k_keeps_the_largest_points() {
    let dir = tempfile::tempdir().unwrap();
    let k = build_goe(dir.path());
    let out = stdout(&pfpp(&["sample", "--kernel", &k, "--samples", "30", "--seed", "2", "--top", "2"]));
    for line in out.lines().skip(1) {
        let pts: Vec<f64> = line.split_once(',').unwrap().1.split(' ').map(|t| t.parse().unwrap()).collect();
        assert_eq!(pts.len(), 2);
        assert!(pts[0] < pts[1]);
    }
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let k = build_goe(dir.path());
    let o = pfpp(&["sample", "--kernel", &k, "--samples", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    assert_eq!(pfpp(&["oracle", "gse", "--n", "3"]).status.code(), Some(2));
    assert_eq!(pfpp(&["gibbs", "--family", "gse", "--n", "3"]).status.code(), Some(2));
}

#[test]
fn unknown_config_field_reports_its_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, "{\n  \"family\": \"airy1\",\n  \"nodez\": 40\n}\n").unwrap();
    let o = pfpp(&["fredholm", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr).to_string();
    assert!(err.contains("nodez") && err.contains("line 3"), "{err}");
}

#[test]
fn bad_arguments_exit_with_two() {
    assert_eq!(pfpp(&["fredholm", "--family", "gue", "--s", "0:1:1"]).status.code(), Some(2));
    assert_eq!(pfpp(&["fredholm", "--family", "airy1", "--s", "1:0:1"]).status.code(), Some(2));
    assert_eq!(pfpp(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(pfpp(&["--help"]).status.code(), Some(0));
}

#[test]
fn numerical_failures_exit_with_one() {
    // The GOE kernel needs an even number of points.
    let o = pfpp(&["fredholm", "--family", "goe", "--n", "3", "--s", "0:1:1"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn dumped_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["fredholm", "--family", "airy4", "--s=-3:1:0.5", "--nodes", "30"],
        vec!["hist", "--input", "x.csv", "--stat", "second", "--range=-2:3", "--batches", "4"],
        vec!["sop", "--weight", "decaying", "--n", "12", "--esr", "esr3m", "--reorth", "iterated:0.5"],
        vec!["oracle", "tridiag", "--n", "8", "--beta", "2", "--seed", "1"],
        vec!["gibbs", "--family", "gse", "--n", "3", "--seed", "4", "--init", "explicit:-1,0,1"],
        vec!["kernel", "build", "--family", "corner_growth", "--n", "4", "--q", "0.5"],
    ];
    for (i, args) in cases.iter().enumerate() {
        let mut a = args.clone();
        a.push("--dump-config");
        let first = stdout(&pfpp(&a));
        let path = dir.path().join(format!("{i}.json"));
        std::fs::write(&path, &first).unwrap();
        let sub: Vec<&str> = if args[0] == "kernel" || args[0] == "oracle" { args[..2].to_vec() } else { args[..1].to_vec() };
        let mut b = sub;
        b.extend(["--config", path.to_str().unwrap(), "--dump-config"]);
        assert_eq!(stdout(&pfpp(&b)), first, "{args:?}");
    }
}

#[test]
fn fredholm_cdf_is_monotone() {
    let out = stdout(&pfpp(&["fredholm", "--family", "airy1", "--s=-5:3:0.25"]));
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("s,cdf"));
    let vals: Vec<f64> = lines.map(|l| l.split_once(',').unwrap().1.parse().unwrap()).collect();
    assert_eq!(vals.len(), 33);
    assert!(vals.windows(2).all(|w| w[0] <= w[1] + 1e-12));
    assert!(vals[0] >= 0.0 && vals[0] < 1e-3 && (vals[32] - 1.0).abs() < 1e-2);
}

#[test]
fn second_eigenvalue_density_output() {
    let out = stdout(&pfpp(&["density", "second-eig", "--family", "airy1", "--s=-6:0:0.5"]));
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("s,density"));
    for l in lines {
        let d: f64 = l.split_once(',').unwrap().1.parse().unwrap();
        assert!(d >= 0.0);
    }
}

#[test]
fn histogram_of_oracle_samples() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("o.csv");
    stdout(&pfpp(&["oracle", "gse", "--n", "4", "--samples", "400", "--seed", "2", "--out", csv.to_str().unwrap()]));
    let out = stdout(&pfpp(&["hist", "--input", csv.to_str().unwrap(), "--bins", "10", "--batches", "4"]));
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("bin_left,bin_right,count,density,batch_mean,batch_stddev"));
    let (mut total, mut mass) = (0usize, 0.0);
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f.len(), 6);
        let (lo, hi): (f64, f64) = (f[0].parse().unwrap(), f[1].parse().unwrap());
        total += f[2].parse::<usize>().unwrap();
        mass += (hi - lo) * f[3].parse::<f64>().unwrap();
        assert!(f[5].parse::<f64>().unwrap() >= 0.0);
    }
    assert_eq!(total, 400);
    assert!((mass - 1.0).abs() < 1e-12);
}

#[test]
fn corner_growth_kernel_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let k = dir.path().join("cg.pfk");
    stdout(&pfpp(&["kernel", "build", "--family", "corner_growth", "--n", "4", "--q", "0.5", "--out", k.to_str().unwrap()]));
    let side: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(format!("{}.json", k.display())).unwrap()).unwrap();
    assert!(side["nodes"].is_array());
    assert!(side["build_tolerances"]["rank_defect"].as_f64().unwrap() < 1e-6);
    let out = stdout(&pfpp(&["oracle", "corner-growth", "--n", "4", "--q", "0.5", "--samples", "20", "--seed", "1"]));
    for l in out.lines().skip(1) {
        l.split_once(',').unwrap().1.parse::<u64>().unwrap();
    }
}

#[test]
fn gibbs_output_schema() {
    let out = stdout(&pfpp(&["gibbs", "--family", "goe", "--n", "4", "--steps", "30", "--burn-in", "10", "--seed", "3"]));
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("sample_index,sweep,points"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 20);
    for (i, r) in rows.iter().enumerate() {
        let f: Vec<&str> = r.splitn(3, ',').collect();
        assert_eq!(f[0].parse::<usize>().unwrap(), i);
        assert_eq!(f[1].parse::<usize>().unwrap(), i + 10);
        assert_eq!(f[2].split(' ').count(), 4);
    }
}

#[test]
fn sop_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sop.csv");
    let o = pfpp(&["sop", "--weight", "gse", "--n", "4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("skew-orthogonality error"));
    assert!(std::fs::read_to_string(out).unwrap().lines().count() > 1);
}
