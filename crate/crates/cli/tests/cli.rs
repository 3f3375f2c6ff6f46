use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use asynclidar::analytic::{self, AnalyticScenario};
use asynclidar::fixedpoint::{encode_histogram_file, HW_BINS};
use asynclidar::random::{domain, RandomSource};

const STATIC_FINE: &str = r#"
seed = 5
[array]
width = 8
height = 4
[histogram]
num_bins = 128
bin_width_ns = 0.25
laser_rate_mhz = 10.0
[scene]
kind = "static"
background = 0.01
pulse_sigma_bins = 1.0
plane = { depth_m = 4.0, reflectivity = 1.6 }
[[scene.objects]]
region = { x0 = 2, y0 = 1, x1 = 5, y1 = 3 }
surface = { depth_m = 2.0, reflectivity = 0.8 }
"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asynclidar"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenes")
        .join(name)
}

fn static_fine(dir: &Path) -> PathBuf {
    let p = dir.join("static_fine.toml");
    fs::write(&p, STATIC_FINE).unwrap();
    p
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines
        .next()
        .unwrap()
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    (header, rows)
}

#[test]
fn simulate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = shipped("static.toml");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "simulate",
            "--scene",
            s(&scene),
            "--cycles",
            "6000",
            "--out",
            s(out),
        ]);
    }
    let ea = fs::read(a.join("events.txt")).unwrap();
    assert_eq!(ea, fs::read(b.join("events.txt")).unwrap());
    assert!(ea.len() > 1000);

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["params"]["l1"], 100);
    let other: serde_json::Value =
        serde_json::from_slice(&fs::read(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["outputs"], other["outputs"]);
    assert_eq!(manifest["inputs_sha256"], other["inputs_sha256"]);
}

#[test]
fn seed_flag_overrides_scene_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = shipped("static.toml");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&[
        "simulate",
        "--scene",
        s(&scene),
        "--cycles",
        "4000",
        "--out",
        s(&a),
    ]);
    ok(&[
        "simulate",
        "--scene",
        s(&scene),
        "--cycles",
        "4000",
        "--seed",
        "8",
        "--out",
        s(&b),
    ]);
    assert_ne!(
        fs::read(a.join("events.txt")).unwrap(),
        fs::read(b.join("events.txt")).unwrap()
    );
}

#[test]
fn no_event_before_first_check() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = shipped("static.toml");
    let out = tmp.path().join("o");
    ok(&[
        "simulate",
        "--scene",
        s(&scene),
        "--alpha",
        "8",
        "--l1",
        "100",
        "--l2",
        "2000",
        "--x",
        "10",
        "--cycles",
        "5000",
        "--out",
        s(&out),
    ]);
    let text = fs::read_to_string(out.join("events.txt")).unwrap();
    let stamps: Vec<u64> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(!stamps.is_empty());
    assert!(stamps.iter().all(|&t| t >= 100));
    assert_eq!(stamps.iter().min(), Some(&100));
}

#[test]
fn missing_scene_fails_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let r = run(&[
        "simulate",
        "--scene",
        s(&tmp.path().join("nope.toml")),
        "--out",
        s(&out),
    ]);
    assert!(!r.status.success());
    assert!(!out.exists());
}

#[test]
fn invalid_scene_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("bad.toml");
    fs::write(
        &scene,
        STATIC_FINE.replace("background = 0.01", "background = -1.0"),
    )
    .unwrap();
    let out = tmp.path().join("o");
    let r = run(&["simulate", "--scene", s(&scene), "--out", s(&out)]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("background"));
    assert!(!out.exists());
}

#[test]
fn missing_seed_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("noseed.toml");
    fs::write(&scene, STATIC_FINE.replace("seed = 5", "")).unwrap();
    let r = run(&[
        "simulate",
        "--scene",
        s(&scene),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("seed"));
}

#[test]
fn phit_crosses_099_near_snr_18() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    ok(&[
        "analyze",
        "phit",
        "--snr",
        "0:30:0.25",
        "--b",
        "0.05",
        "--cycles",
        "2000",
        "--mb",
        "7",
        "--out",
        s(&out),
    ]);
    let (header, rows) = csv_rows(&out.join("phit.csv"));
    assert_eq!(header, ["snr", "lambda_b", "lambda_peak", "p_hit"]);
    let values: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[3].parse().unwrap()))
        .collect();
    assert!(values.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-9));
    let cross = values.iter().find(|v| v.1 >= 0.99).unwrap().0;
    assert!((16.0..=20.0).contains(&cross), "crossing at {cross}");
}

#[test]
fn phit_monte_carlo_needs_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let r = run(&[
        "analyze",
        "phit",
        "--snr",
        "10",
        "--mc-trials",
        "10000",
        "--out",
        s(tmp.path()),
    ]);
    assert!(!r.status.success());
    let out = tmp.path().join("mc");
    ok(&[
        "analyze",
        "phit",
        "--snr",
        "10,20",
        "--mc-trials",
        "10000",
        "--seed",
        "3",
        "--out",
        s(&out),
    ]);
    let (header, rows) = csv_rows(&out.join("phit.csv"));
    assert_eq!(header.len(), 6);
    for r in rows {
        let exact: f64 = r[3].parse().unwrap();
        let mc: f64 = r[4].parse().unwrap();
        let se: f64 = r[5].parse().unwrap();
        assert!((exact - mc).abs() <= 4.0 * se.max(1e-3));
    }
}

#[test]
fn roc_fpr_column_does_not_depend_on_snr() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    ok(&[
        "analyze",
        "roc",
        "--snr",
        "6,12,18",
        "--alpha",
        "0:6:0.5",
        "--out",
        s(&out),
    ]);
    let (header, rows) = csv_rows(&out.join("roc.csv"));
    assert_eq!(header, ["snr", "alpha", "fpr", "tpr", "auc"]);
    let per_snr: Vec<Vec<String>> = ["6", "12", "18"]
        .iter()
        .map(|snr| {
            rows.iter()
                .filter(|r| r[0] == *snr)
                .map(|r| r[2].clone())
                .collect()
        })
        .collect();
    assert_eq!(per_snr[0].len(), 13);
    assert_eq!(per_snr[0], per_snr[1]);
    assert_eq!(per_snr[0], per_snr[2]);
    let auc = |snr: &str| -> f64 {
        rows.iter().find(|r| r[0] == snr).unwrap()[4]
            .parse()
            .unwrap()
    };
    assert!(auc("6") < auc("12") && auc("12") < auc("18"));
}

#[test]
fn bounds_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let r = run(&[
        "analyze",
        "bounds",
        "--snr",
        "12,24",
        "--p-false",
        "0.001",
        "--p-true",
        "0.5",
        "--out",
        s(&out),
    ]);
    // SNR 12 cannot reach P_true 0.5 above the P_false floor.
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("infeasible"));
    let (header, rows) = csv_rows(&out.join("bounds.csv"));
    assert_eq!(
        header,
        [
            "snr",
            "target_p_false",
            "target_p_true",
            "alpha_min",
            "alpha_max",
            "feasible"
        ]
    );
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][5], "false");
    assert_eq!(rows[1][5], "true");

    let sc = AnalyticScenario::from_snr(24.0, 0.05, 2000.0, 1.5, 0.0, 7).unwrap();
    let a_min: f64 = rows[1][3].parse().unwrap();
    let a_max: f64 = rows[1][4].parse().unwrap();
    assert!(a_min <= a_max);
    assert!((analytic::p_false(a_min, 7) - 0.001).abs() < 1e-6);
    let pt = analytic::p_true(&sc, a_max).unwrap();
    assert!((pt - 0.5).abs() < 1e-6, "P_true at alpha_max = {pt}");
}

#[test]
fn all_feasible_bounds_exit_zero() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&[
        "analyze",
        "bounds",
        "--snr",
        "24,30",
        "--p-false",
        "0.001",
        "--p-true",
        "0.5",
        "--out",
        s(tmp.path()),
    ]);
}

#[test]
fn maps_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = static_fine(tmp.path());
    let sim = tmp.path().join("sim");
    ok(&[
        "simulate",
        "--scene",
        s(&scene),
        "--cycles",
        "20000",
        "--out",
        s(&sim),
    ]);
    let stream = sim.join("events.txt");

    let maps = tmp.path().join("maps");
    ok(&[
        "postprocess",
        "--stream",
        s(&stream),
        "--mode",
        "maps",
        "--k",
        "10",
        "--out",
        s(&maps),
    ]);
    let (_, depth) = {
        let text = fs::read_to_string(maps.join("depth_avg10.csv")).unwrap();
        (
            (),
            text.lines()
                .map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        )
    };
    assert_eq!(depth.len(), 4);
    assert_eq!(depth[0].len(), 8);
    let at = |x: usize, y: usize| -> f64 { depth[y][x].parse().unwrap() };
    assert!((at(0, 0) - 4.0).abs() < 0.05);
    assert!((at(3, 2) - 2.0).abs() < 0.05);
    let meta: serde_json::Value =
        serde_json::from_slice(&fs::read(maps.join("depth_avg10_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["width"], 8);
    assert_eq!(meta["height"], 4);

    // The wall-only column gives a clean flat-target report.
    let wall = tmp.path().join("wall.txt");
    let text = fs::read_to_string(&stream).unwrap();
    let kept: String = text
        .lines()
        .filter(|l| l.starts_with('#') || l.split(',').nth(2) == Some("0"))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(&wall, kept).unwrap();
    let eval = tmp.path().join("eval");
    ok(&[
        "postprocess",
        "--stream",
        s(&wall),
        "--mode",
        "eval",
        "--true-depth",
        "4.0",
        "--scene",
        s(&scene),
        "--out",
        s(&eval),
    ]);
    let (header, rows) = csv_rows(&eval.join("eval.csv"));
    assert_eq!(header, ["n_events", "n_false", "fpr", "rmse_m"]);
    let n: usize = rows[0][0].parse().unwrap();
    let fpr: f64 = rows[0][2].parse().unwrap();
    let rmse: f64 = rows[0][3].parse().unwrap();
    assert!(n > 50);
    // σ of one fine bin scatters CMM positions past half a bin now and then.
    assert!(fpr < 0.4, "fpr {fpr}");
    assert!(rmse < 0.03, "rmse {rmse}");

    let off = tmp.path().join("off");
    ok(&[
        "postprocess",
        "--stream",
        s(&wall),
        "--mode",
        "eval",
        "--true-depth",
        "4.5",
        "--scene",
        s(&scene),
        "--out",
        s(&off),
    ]);
    let (_, rows) = csv_rows(&off.join("eval.csv"));
    assert_eq!(rows[0][2], "1.00000000");
}

#[test]
fn eval_on_empty_stream_flags_undefined() {
    let tmp = tempfile::tempdir().unwrap();
    let stream = tmp.path().join("empty.txt");
    fs::write(&stream, "").unwrap();
    let out = tmp.path().join("o");
    ok(&[
        "postprocess",
        "--stream",
        s(&stream),
        "--mode",
        "eval",
        "--true-depth",
        "1",
        "--out",
        s(&out),
    ]);
    let (_, rows) = csv_rows(&out.join("eval.csv"));
    assert_eq!(rows[0], ["0", "0", "", ""]);
}

#[test]
fn dd_on_static_scene_is_empty_and_compress_chains() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = static_fine(tmp.path());
    let sim = tmp.path().join("sim");
    ok(&[
        "simulate",
        "--scene",
        s(&scene),
        "--cycles",
        "30000",
        "--out",
        s(&sim),
    ]);
    let dd = tmp.path().join("dd");
    ok(&[
        "postprocess",
        "--stream",
        s(&sim.join("events.txt")),
        "--mode",
        "dd",
        "--out",
        s(&dd),
    ]);
    let body = fs::read_to_string(dd.join("dd.txt")).unwrap();
    assert_eq!(body.lines().filter(|l| !l.starts_with('#')).count(), 0);

    let c = tmp.path().join("c");
    ok(&[
        "postprocess",
        "--stream",
        s(&sim.join("events.txt")),
        "--mode",
        "compress",
        "--dd-stream",
        s(&dd.join("dd.txt")),
        "--out",
        s(&c),
    ]);
    let (_, rows) = csv_rows(&c.join("compression.csv"));
    assert_eq!(rows[0][1], "0");
    assert_eq!(rows[0][2], "1.000000");
}

#[test]
fn compress_on_moving_scene_is_a_fraction() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    ok(&[
        "simulate",
        "--scene",
        s(&shipped("transverse.toml")),
        "--cycles",
        "12000",
        "--out",
        s(&sim),
    ]);
    let dd = tmp.path().join("dd");
    ok(&[
        "postprocess",
        "--stream",
        s(&sim.join("events.txt")),
        "--mode",
        "dd",
        "--out",
        s(&dd),
    ]);
    let c = tmp.path().join("c");
    ok(&[
        "postprocess",
        "--stream",
        s(&dd.join("events_with_dd.txt")),
        "--mode",
        "compress",
        "--out",
        s(&c),
    ]);
    let (_, rows) = csv_rows(&c.join("compression.csv"));
    let dd_count: usize = rows[0][1].parse().unwrap();
    let ratio: f64 = rows[0][2].parse().unwrap();
    assert!(dd_count > 0);
    assert!((0.0..=1.0).contains(&ratio));
}

#[test]
fn malformed_record_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    let stream = tmp.path().join("bad.txt");
    fs::write(
        &stream,
        "# header\nTIMEOUT,2000,0,0,,,,,,2000\nPEAK,100,0,0,3,3.1,oops,9,1.0,100\n",
    )
    .unwrap();
    let out = tmp.path().join("o");
    let r = run(&[
        "postprocess",
        "--stream",
        s(&stream),
        "--mode",
        "maps",
        "--out",
        s(&out),
    ]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("line 3"));
    assert!(!out.exists());
}

#[test]
fn exhaustive_sqrt_summary() {
    let stdout = ok(&["fpga-check", "--exhaustive-sqrt"]);
    assert!(stdout.contains("4096/4096 exact floor"));
}

#[test]
fn latency_report() {
    let stdout = ok(&["fpga-check", "--latency", "--l1", "40", "--x", "4"]);
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!((v["accumulation_s"].as_f64().unwrap() - 4.0e-6).abs() < 1e-12);
    assert_eq!(v["processing_cycles"], 4);
    assert_eq!(v["stall_cycles"], 0);
}

#[test]
fn fpga_check_on_random_histograms() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = RandomSource::new(99).stream(domain::AUX, 0);
    let records: Vec<[u16; HW_BINS]> = (0..300)
        .map(|_| {
            let peak = rng.below(HW_BINS as u64) as usize;
            std::array::from_fn(|i| {
                let bg = rng.poisson(20.0);
                let sig = if i == peak { rng.poisson(60.0) } else { 0 };
                (bg + sig).min(1023) as u16
            })
        })
        .collect();
    let file = tmp.path().join("h.bin");
    fs::write(&file, encode_histogram_file(&records)).unwrap();
    let out = tmp.path().join("o");
    let stdout = ok(&[
        "fpga-check",
        "--histograms",
        s(&file),
        "--alpha-int",
        "8",
        "--out",
        s(&out),
    ]);
    assert!(stdout.contains("records 300"));
    assert!(stdout.contains("argmax mismatches 0"));
    let (header, rows) = csv_rows(&out.join("decisions.csv"));
    assert_eq!(header[1], "i_max");
    assert_eq!(rows.len(), 300);
    assert!(rows.iter().all(|r| r[1] == r[7]));
    assert!(rows.iter().any(|r| r[6] == "1"));
}

#[test]
fn fpga_check_reports_out_of_range_records() {
    let tmp = tempfile::tempdir().unwrap();
    let mut bad = vec![[5u16; HW_BINS]; 3];
    bad[1][7] = 2000;
    let file = tmp.path().join("h.bin");
    fs::write(&file, encode_histogram_file(&bad)).unwrap();
    let r = run(&["fpga-check", "--histograms", s(&file)]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stdout).contains("domain errors 1"));
}

#[test]
fn fpga_check_empty_file_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("empty.bin");
    fs::write(&file, b"").unwrap();
    let stdout = ok(&["fpga-check", "--histograms", s(&file)]);
    assert!(stdout.contains("records 0"));
}

#[test]
fn truncated_histogram_file_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("short.bin");
    fs::write(&file, vec![0u8; 300]).unwrap();
    assert!(!run(&["fpga-check", "--histograms", s(&file)])
        .status
        .success());
}
