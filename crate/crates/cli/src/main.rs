//! `asynclidar`: scene simulation, detection statistics, event
//! post-processing and fixed-point checks from the command line.
//!
//! Every command writes its files plus a `manifest.json` into `--out`.
//! Randomized commands need an explicit seed.

mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use asynclidar::analytic::{self, AnalyticScenario, BoundsRow, PhitRow};
use asynclidar::detector::{run_array, AsyncParams};
use asynclidar::events::{self, DdConfig, DdMode};
use asynclidar::fixedpoint::{self, HwConfig, HwHistogram};
use asynclidar::scene_config::SceneFile;
use asynclidar::stream::{self, EventRecord};
use asynclidar::{HistogramConfig, RandomSource};

use output::{inputs_hash, RunManifest, Staged};

#[derive(Parser)]
#[command(
    name = "asynclidar",
    version,
    about = "Asynchronous SPAD dToF LiDAR experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the per-pixel detector over a scene and write the event stream.
    Simulate(SimulateArgs),
    /// Write detection-probability curves as CSV.
    Analyze(AnalyzeArgs),
    /// Turn an event stream into maps, DD events or evaluation reports.
    Postprocess(PostprocessArgs),
    /// Run the integer pipeline model against histograms or the square root.
    FpgaCheck(FpgaArgs),
}

#[derive(Args)]
struct DetectorFlags {
    /// Threshold multiplier α.
    #[arg(long, default_value_t = 8.0)]
    alpha: f64,
    /// Cycles before the first check.
    #[arg(long, default_value_t = 100)]
    l1: u64,
    /// Forced reset after this many cycles.
    #[arg(long, default_value_t = 2000)]
    l2: u64,
    /// Check period in cycles.
    #[arg(long, default_value_t = 10)]
    x: u64,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[command(flatten)]
    detector: DetectorFlags,
    /// Total laser cycles to simulate.
    #[arg(long, default_value_t = 10_000)]
    cycles: u64,
    /// Overrides the seed in the scene file.
    #[arg(long)]
    seed: Option<u64>,
    /// Drop TIMEOUT records from the stream.
    #[arg(long)]
    peaks_only: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnalyzeMode {
    Phit,
    Roc,
    Bounds,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(value_enum)]
    mode: AnalyzeMode,
    /// SNR values: a comma list or `start:stop:step` (inclusive).
    #[arg(long)]
    snr: Option<String>,
    /// Background photons per bin per cycle.
    #[arg(long, default_value_t = 0.05)]
    b: f64,
    /// Laser cycles N.
    #[arg(long, default_value_t = 2000.0)]
    cycles: f64,
    /// Background bins M_B.
    #[arg(long, default_value_t = 7)]
    mb: u32,
    /// Pulse σ in bins.
    #[arg(long, default_value_t = 1.5)]
    sigma_bins: f64,
    /// Pulse centre inside its bin; 0 is the bin edge.
    #[arg(long, default_value_t = 0.0)]
    mu_offset: f64,
    /// α grid for `roc`: a comma list or `start:stop:step`.
    #[arg(long, default_value = "0:10:0.1")]
    alpha: String,
    /// P_false targets for `bounds`.
    #[arg(long, default_value = "0.001")]
    p_false: String,
    /// P_true targets for `bounds`.
    #[arg(long, default_value = "0.5,0.9")]
    p_true: String,
    /// Add a Monte Carlo column to `phit` with this many trials.
    #[arg(long)]
    mc_trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PostMode {
    Maps,
    Dd,
    Reflectivity,
    Eval,
    Compress,
}

#[derive(Clone, Copy, ValueEnum)]
enum DdModeArg {
    Reference,
    Consecutive,
}

#[derive(Args)]
struct PostprocessArgs {
    #[arg(long)]
    stream: PathBuf,
    #[arg(long, value_enum)]
    mode: PostMode,
    /// Array size; inferred from the largest coordinate when omitted.
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    /// Events averaged by the averaged depth map.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Ground-truth depth in meters for `eval`.
    #[arg(long)]
    true_depth: Option<f64>,
    /// Histogram geometry for `eval`; `--scene` takes precedence.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    num_bins: usize,
    #[arg(long, default_value_t = 8.75)]
    bin_width_ns: f64,
    #[arg(long, default_value_t = 1.2)]
    laser_rate_mhz: f64,
    /// DD threshold in meters.
    #[arg(long, default_value_t = 0.1)]
    dd_threshold: f64,
    /// DD moving-average window in events.
    #[arg(long, default_value_t = 3)]
    avg_window: usize,
    #[arg(long, value_enum, default_value_t = DdModeArg::Reference)]
    dd_mode: DdModeArg,
    /// Extra stream holding DD records for `compress`.
    #[arg(long)]
    dd_stream: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FpgaArgs {
    /// Packed little-endian u16 histograms, 128 counts per record.
    #[arg(long, required_unless_present_any = ["exhaustive_sqrt", "latency"])]
    histograms: Option<PathBuf>,
    /// Check the square root against floor(√n) for every 12-bit input.
    #[arg(long)]
    exhaustive_sqrt: bool,
    /// Print the pipeline timing breakdown.
    #[arg(long)]
    latency: bool,
    #[arg(long, default_value_t = 8)]
    alpha_int: u32,
    #[arg(long, default_value_t = 40)]
    l1: u64,
    #[arg(long, default_value_t = 2000)]
    l2: u64,
    #[arg(long, default_value_t = 4)]
    x: u64,
    #[arg(long, default_value_t = 10.0)]
    laser_rate_mhz: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a, args),
        Command::Analyze(a) => analyze(a, args),
        Command::Postprocess(a) => postprocess(a, args),
        Command::FpgaCheck(a) => fpga_check(a, args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn simulate(a: SimulateArgs, args: Vec<String>) -> Result<ExitCode> {
    let scene_bytes = read_input(&a.scene)?;
    let text = String::from_utf8(scene_bytes.clone()).context("scene file is not UTF-8")?;
    let file = SceneFile::parse(&text).with_context(|| format!("in {}", a.scene.display()))?;
    let scene = file
        .build()
        .with_context(|| format!("in {}", a.scene.display()))?;
    let d = &a.detector;
    let params = AsyncParams::new(d.alpha, d.l1, d.l2, d.x)?;
    let seed = a
        .seed
        .or(file.seed)
        .ok_or_else(|| anyhow!("no seed: pass --seed or set `seed` in the scene file"))?;

    let mut events = run_array(&scene, &params, a.cycles, &RandomSource::new(seed));
    if a.peaks_only {
        events.retain(|e| e.as_peak().is_some());
    }
    let peaks = events.iter().filter(|e| e.as_peak().is_some()).count();

    let mut staged = Staged::default();
    staged.add("events.txt", stream::detector_stream_bytes(&events));
    let mut m = RunManifest::new("simulate", args.clone(), &a.out);
    m.scene = Some(a.scene.display().to_string());
    m.params = Some(params);
    m.total_cycles = Some(a.cycles);
    m.seed = Some(seed);
    m.rng = Some(RandomSource::ALGORITHM);
    m.inputs_sha256 = inputs_hash(&[&scene_bytes], &args);
    staged.commit(&a.out, m)?;
    println!(
        "{} events ({} peak) over {} cycles, {} pixels -> {}",
        events.len(),
        peaks,
        a.cycles,
        scene.num_pixels(),
        a.out.join("events.txt").display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Parses `a,b,c` or `start:stop:step` (stop included when hit).
fn parse_grid(field: &str, s: &str) -> Result<Vec<f64>> {
    let bad = || anyhow!("invalid --{field} value `{s}`");
    let parts: Vec<&str> = s.split(':').collect();
    let values = match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step): (f64, f64, f64) = (
                start.trim().parse().map_err(|_| bad())?,
                stop.trim().parse().map_err(|_| bad())?,
                step.trim().parse().map_err(|_| bad())?,
            );
            if step.is_nan() || step <= 0.0 || stop < start {
                bail!("--{field}: range needs start <= stop and a positive step");
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            (0..=n).map(|i| start + i as f64 * step).collect()
        }
        [_] => s
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?,
        _ => return Err(bad()),
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    Ok(values)
}

fn analyze(a: AnalyzeArgs, args: Vec<String>) -> Result<ExitCode> {
    let default_snr = match a.mode {
        AnalyzeMode::Phit => "0:30:0.5",
        AnalyzeMode::Roc => "6,12,18",
        AnalyzeMode::Bounds => "12,18,24",
    };
    let snrs = parse_grid("snr", a.snr.as_deref().unwrap_or(default_snr))?;
    let scenario = |snr: f64| {
        AnalyticScenario::from_snr(snr, a.b, a.cycles, a.sigma_bins, a.mu_offset, a.mb)
            .with_context(|| format!("scenario at SNR {snr}"))
    };
    let mut staged = Staged::default();
    let mut m = RunManifest::new("analyze", args.clone(), &a.out);
    m.inputs_sha256 = inputs_hash(&[], &args);
    let mut code = ExitCode::SUCCESS;

    match a.mode {
        AnalyzeMode::Phit => {
            let rnd = match (a.mc_trials, a.seed) {
                (Some(_), Some(seed)) => Some(RandomSource::new(seed)),
                (Some(_), None) => bail!("--mc-trials needs an explicit --seed"),
                _ => None,
            };
            let mut rows = Vec::with_capacity(snrs.len());
            for &snr in &snrs {
                let sc = scenario(snr)?;
                let mc = match (&rnd, a.mc_trials) {
                    (Some(r), Some(t)) => Some(analytic::monte_carlo_p_hit(&sc, t, r)?),
                    _ => None,
                };
                rows.push(PhitRow {
                    snr,
                    lambda_b: sc.lambda_b(),
                    lambda_peak: sc.lambda_peak(),
                    p_hit: analytic::p_hit(&sc)?,
                    mc,
                });
            }
            let mut buf = Vec::new();
            analytic::write_phit_csv(&mut buf, &rows)?;
            staged.add("phit.csv", buf);
            m.seed = a.seed.filter(|_| a.mc_trials.is_some());
            if let Some(r) = rows.iter().find(|r| r.p_hit >= 0.99) {
                println!("P_hit reaches 0.99 at SNR {}", r.snr);
            }
        }
        AnalyzeMode::Roc => {
            let alphas = parse_grid("alpha", &a.alpha)?;
            let mut curves = Vec::new();
            for &snr in &snrs {
                let roc = analytic::roc_curve(&scenario(snr)?, &alphas)?;
                println!("SNR {snr}: AUC {:.6}", roc.auc);
                curves.push((snr, roc));
            }
            let mut buf = Vec::new();
            analytic::write_roc_csv(&mut buf, &curves)?;
            staged.add("roc.csv", buf);
        }
        AnalyzeMode::Bounds => {
            let pf = parse_grid("p-false", &a.p_false)?;
            let pt = parse_grid("p-true", &a.p_true)?;
            let mut rows = Vec::new();
            for &snr in &snrs {
                let sc = scenario(snr)?;
                for &f in &pf {
                    for &t in &pt {
                        let row = BoundsRow::compute(&sc, f, t)?;
                        if !row.feasible() {
                            eprintln!(
                                "infeasible: SNR {snr}, P_false {f}, P_true {t} (alpha_min {:.4}, alpha_max {})",
                                row.alpha_min,
                                row.alpha_max.map_or("none".into(), |v| format!("{v:.4}"))
                            );
                            code = ExitCode::from(2);
                        }
                        rows.push(row);
                    }
                }
            }
            let mut buf = Vec::new();
            analytic::write_bounds_csv(&mut buf, &rows)?;
            staged.add("bounds.csv", buf);
        }
    }
    staged.commit(&a.out, m)?;
    Ok(code)
}

fn load_stream(path: &Path) -> Result<(Vec<u8>, Vec<EventRecord>)> {
    let bytes = read_input(path)?;
    let records = stream::parse_records(bytes.as_slice())
        .with_context(|| format!("in {}", path.display()))?;
    Ok((bytes, records))
}

fn infer_dims(records: &[EventRecord], width: Option<u32>, height: Option<u32>) -> (u32, u32) {
    let coords = records.iter().map(|r| match r {
        EventRecord::Peak(p) => p.coord,
        EventRecord::Timeout(t) => t.coord,
        EventRecord::Dd(d) => d.coord,
    });
    let (mx, my) = coords.fold((0, 0), |(mx, my), c| (mx.max(c.x + 1), my.max(c.y + 1)));
    (width.unwrap_or(mx.max(1)), height.unwrap_or(my.max(1)))
}

fn add_map(staged: &mut Staged, name: &str, map: &events::PixelMap) -> Result<()> {
    let mut grid = Vec::new();
    map.write_csv(&mut grid)?;
    let mut mask = Vec::new();
    map.write_mask_csv(&mut mask)?;
    let mut meta = serde_json::to_vec_pretty(&map.meta(name))?;
    meta.push(b'\n');
    staged.add(format!("{name}.csv"), grid);
    staged.add(format!("{name}_mask.csv"), mask);
    staged.add(format!("{name}_meta.json"), meta);
    Ok(())
}

fn postprocess(a: PostprocessArgs, args: Vec<String>) -> Result<ExitCode> {
    let (bytes, records) = load_stream(&a.stream)?;
    let peaks = stream::peak_events(&records);
    let (width, height) = infer_dims(&records, a.width, a.height);
    let mut inputs = vec![bytes];
    let mut staged = Staged::default();

    match a.mode {
        PostMode::Maps => {
            add_map(
                &mut staged,
                "depth_last",
                &events::depth_map_last(&peaks, width, height)?,
            )?;
            add_map(
                &mut staged,
                &format!("depth_avg{}", a.k),
                &events::depth_map_avg_k(&peaks, width, height, a.k)?,
            )?;
            add_map(
                &mut staged,
                "event_count",
                &events::event_count_map(&peaks, width, height)?,
            )?;
        }
        PostMode::Reflectivity => {
            add_map(
                &mut staged,
                "reflectivity",
                &events::reflectivity_map(&peaks, width, height)?,
            )?;
        }
        PostMode::Dd => {
            let mode = match a.dd_mode {
                DdModeArg::Reference => DdMode::Reference,
                DdModeArg::Consecutive => DdMode::Consecutive,
            };
            let cfg = DdConfig::new(a.dd_threshold, a.avg_window, mode)?;
            let dd = events::dd_encode(&peaks, &cfg);
            let dd_records: Vec<EventRecord> = dd.iter().copied().map(EventRecord::from).collect();
            let mut buf = Vec::new();
            stream::write_records(&mut buf, &dd_records)?;
            staged.add("dd.txt", buf);

            let mut merged: Vec<EventRecord> = records.clone();
            merged.extend(dd_records);
            merged.sort_by_key(|r| {
                let (stamp, c) = match r {
                    EventRecord::Peak(p) => (p.cycle_stamp, p.coord),
                    EventRecord::Timeout(t) => (t.cycle_stamp, t.coord),
                    EventRecord::Dd(d) => (d.cycle_stamp, d.coord),
                };
                (stamp, c.y, c.x)
            });
            let mut buf = Vec::new();
            stream::write_records(&mut buf, &merged)?;
            staged.add("events_with_dd.txt", buf);
            println!("{} DD events from {} peak events", dd.len(), peaks.len());
        }
        PostMode::Eval => {
            let truth = a
                .true_depth
                .ok_or_else(|| anyhow!("eval mode needs --true-depth"))?;
            let cfg = match &a.scene {
                Some(p) => {
                    let b = read_input(p)?;
                    let cfg = SceneFile::parse(std::str::from_utf8(&b)?)?
                        .histogram
                        .to_config()?;
                    inputs.push(b);
                    cfg
                }
                None => {
                    HistogramConfig::new(a.num_bins, a.bin_width_ns * 1e-9, a.laser_rate_mhz * 1e6)?
                }
            };
            let report = events::evaluate_flat_target(&peaks, truth, &cfg);
            let body = format!("{}\n{}\n", events::EvalReport::CSV_HEADER, report.csv_row());
            print!("{body}");
            staged.add("eval.csv", body.into_bytes());
        }
        PostMode::Compress => {
            let mut dd_count = records.iter().filter(|r| r.as_dd().is_some()).count();
            if let Some(p) = &a.dd_stream {
                let (b, extra) = load_stream(p)?;
                dd_count += extra.iter().filter(|r| r.as_dd().is_some()).count();
                inputs.push(b);
            }
            let ratio = events::compression_ratio(dd_count, peaks.len());
            let body = format!(
                "peak_events,dd_events,compression_ratio\n{},{},{}\n",
                peaks.len(),
                dd_count,
                ratio.map(|r| format!("{r:.6}")).unwrap_or_default()
            );
            print!("{body}");
            staged.add("compression.csv", body.into_bytes());
        }
    }

    let mut m = RunManifest::new("postprocess", args.clone(), &a.out);
    let refs: Vec<&[u8]> = inputs.iter().map(Vec::as_slice).collect();
    m.inputs_sha256 = inputs_hash(&refs, &args);
    staged.commit(&a.out, m)?;
    Ok(ExitCode::SUCCESS)
}

fn fpga_check(a: FpgaArgs, args: Vec<String>) -> Result<ExitCode> {
    let mut staged = Staged::default();
    let mut inputs = Vec::new();
    let mut ok = true;

    if a.exhaustive_sqrt {
        let total = fixedpoint::ISQRT_MAX + 1;
        let exact = (0..total)
            .filter(|&n| {
                let r = fixedpoint::isqrt_background(n).expect("in range");
                r * r <= n && (r + 1) * (r + 1) > n
            })
            .count();
        let line = format!("{exact}/{total} exact floor");
        println!("{line}");
        staged.add("sqrt_summary.txt", format!("{line}\n").into_bytes());
        ok &= exact as u32 == total;
    }

    if a.latency {
        let params = AsyncParams::new(f64::from(a.alpha_int), a.l1, a.l2, a.x)?;
        let hw = HwConfig {
            alpha_int: a.alpha_int,
            mux_factor: 4,
            laser_rate: a.laser_rate_mhz * 1e6,
        };
        let report = fixedpoint::pipeline_schedule(&params, &hw)?;
        let mut json = serde_json::to_vec_pretty(&report)?;
        json.push(b'\n');
        print!("{}", String::from_utf8_lossy(&json));
        staged.add("latency.json", json);
    }

    if let Some(path) = &a.histograms {
        let bytes = read_input(path)?;
        let records = fixedpoint::parse_histogram_file(&bytes)
            .with_context(|| format!("in {}", path.display()))?;
        inputs.push(bytes);
        let mut rows = Vec::new();
        let mut errors = String::new();
        for (i, rec) in records.iter().enumerate() {
            match HwHistogram::from_counts(rec) {
                Ok(h) => rows.push(fixedpoint::differential(i, &h, a.alpha_int)),
                Err(e) => errors.push_str(&format!("{i},{e}\n")),
            }
        }
        let argmax_mismatch = rows.iter().filter(|r| r.argmax_mismatch()).count();
        let decision_mismatch = rows.iter().filter(|r| r.decision_mismatch()).count();
        let band = fixedpoint::disagreement_band(a.alpha_int);
        let outside_band = rows
            .iter()
            .filter(|r| r.decision_mismatch() && !(r.float_margin <= 0.0 && r.float_margin > -band))
            .count();
        let domain_errors = errors.lines().count();
        let summary = format!(
            "records {}\nargmax mismatches {}\ndecision mismatches {} ({} outside the {}-count band)\ndomain errors {}\n",
            records.len(),
            argmax_mismatch,
            decision_mismatch,
            outside_band,
            band,
            domain_errors
        );
        print!("{summary}");
        if domain_errors > 0 {
            eprint!("{errors}");
        }
        let mut buf = Vec::new();
        fixedpoint::write_decisions_csv(&mut buf, &rows)?;
        staged.add("decisions.csv", buf);
        staged.add("summary.txt", summary.into_bytes());
        if domain_errors > 0 {
            staged.add("errors.csv", format!("record,error\n{errors}").into_bytes());
        }
        ok &= argmax_mismatch == 0 && outside_band == 0 && domain_errors == 0;
    }

    if let Some(out) = &a.out {
        let mut m = RunManifest::new("fpga-check", args.clone(), out);
        let refs: Vec<&[u8]> = inputs.iter().map(Vec::as_slice).collect();
        m.inputs_sha256 = inputs_hash(&refs, &args);
        staged.commit(out, m)?;
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
