//! Command-line front end: grid precomputation, calibration runs and studies.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ms_calib::calibrator::{Calibrator, CalibrationRecord};
use ms_calib::config::RunConfig;
use ms_calib::evaluation::{
    benchmark_infidelity, endpoint_infidelity_distribution, infidelity_curve, manual_baseline, miscalibration,
    offset_params, write_csv, BenchmarkConfig, CaptureCell, ScanWidths, StudySetup,
};
use ms_calib::grid::{build_grids, save_grid, GridScale, GridSet, GridSpec};
use ms_calib::lab::{ControlParams, VirtualLab};
use ms_calib::physics::{GateParams, MeasurementSetting, PhaseTarget};
use ms_calib::strategy::{derive_setting_thresholds, SettingThresholds, StrategyKind};

const EXIT_ERROR: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_REJECTED: u8 = 4;

#[derive(Parser)]
#[command(name = "ms-calib", version, about = "Bayesian calibration of the Molmer-Sorensen gate in a simulated lab")]
struct Cli {
    /// TOML run configuration; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Grid directory.
    #[arg(long, global = true, env = "MS_CALIB_GRID_DIR")]
    grid_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build likelihood grids.
    Precompute {
        /// `all`, or a setting such as `3` or `2:plus`.
        #[arg(default_value = "all")]
        setting: String,
        #[arg(long, value_enum)]
        scale: Option<Scale>,
        /// Overwrite existing grid files.
        #[arg(long)]
        force: bool,
    },
    /// Calibrate the configured lab once, with confirmation if enabled.
    Calibrate,
    /// Run an evaluation study and write a CSV report.
    Study {
        #[arg(value_enum)]
        kind: StudyKind,
        /// Restrict an infidelity curve to one parameter.
        #[arg(long, value_enum)]
        axis: Option<Axis>,
        /// Add a simulated-benchmarking column to an infidelity curve.
        #[arg(long)]
        benchmark: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Full,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyKind {
    Capture,
    InfidelityCurve,
    Endpoints,
    Baseline,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Rabi,
    Centerline,
    Sideband,
    Phase,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    if let Some(g) = cli.grid_dir {
        cfg.grid_dir = g;
    }
    match cli.command {
        Command::Precompute { setting, scale, force } => {
            if let Some(s) = scale {
                cfg.grid_scale = match s {
                    Scale::Full => GridScale::Full,
                    Scale::Test => GridScale::Test,
                };
            }
            precompute(&cfg, &setting, force)?;
            Ok(0)
        }
        Command::Calibrate => calibrate(&cfg),
        Command::Study { kind, axis, benchmark } => {
            study(&cfg, kind, axis, benchmark)?;
            Ok(0)
        }
    }
}

fn parse_setting(s: &str) -> anyhow::Result<MeasurementSetting> {
    let (n, p) = s.split_once(':').unwrap_or((s, "zero"));
    let target = match p {
        "zero" | "0" => PhaseTarget::Zero,
        "plus" | "+" => PhaseTarget::PlusQuarter,
        "minus" | "-" => PhaseTarget::MinusQuarter,
        _ => bail!("unknown phase target {p:?}; use zero, plus or minus"),
    };
    let setting = MeasurementSetting::new(n.trim().parse().with_context(|| format!("gate count {n:?}"))?, target);
    setting.validate()?;
    Ok(setting)
}

fn precompute(cfg: &RunConfig, which: &str, force: bool) -> anyhow::Result<()> {
    let settings: Vec<MeasurementSetting> = if which == "all" {
        cfg.calibration.menu.settings().to_vec()
    } else {
        vec![parse_setting(which)?]
    };
    fs::create_dir_all(&cfg.grid_dir)?;
    for s in &settings {
        let path = GridSet::path_for(&cfg.grid_dir, s);
        if path.exists() && !force {
            bail!("{} exists; pass --force to rebuild", path.display());
        }
    }
    let specs: Vec<GridSpec> = settings
        .iter()
        .map(|s| GridSpec::preset(*s, cfg.grid_scale, &cfg.model))
        .collect();
    let clock = Instant::now();
    let tables = build_grids(&specs)?;
    let secs = clock.elapsed().as_secs_f64();
    for t in &tables {
        let path = GridSet::path_for(&cfg.grid_dir, &t.spec.setting);
        save_grid(t, &path)?;
        println!("{} {} nodes -> {}", t.spec.setting, t.spec.node_count(), path.display());
    }
    println!("built {} grid(s) in {secs:.1} s", tables.len());
    Ok(())
}

fn load_grids(cfg: &RunConfig) -> anyhow::Result<GridSet> {
    Ok(GridSet::load_dir(&cfg.grid_dir, cfg.calibration.menu.settings(), &cfg.model)?)
}

fn thresholds(cfg: &RunConfig) -> anyhow::Result<Option<SettingThresholds>> {
    Ok(match cfg.calibration.strategy {
        StrategyKind::Thresholded => Some(derive_setting_thresholds(&cfg.calibration.menu, &cfg.model, cfg.grid_scale)?),
        StrategyKind::VarianceMin => None,
    })
}

fn comment(cfg: &RunConfig) -> anyhow::Result<String> {
    Ok(format!("seed={} digest={}", cfg.seed, cfg.digest()?))
}

fn create(cfg: &RunConfig, name: &str) -> anyhow::Result<(PathBuf, BufWriter<File>)> {
    fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok((path, BufWriter::new(f)))
}

#[derive(Serialize)]
struct LogHeader<'a> {
    kind: &'static str,
    seed: u64,
    digest: &'a str,
}

#[derive(Serialize)]
struct LogSummary<'a> {
    kind: &'static str,
    attempt: usize,
    record: &'a CalibrationRecord,
}

fn calibrate(cfg: &RunConfig) -> anyhow::Result<u8> {
    let grids = load_grids(cfg)?;
    let cal = Calibrator::new(cfg.model.clone(), cfg.calibration.clone(), &grids, thresholds(cfg)?)?;
    let mut lab = VirtualLab::new(cfg.model.clone(), cfg.truth, cfg.noise, cfg.seed)?;
    let records = cal.run_confirmed(&mut lab, cfg.seed)?;
    let digest = cfg.digest()?;
    let (path, mut out) = create(cfg, "calibration.jsonl")?;
    line(
        &mut out,
        &LogHeader {
            kind: "header",
            seed: cfg.seed,
            digest: &digest,
        },
    )?;
    for (a, r) in records.iter().enumerate() {
        for it in &r.iterations {
            line(&mut out, it)?;
        }
        line(
            &mut out,
            &LogSummary {
                kind: "summary",
                attempt: a,
                record: r,
            },
        )?;
    }
    out.flush()?;
    let last = records.last().expect("at least one attempt");
    let m = miscalibration(&last.final_params, last.final_control.gate_time, &cfg.model);
    println!(
        "attempts {} iterations {} shots {} stop {:?} confirmed {} -> {}",
        records.len(),
        last.iterations.len(),
        records.iter().map(|r| r.total_shots).sum::<u64>(),
        last.stop_reason,
        last.confirmation.as_ref().map_or("skipped".to_string(), |c| c.accept.to_string()),
        path.display()
    );
    println!(
        "final offsets: rabi {:+.4} rel, centerline {:+.1} rad/s, sideband {:+.1} rad/s, phase {:+.4} rad",
        m[0], m[1], m[2], m[3]
    );
    Ok(if !last.converged() {
        EXIT_NOT_CONVERGED
    } else if !last.accepted() {
        EXIT_REJECTED
    } else {
        0
    })
}

fn line<T: Serialize>(w: &mut impl Write, v: &T) -> anyhow::Result<()> {
    writeln!(w, "{}", serde_json::to_string(v)?)?;
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    parameter: &'static str,
    offset: f64,
    infidelity: f64,
    benchmark: Option<f64>,
}

#[derive(Serialize)]
struct EndpointRow {
    run: usize,
    rabi_rel: f64,
    centerline: f64,
    sideband: f64,
    phase: f64,
    infidelity: f64,
}

#[derive(Serialize)]
struct ScanRow {
    scan: usize,
    kind: String,
    result: f64,
    widened: bool,
    fallback: bool,
    shots: u64,
}

fn study(cfg: &RunConfig, kind: StudyKind, axis: Option<Axis>, benchmark: bool) -> anyhow::Result<()> {
    let note = comment(cfg)?;
    let st = &cfg.study;
    match kind {
        StudyKind::InfidelityCurve => {
            let axes: Vec<usize> = match axis {
                Some(a) => vec![a as usize],
                None => (0..4).collect(),
            };
            let mut rows = Vec::new();
            for d in axes {
                let n = st.curve_points.max(2);
                let h = st.curve_half_range[d];
                let xs: Vec<f64> = (0..n).map(|i| -h + 2.0 * h * i as f64 / (n - 1) as f64).collect();
                let c = infidelity_curve(d, &xs, &cfg.model)?;
                let opt = cfg.model.optimal();
                for (x, y) in c.offsets.iter().zip(&c.infidelity) {
                    let rb = if benchmark {
                        let b = BenchmarkConfig {
                            seed: cfg.seed,
                            ..BenchmarkConfig::default()
                        };
                        Some(benchmark_infidelity(&offset_params(&opt, d, *x), &cfg.model, &b)?)
                    } else {
                        None
                    };
                    rows.push(CurveRow {
                        parameter: GateParams::NAMES[d],
                        offset: *x,
                        infidelity: *y,
                        benchmark: rb,
                    });
                }
            }
            finish(cfg, "infidelity_curve.csv", &note, &rows)?;
        }
        StudyKind::Capture => {
            let grids = load_grids(cfg)?;
            let setup = setup(cfg, &grids)?;
            let report = setup.capture_range(&st.capture_distances, &st.capture_particles, st.capture_trials)?;
            for c in &report.cells {
                println!(
                    "D = {} N_p = {}: {}/{} captured, 95% CI [{:.3}, {:.3}]",
                    c.distance, c.particles, c.captured, c.trials, c.ci_low, c.ci_high
                );
            }
            finish::<CaptureCell>(cfg, "capture.csv", &note, &report.cells)?;
        }
        StudyKind::Endpoints => {
            let grids = load_grids(cfg)?;
            let setup = setup(cfg, &grids)?;
            let records = setup.convergence_runs(st.endpoint_runs, st.endpoint_radius)?;
            let report = endpoint_infidelity_distribution(&records, &cfg.model)?;
            let rows: Vec<EndpointRow> = report
                .offsets
                .iter()
                .zip(&report.infidelities)
                .enumerate()
                .map(|(i, (o, f))| EndpointRow {
                    run: i,
                    rabi_rel: o[0],
                    centerline: o[1],
                    sideband: o[2],
                    phase: o[3],
                    infidelity: *f,
                })
                .collect();
            println!(
                "{} of {} runs accepted, median endpoint infidelity {:.3e}",
                rows.len(),
                records.len(),
                report.median
            );
            finish(cfg, "endpoints.csv", &note, &rows)?;
        }
        StudyKind::Baseline => {
            let mut lab = VirtualLab::new(cfg.model.clone(), cfg.truth, cfg.noise, cfg.seed)?;
            let widths = ScanWidths::from_model(&cfg.model)?;
            let rec = manual_baseline(&mut lab, ControlParams::nominal(&cfg.model), &widths)?;
            let rows: Vec<ScanRow> = rec
                .scans
                .iter()
                .enumerate()
                .map(|(i, s)| ScanRow {
                    scan: i + 1,
                    kind: format!("{:?}", s.kind),
                    result: s.result,
                    widened: s.widened,
                    fallback: s.fallback,
                    shots: s.shots,
                })
                .collect();
            println!("baseline: {} scans, total shots {}", rows.len(), rec.total_shots);
            finish(cfg, "baseline.csv", &note, &rows)?;
        }
    }
    Ok(())
}

fn setup<'a>(cfg: &RunConfig, grids: &'a GridSet) -> anyhow::Result<StudySetup<'a, GridSet>> {
    Ok(StudySetup {
        model: cfg.model.clone(),
        config: cfg.calibration.clone(),
        source: grids,
        thresholds: thresholds(cfg)?,
        noise: cfg.noise,
        seed: cfg.seed,
    })
}

fn finish<R: Serialize>(cfg: &RunConfig, name: &str, note: &str, rows: &[R]) -> anyhow::Result<()> {
    let (path, out) = create(cfg, name)?;
    write_csv(out, note, rows)?;
    println!("wrote {} row(s) to {}", rows.len(), path.display());
    Ok(())
}
