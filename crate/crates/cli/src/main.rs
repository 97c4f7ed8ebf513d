//! `qdm`: simulate, demodulate and analyse lock-in NV magnetometry data.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qdm_core::coherence::{fit_coherence_with, CoherenceKind, FitOptions};
use qdm_core::demod::{demodulate, PhaseConfig};
use qdm_core::io::{read_frames, read_numeric_csv, write_atomic, write_frames, CsvTable, FrameStackHeader};
use qdm_core::nv::NvConfiguration;
use qdm_core::scenario::{
    calibration_text, coherence_report, histogram_table, load_calibration, load_scenario, map_table,
    positions_table, run_scenario, sensitivity_pipeline, sweep_curve_table, trace_table, transient_setup, Experiment, Scenario,
    SweepCurve,
};
use qdm_core::sensitivity::{eta_map, roi_statistics, volume_normalize, Roi, NT_PER_T, NT_UM15_PER_T_M15};
use qdm_core::transient::{delay_estimate, peak_snr, run_transient_experiment};
use qdm_core::{Error, Result};

#[derive(Parser)]
#[command(name = "qdm", version, about = "Lock-in NV magnetometry simulator")]
struct Cli {
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// ODMR spectra and resonance positions.
    #[command(subcommand)]
    Odmr(OdmrCommand),
    /// Coherence-decay fitting.
    #[command(subcommand)]
    Coherence(CoherenceCommand),
    /// Lock-in frame acquisition.
    #[command(subcommand)]
    Acquire(AcquireCommand),
    /// Convert a frame stack to a field or shift map.
    Demod(DemodArgs),
    /// Sensitivity maps.
    #[command(subcommand)]
    Sensitivity(SensitivityCommand),
    /// Coil transient experiment.
    #[command(subcommand)]
    Transient(TransientCommand),
    /// Complete scenario runs.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
}

#[derive(Args)]
struct ConfigArg {
    /// Scenario file; looked up in $QDM_CONFIG_DIR and the bundled set when not found.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum OdmrCommand {
    /// Fluorescence sweep around f1 as CSV (omega_hz, fluorescence).
    Sweep {
        #[arg(long, value_enum)]
        scheme: CurveArg,
        #[command(flatten)]
        config: ConfigArg,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Resonance pairs of the four axes as CSV (axis_index, f1_hz, f2_hz).
    Positions {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CurveArg {
    Sr,
    SrHf,
    DrHf,
}

#[derive(Subcommand)]
enum CoherenceCommand {
    /// Fit a Ramsey or Hahn-echo decay from a two-column CSV (tau_s, signal).
    Fit {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long = "in")]
        input: PathBuf,
        /// Ramsey drive detuning, Hz.
        #[arg(long, default_value_t = 0.0)]
        detuning_hz: f64,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Ramsey,
    Hahn,
}

#[derive(Subcommand)]
enum AcquireCommand {
    /// Simulate the scenario's sensitivity acquisition into a frame stack.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        /// Calibration output; defaults to the frame stack path with `.cal.cfg`.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DemodArgs {
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long)]
    frames: PathBuf,
    /// Calibration file written by `acquire simulate`.
    #[arg(long)]
    alpha: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Demodulate a single frame instead of averaging the stack.
    #[arg(long)]
    frame: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Field,
    Temperature,
}

#[derive(Subcommand)]
enum SensitivityCommand {
    /// Per-pixel η and η_V maps plus the ROI histogram of η.
    Map {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        hist: PathBuf,
        /// Calibration file; defaults to the frame stack path with `.cal.cfg`.
        #[arg(long)]
        alpha: Option<PathBuf>,
        /// Pixel pitch in the sensor plane, m.
        #[arg(long, default_value_t = 0.54e-6)]
        pixel_pitch: f64,
        /// NV layer thickness, m.
        #[arg(long, default_value_t = 40e-6)]
        layer_thickness: f64,
        /// ROI radius in pixels; 0.45 of the smaller side when omitted.
        #[arg(long)]
        roi_radius: Option<f64>,
    },
}

#[derive(Subcommand)]
enum TransientCommand {
    /// Run the coil transient and write the trace CSV.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Run the scenario's experiment and write its artifacts and manifest.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn scenario_for(config: &ConfigArg, fallback: Experiment, seed: Option<u64>) -> Result<Scenario> {
    let mut s = match &config.config {
        Some(path) => load_scenario(path)?,
        None => Scenario::new(fallback),
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn required_scenario(config: &ConfigArg, seed: Option<u64>) -> Result<Scenario> {
    if config.config.is_none() {
        return Err(Error::Input("--config is required".into()));
    }
    scenario_for(config, Experiment::SensitivityMap, seed)
}

fn emit(table: CsvTable, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => table.write_to(path),
        None => emit_text(&String::from_utf8_lossy(&table.into_bytes()?), None),
    }
}

fn emit_text(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(Error::Io),
    }
}

fn sibling_calibration(frames: &Path) -> PathBuf {
    frames.with_extension("cal.cfg")
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Odmr(OdmrCommand::Sweep { scheme, config, out }) => {
            let s = scenario_for(&config, Experiment::OdmrSweep, seed)?;
            let curve = match scheme {
                CurveArg::Sr => SweepCurve::Sr,
                CurveArg::SrHf => SweepCurve::SrHf,
                CurveArg::DrHf => SweepCurve::DrHf,
            };
            emit(sweep_curve_table(&s, curve)?, out.as_deref())
        }
        Command::Odmr(OdmrCommand::Positions { config, out }) => {
            let s = scenario_for(&config, Experiment::OdmrSweep, seed)?;
            let nv: NvConfiguration = s.nv_configuration()?;
            emit(positions_table(&nv)?, out.as_deref())
        }
        Command::Coherence(CoherenceCommand::Fit {
            kind,
            input,
            detuning_hz,
            out,
        }) => {
            let rows = read_numeric_csv(&input, 2)?;
            let samples: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
            let kind = match kind {
                KindArg::Ramsey => CoherenceKind::Ramsey,
                KindArg::Hahn => CoherenceKind::Hahn,
            };
            let options = FitOptions {
                detuning_hz,
                ..FitOptions::default()
            };
            let fit = fit_coherence_with(&samples, kind, &options)
                .map_err(|e| e.context(format!("fitting {}", input.display())))?;
            emit_text(&coherence_report(&fit), out.as_deref())
        }
        Command::Acquire(AcquireCommand::Simulate {
            config,
            out,
            calibration,
        }) => {
            let s = required_scenario(&config, seed)?;
            s.validate()?;
            let run = sensitivity_pipeline(&s)?;
            let (p, frames, cal) = (&run.protocol, &run.frames, &run.calibration);
            let header = FrameStackHeader {
                width: p.width as u16,
                height: p.height as u16,
                n_frames: frames.len() as u32,
                f_mod: p.f_mod,
                n_cyc: p.n_cyc,
            };
            write_frames(&out, &header, frames)?;
            let cal_path = calibration.unwrap_or_else(|| sibling_calibration(&out));
            write_atomic(&cal_path, calibration_text(cal)?.as_bytes())?;
            eprintln!(
                "wrote {} frames ({}x{}) to {} and calibration to {}",
                frames.len(),
                p.width,
                p.height,
                out.display(),
                cal_path.display()
            );
            Ok(())
        }
        Command::Demod(args) => demod(args),
        Command::Sensitivity(SensitivityCommand::Map {
            frames,
            out,
            hist,
            alpha,
            pixel_pitch,
            layer_thickness,
            roi_radius,
        }) => {
            let (header, stack) = read_frames(&frames)?;
            let cal = load_calibration(&alpha.unwrap_or_else(|| sibling_calibration(&frames)))?;
            if cal.mode != PhaseConfig::FieldMode {
                return Err(Error::Input("sensitivity maps need a field-mode calibration".into()));
            }
            let eta = eta_map(&stack, &cal, header.frame_duration())?;
            let (w, h) = (header.width as usize, header.height as usize);
            let mut roi = Roi::centered(w, h);
            if let Some(r) = roi_radius {
                roi.radius = r;
            }
            let mut map = volume_normalize(eta, pixel_pitch, layer_thickness)?;
            map.roi = roi;
            let stats = roi_statistics(&map.eta, &roi)?;
            let stats_v = roi_statistics(&map.eta_v, &roi)?;
            map_table(&map)?.write_to(&out)?;
            histogram_table(&stats.histogram, NT_PER_T)?.write_to(&hist)?;
            println!(
                "roi_pixels = {}\nroi_mean_eta_nT_per_rtHz = {:.6}\nroi_mode_eta_nT_per_rtHz = {:.6}\nroi_skewness = {:.4}\nroi_mean_etaV_nT_um15_per_rtHz = {:.6}",
                stats.pixels,
                stats.mean * NT_PER_T,
                stats.mode() * NT_PER_T,
                stats.skewness,
                stats_v.mean * NT_UM15_PER_T_M15
            );
            Ok(())
        }
        Command::Transient(TransientCommand::Run { config, out }) => {
            let s = required_scenario(&config, seed)?;
            s.validate()?;
            let setup = transient_setup(&s)?;
            let trace = run_transient_experiment(&setup)?;
            trace_table(&trace)?.write_to(&out)?;
            println!(
                "frames = {}\nnoise_std_T = {:.6e}\npeak_snr = {:.4}",
                trace.times.len(),
                trace.noise_std,
                peak_snr(&trace)
            );
            match delay_estimate(&trace, &setup.pulse) {
                Ok(d) => println!("delay_s = {d:.6e}"),
                Err(e) => eprintln!("warning: no delay estimate: {e}"),
            }
            Ok(())
        }
        Command::Scenario(ScenarioCommand::Run { config, out_dir }) => {
            let s = required_scenario(&config, seed)?;
            let report = run_scenario(&s, &out_dir)?;
            for a in &report.artifacts {
                eprintln!("wrote {}", a.display());
            }
            for (k, v) in &report.summary {
                println!("{k} = {v:.6e}");
            }
            Ok(())
        }
    }
}

fn demod(args: DemodArgs) -> Result<()> {
    let (_, stack) = read_frames(&args.frames)?;
    let cal = load_calibration(&args.alpha)?;
    let wanted = match args.mode {
        ModeArg::Field => PhaseConfig::FieldMode,
        ModeArg::Temperature => PhaseConfig::TemperatureMode,
    };
    if cal.mode != wanted {
        return Err(Error::Input(format!(
            "calibration {} was measured in {:?}, not {:?}",
            args.alpha.display(),
            cal.mode,
            wanted
        )));
    }
    let selected = match args.frame {
        Some(k) => stack
            .get(k..=k)
            .ok_or_else(|| Error::Input(format!("frame {k} out of range (stack has {})", stack.len())))?,
        None => &stack[..],
    };
    if selected.is_empty() {
        return Err(Error::Input("frame stack is empty".into()));
    }
    let mut sum = None;
    let mut large = 0;
    for f in selected {
        let d = demodulate(f, &cal)?;
        large = large.max(d.large_signal_pixels);
        sum = Some(match sum {
            None => d.values,
            Some(acc) => acc + &d.values,
        });
    }
    let mean = sum.expect("non-empty selection") / selected.len() as f64;
    if large > 0 {
        eprintln!(
            "warning: {large} pixels exceed a quarter of the modulation depth; the linear conversion underestimates them"
        );
    }
    let mut table = CsvTable::new(&["x", "y", "value"])?;
    for ((y, x), v) in mean.indexed_iter() {
        table.indexed_row(&[x, y], &[*v])?;
    }
    table.write_to(&args.out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
