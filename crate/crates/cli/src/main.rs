//! `entlink` command-line front end.
//!
//! The pipeline can run end-to-end (`run`) or staged against the same run
//! directory (`simulate` → `tomograph` → `analyze` → `fit` → `report`);
//! every stage reads the directory's persisted `scenario.toml`, so a
//! `--seed` override given at the start stays in force throughout.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid configuration or
//! arguments, 3 numeric failure.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use entlink::io::{self, files, RhoFile, RunDir};
use entlink::measures::{fit_fidelity, sideband_noise_floor, FitModel};
use entlink::pipeline;
use entlink::scenario::{json_schema, preset_names, Scenario};
use entlink::{Error, Result};

#[derive(Parser)]
#[command(
    name = "entlink",
    version,
    about = "Monte-Carlo simulator and tomography toolkit for triggered \
             entangled-photon-pair distribution over converted fiber links"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write all artifacts to a run directory.
    Run(RunArgs),
    /// Generate the detection-event streams only.
    Simulate(SimulateArgs),
    /// Measure all tomography settings and reconstruct both integration
    /// windows from an existing event stream.
    Tomograph(TomographArgs),
    /// Compute the time-resolved entanglement curve and decay averages
    /// from existing histograms.
    Analyze(AnalyzeArgs),
    /// Fit the SNR-damped oscillation model to an existing curve.
    Fit(FitArgs),
    /// Print a human-readable report of a completed run directory.
    Report(ReportArgs),
    /// List the shipped presets, or print one as a scenario TOML template.
    Preset {
        /// Preset name; omit to list all presets.
        name: Option<String>,
    },
    /// Print the JSON schema of the scenario configuration format.
    Schema,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Preset name (initial, qfc, city_loop, back_conversion) or path to a
    /// scenario TOML file.
    #[arg(long)]
    scenario: String,
    /// Number of excitation pulses to simulate.
    #[arg(long, default_value_t = 1_000_000)]
    pulses: u64,
    /// Override the scenario's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
}

impl ScenarioArgs {
    fn resolve(&self) -> Result<Scenario> {
        let mut sc = Scenario::resolve(&self.scenario)?;
        if let Some(seed) = self.seed {
            sc.master_seed = seed;
        }
        Ok(sc)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Override the temporal bin width (histogram and curve), ps.
    #[arg(long, value_name = "W")]
    bin_ps: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
}

#[derive(Args)]
struct TomographArgs {
    /// Run directory holding the event streams.
    #[arg(long)]
    out: PathBuf,
    /// Override the histogram (and curve) bin width, ps.
    #[arg(long, value_name = "W")]
    bin_ps: Option<f64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Run directory holding the histograms.
    #[arg(long)]
    out: PathBuf,
    /// Override the curve bin width, ps (must be an integer multiple of
    /// the histogram binning).
    #[arg(long, value_name = "W")]
    bin_ps: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    /// Run directory holding the curve.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum WindowArg {
    /// Zero-delay window (default 8 ps).
    #[value(name = "zero8ps")]
    Zero8ps,
    /// Full repetition period.
    #[value(name = "full")]
    Full,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory to report on.
    #[arg(long)]
    out: PathBuf,
    /// Restrict the density-matrix tables to one integration window
    /// (default: both).
    #[arg(long, value_enum)]
    window: Option<WindowArg>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Tomograph(args) => cmd_tomograph(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Report(args) => cmd_report(args),
        Command::Preset { name } => cmd_preset(name),
        Command::Schema => {
            println!("{:#}", json_schema());
            Ok(())
        }
    }
}

fn apply_bin_override(sc: &mut Scenario, bin_ps: Option<f64>, histogram_too: bool) {
    if let Some(w) = bin_ps {
        if histogram_too {
            sc.tomography.bin_width_ps = w;
        }
        sc.analysis.curve_bin_width_ps = w;
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut sc = args.scenario.resolve()?;
    apply_bin_override(&mut sc, args.bin_ps, true);
    sc.validate()?;
    let t0 = Instant::now();
    let out = pipeline::run(&sc, args.scenario.pulses)?;
    let manifest = io::write_run_artifacts(&args.scenario.out, &out, t0.elapsed().as_secs_f64())?;
    print!("{}", out.summary());
    println!(
        "wall time           : {:.1} s",
        manifest.wall_time_s
    );
    println!(
        "artifacts           : {} files in {}",
        manifest.artifacts.len() + 1, // + the manifest itself
        args.scenario.out.display()
    );
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let sc = args.scenario.resolve()?;
    sc.validate()?;
    let t0 = Instant::now();
    let streams = pipeline::simulate(&sc, args.scenario.pulses)?;
    let mut rd = RunDir::create(&args.scenario.out, &sc, args.scenario.pulses)?;
    io::save_streams(&mut rd, &sc, &streams)?;
    rd.finish(t0.elapsed().as_secs_f64())?;
    println!(
        "simulated {} pulses of scenario '{}' (master seed {})",
        streams.n_pulses, sc.name, sc.master_seed
    );
    println!(
        "singles XX / X      : {} / {}  ({:.1} / {:.1} kHz)",
        streams.records_xx.len(),
        streams.records_x.len(),
        streams.records_xx.len() as f64 / streams.duration_s / 1e3,
        streams.records_x.len() as f64 / streams.duration_s / 1e3
    );
    println!("events written to {}", args.scenario.out.display());
    Ok(())
}

/// Load the configuration a run directory was created from.
fn persisted_scenario(rd: &RunDir) -> Result<Scenario> {
    Scenario::load(&rd.path(files::SCENARIO))
}

/// Path of an artifact an earlier stage must have produced.
fn require_artifact(rd: &RunDir, name: &str, produced_by: &str) -> Result<PathBuf> {
    let path = rd.path(name);
    if !path.exists() {
        return Err(Error::invalid(format!(
            "incomplete run directory: missing {name} (run `{produced_by}` first)"
        )));
    }
    Ok(path)
}

fn cmd_tomograph(args: TomographArgs) -> Result<()> {
    let mut rd = RunDir::open(&args.out)?;
    let mut sc = persisted_scenario(&rd)?;
    apply_bin_override(&mut sc, args.bin_ps, true);
    sc.validate()?;
    require_artifact(&rd, files::EVENTS_XX, "simulate")?;
    require_artifact(&rd, files::EVENTS_X, "simulate")?;
    let streams = io::load_streams(&rd, &sc)?;
    let t0 = Instant::now();
    let tomo = pipeline::tomograph(&sc, &streams)?;
    io::save_tomography(&mut rd, &sc, &tomo)?;
    rd.finish(t0.elapsed().as_secs_f64())?;
    let phi_plus = entlink::qmath::bell_state(entlink::qmath::BellState::PhiPlus);
    println!(
        "reconstructed both windows from {} settings ({} total coincidences)",
        tomo.histograms.len(),
        tomo.histograms.iter().map(|h| h.total()).sum::<f64>()
    );
    println!(
        "F(phi+) {:>5.1} ps window : {:.4}",
        tomo.zero_window_ps,
        entlink::qmath::fidelity_to_state(&tomo.rho_zero.rho, &phi_plus)
    );
    println!(
        "F(phi+) full period      : {:.4}",
        entlink::qmath::fidelity_to_state(&tomo.rho_full.rho, &phi_plus)
    );
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let mut rd = RunDir::open(&args.out)?;
    let mut sc = persisted_scenario(&rd)?;
    apply_bin_override(&mut sc, args.bin_ps, false);
    let hf: io::HistogramsFile =
        io::read_json(&require_artifact(&rd, files::HISTOGRAMS, "tomograph")?)?;
    let frame = hf.frame_matrices();
    let t0 = Instant::now();
    let analysis = pipeline::analyze(&sc, &hf.histograms, frame.as_ref())?;
    io::save_analysis(&mut rd, &analysis)?;
    rd.finish(t0.elapsed().as_secs_f64())?;
    println!(
        "curve: {} valid bins at {:.1} ps",
        analysis.curve.len(),
        sc.analysis.curve_bin_width_ps
    );
    println!("max F(phi+) on curve     : {:.4}", analysis.max_f_phi_plus);
    println!("decay-avg F(phi+)        : {:.4}", analysis.avg_f_phi_plus);
    println!("decay-avg concurrence    : {:.4}", analysis.avg_concurrence);
    if let Some(fit) = &analysis.fit {
        print_fit(fit);
    }
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let mut rd = RunDir::open(&args.out)?;
    let curve_path = require_artifact(&rd, files::CURVE, "analyze")?;
    let curve = io::read_curve_csv(std::io::BufReader::new(std::fs::File::open(&curve_path)?))?;
    let hf: io::HistogramsFile =
        io::read_json(&require_artifact(&rd, files::HISTOGRAMS, "tomograph")?)?;
    let sc = persisted_scenario(&rd)?;
    let t0 = Instant::now();
    let floor = sideband_noise_floor(&hf.histograms, sc.analysis.curve_bin_width_ps)?;
    let fit = fit_fidelity(&curve, floor)?;
    rd.save(files::FIT_REPORT, &io::to_json_pretty(&fit)?)?;
    rd.finish(t0.elapsed().as_secs_f64())?;
    print_fit(&fit);
    Ok(())
}

fn print_fit(fit: &FitModel) {
    println!(
        "fit: s = {:.1}±{:.1}, FSS = {:.4}±{:.4} ueV, T1 = {:.1}±{:.1} ps, v = {:.4}±{:.4} (chi2/dof = {:.3}, converged = {})",
        fit.signal_amplitude,
        fit.sigma_signal_amplitude,
        fit.fss_fit_uev,
        fit.sigma_fss_uev,
        fit.t1_fit_ps,
        fit.sigma_t1_ps,
        fit.visibility,
        fit.sigma_visibility,
        fit.chi2_per_dof,
        fit.converged
    );
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let rd = RunDir::open(&args.out)?;

    let summary_path = rd.path(files::SUMMARY_TXT);
    if summary_path.exists() {
        print!("{}", std::fs::read_to_string(&summary_path)?);
    } else {
        println!(
            "scenario            : {} (master seed {}, {} pulses)",
            rd.manifest.scenario_name, rd.manifest.master_seed, rd.manifest.n_pulses
        );
    }

    let windows: &[(&str, &str)] = match args.window {
        Some(WindowArg::Zero8ps) => &[(files::RHO_ZERO_JSON, files::RHO_ZERO_CSV)],
        Some(WindowArg::Full) => &[(files::RHO_FULL_JSON, files::RHO_FULL_CSV)],
        None => &[
            (files::RHO_ZERO_JSON, files::RHO_ZERO_CSV),
            (files::RHO_FULL_JSON, files::RHO_FULL_CSV),
        ],
    };
    for (json_name, csv_name) in windows {
        let rho: RhoFile = io::read_json(&require_artifact(&rd, json_name, "tomograph")?)?;
        print_rho_tables(&rho);
        println!("matrix bar values: {}", rd.path(csv_name).display());
    }

    let curve_path = require_artifact(&rd, files::CURVE, "analyze")?;
    let curve = io::read_curve_csv(std::io::BufReader::new(std::fs::File::open(&curve_path)?))?;
    println!();
    println!(
        "entanglement curve: {} valid bins, F(phi+) range [{:.4}, {:.4}]",
        curve.len(),
        curve.f_phi_plus.iter().cloned().fold(f64::INFINITY, f64::min),
        curve.f_phi_plus.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    println!("curve dataset: {}", curve_path.display());

    let fit_path = rd.path(files::FIT_REPORT);
    if fit_path.exists() {
        let fit: FitModel = io::read_json(&fit_path)?;
        print_fit(&fit);
    }
    Ok(())
}

fn print_rho_tables(rho: &RhoFile) {
    println!();
    println!(
        "window '{}' [{:.3}, {:.3}) ps — F(phi+) {:.4}, F(phi-) {:.4}, F(psi+) {:.4}, F(psi-) {:.4}, C {:.4}, purity {:.4}",
        rho.window_label,
        rho.window_start_ps,
        rho.window_start_ps + rho.window_width_ps,
        rho.f_phi_plus,
        rho.f_phi_minus,
        rho.f_psi_plus,
        rho.f_psi_minus,
        rho.concurrence,
        rho.purity
    );
    for (name, table) in [("Re(rho)", &rho.re), ("Im(rho)", &rho.im)] {
        println!("{name}:");
        print!("      ");
        for label in io::BASIS_LABELS {
            print!("{label:>9}");
        }
        println!();
        for r in 0..4 {
            print!("  {:<4}", io::BASIS_LABELS[r]);
            for c in 0..4 {
                print!("{:>9.4}", table[r][c]);
            }
            println!();
        }
    }
}

fn cmd_preset(name: Option<String>) -> Result<()> {
    match name {
        None => {
            for n in preset_names() {
                println!("{n}");
            }
        }
        Some(n) => {
            let sc = entlink::scenario::preset(&n)?;
            print!("{}", sc.to_toml()?);
        }
    }
    Ok(())
}
