use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info, warn};
use serde::Serialize;

use gridobs::distflow::{solve_distflow, DistflowOptions};
use gridobs::error::{Error, Result};
use gridobs::estimator::{Estimator, WlsOptions};
use gridobs::fixture::{generate_fixture, FixtureSpec};
use gridobs::io::{
    parse_grid, parse_measurements, parse_noise, parse_scenario, parse_thresholds, write_grid, write_json,
    EstimateFile, MeasurementFile, NoiseFile, ScenarioFile, StateFile, ThresholdsFile, FORMAT_VERSION,
};
use gridobs::noise::{DeviceConfiguration, MeasurementSampler, NoiseSpec};
use gridobs::placement::{
    evaluate_configuration, greedy_place, sensitivity_sweep, EvalOptions, PlacementOptions, SweepAxis, SweepPoint,
    Thresholds,
};
use gridobs::report::{emit_report, emit_tables, ReportFlags};

#[derive(Parser)]
#[command(name = "gridobs", version, about = "State estimation and measurement-device placement for radial grids")]
struct Cli {
    /// Master seed; overrides the seed stored in the noise file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only print warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the load flow of a scenario.
    Loadflow {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the grid state from a measurement file.
    Estimate {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte-Carlo uncertainty of one device configuration.
    EvalConfig {
        #[command(flatten)]
        inputs: Inputs,
        /// Comma-separated node ids carrying a device.
        #[arg(long, value_delimiter = ',')]
        devices: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        realizations: usize,
        /// Also write realization 1 of the measurements to this file.
        #[arg(long)]
        write_sample: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Greedy device placement.
    Place {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        search: Search,
        #[command(flatten)]
        output: Output,
    },
    /// Device count as a function of one threshold.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        noise: Option<PathBuf>,
        /// Thresholds file supplying the value of the axis that is held fixed.
        #[arg(long)]
        base_thresholds: Option<PathBuf>,
        #[command(flatten)]
        search: Search,
        #[arg(long, value_enum, default_value_t = Axis::Voltage)]
        axis: Axis,
        /// Comma-separated threshold values, ascending.
        #[arg(long, value_delimiter = ',', required = true)]
        thresholds: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the synthetic demonstration grid and matching config files.
    GenFixture {
        #[arg(long, default_value_t = 10)]
        mv: usize,
        #[arg(long, default_value_t = 75)]
        lv: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct Inputs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    /// Noise file; the fixture constants are used when omitted.
    #[arg(long)]
    noise: Option<PathBuf>,
    /// Thresholds file; 0.3 % on V^2 and 5 % of I_cap when omitted.
    #[arg(long)]
    thresholds: Option<PathBuf>,
}

#[derive(Args)]
struct Search {
    #[arg(long, default_value_t = 1000)]
    r_search: usize,
    #[arg(long, default_value_t = 20_000)]
    r_final: usize,
    #[arg(long)]
    max_devices: Option<usize>,
}

#[derive(Args)]
struct Output {
    /// JSON result file; CSV tables and the DOT graph are written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    emit_dot: bool,
    #[arg(long)]
    no_csv: bool,
}

impl Output {
    fn flags(&self) -> ReportFlags {
        ReportFlags {
            json: true,
            csv: !self.no_csv,
            dot: self.emit_dot,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Voltage,
    Current,
}

struct Loaded {
    grid: gridobs::RadialGrid,
    state: gridobs::GridState,
    spec: NoiseSpec,
    thresholds: Thresholds,
    seed: u64,
}

fn load(inputs: &Inputs, seed: Option<u64>) -> Result<Loaded> {
    let grid = parse_grid(&inputs.grid)?;
    let scenario = parse_scenario(&inputs.scenario, &grid)?;
    let noise = match &inputs.noise {
        Some(p) => parse_noise(p)?,
        None => NoiseFile {
            format_version: FORMAT_VERSION,
            spec: NoiseSpec::fixture_default(),
            master_seed: 42,
        },
    };
    let thresholds = match &inputs.thresholds {
        Some(p) => parse_thresholds(p)?,
        None => Thresholds::new(0.003, 0.05),
    };
    let state = solve_distflow(&grid, &scenario, DistflowOptions::default())?;
    Ok(Loaded {
        grid,
        state,
        spec: noise.spec,
        thresholds,
        seed: seed.unwrap_or(noise.master_seed),
    })
}

fn placement_options(search: &Search, seed: u64) -> Result<PlacementOptions> {
    if search.r_search < 2 || search.r_final < 2 {
        return Err(Error::InvalidParameter {
            element: "realizations".into(),
            reason: "r_search and r_final must be at least 2".into(),
        });
    }
    Ok(PlacementOptions {
        r_search: search.r_search,
        r_final: search.r_final,
        master_seed: seed,
        max_devices: search.max_devices,
        eval: EvalOptions::default(),
    })
}

#[derive(Serialize)]
struct SweepFile {
    format_version: u32,
    axis: SweepAxis,
    points: Vec<SweepPoint>,
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Loadflow { grid, scenario, out } => {
            let g = parse_grid(grid)?;
            let sc = parse_scenario(scenario, &g)?;
            let st = solve_distflow(&g, &sc, DistflowOptions::default())?;
            write_json(out, &StateFile::new(&g, &st))?;
            info!("wrote {}", out.display());
        }
        Command::Estimate { grid, measurements, out } => {
            let g = parse_grid(grid)?;
            let z = parse_measurements(measurements)?;
            let est = Estimator::from_set(&g, &z, WlsOptions::default())?;
            let (st, sol) = est.estimate(&z.values())?;
            info!("converged in {} iterations", sol.iterations);
            let file = EstimateFile {
                format_version: FORMAT_VERSION,
                iterations: sol.iterations,
                residual_norms: sol.residual_norms,
                v0_sq_pu: sol.state.v0_sq,
                state: StateFile::new(&g, &st),
            };
            write_json(out, &file)?;
        }
        Command::EvalConfig {
            inputs,
            devices,
            realizations,
            write_sample,
            output,
        } => {
            let l = load(inputs, cli.seed)?;
            let config = DeviceConfiguration::new(devices.iter().copied(), true);
            if let Some(path) = write_sample {
                let sampler = MeasurementSampler::new(&l.grid, &l.state, &config, &l.spec, l.seed)?;
                write_json(path, &MeasurementFile::from_set(&sampler.sample(1), Some(l.seed), Some(1)))?;
            }
            let report = evaluate_configuration(
                &l.grid,
                &l.state,
                &config,
                &l.spec,
                &l.thresholds,
                *realizations,
                l.seed,
                &EvalOptions::default(),
            )?;
            info!(
                "|J|_inf = {:e}, {} node and {} line violations",
                report.j_inf,
                report.node_violations().count(),
                report.line_violations().count()
            );
            write_json(&output.out, &report)?;
            emit_tables(&output.out, &l.grid, &report, output.flags())?;
        }
        Command::Place { inputs, search, output } => {
            let l = load(inputs, cli.seed)?;
            let opts = placement_options(search, l.seed)?;
            match greedy_place(&l.grid, &l.state, &l.spec, &l.thresholds, &opts) {
                Ok(res) => {
                    info!("placed {} devices: {:?}", res.placements.len(), res.placements);
                    emit_report(&output.out, &l.grid, &res, true, output.flags())?;
                }
                Err(Error::BudgetExhausted { result }) => {
                    warn!("device budget exhausted; writing partial result");
                    emit_report(&output.out, &l.grid, &result, false, output.flags())?;
                    return Err(Error::BudgetExhausted { result });
                }
                Err(e) => return Err(e),
            }
        }
        Command::Sweep {
            grid,
            scenario,
            noise,
            base_thresholds,
            search,
            axis,
            thresholds,
            out,
        } => {
            let inputs = Inputs {
                grid: grid.clone(),
                scenario: scenario.clone(),
                noise: noise.clone(),
                thresholds: base_thresholds.clone(),
            };
            let l = load(&inputs, cli.seed)?;
            let opts = placement_options(search, l.seed)?;
            let axis = match axis {
                Axis::Voltage => SweepAxis::Voltage,
                Axis::Current => SweepAxis::Current,
            };
            let points = sensitivity_sweep(&l.grid, &l.state, &l.spec, &l.thresholds, axis, thresholds, &opts)?;
            write_json(
                out,
                &SweepFile {
                    format_version: FORMAT_VERSION,
                    axis,
                    points,
                },
            )?;
        }
        Command::GenFixture { mv, lv, out_dir } => {
            let mut spec = FixtureSpec::new(*mv, *lv, cli.seed.unwrap_or(1));
            spec.leaf_count = FixtureSpec::default().leaf_count.min(lv.saturating_sub(1));
            let (g, sc) = generate_fixture(&spec)?;
            write_fixture(out_dir, &g, &sc)?;
            info!("wrote fixture with {} nodes to {}", g.node_count(), out_dir.display());
        }
    }
    Ok(())
}

fn write_fixture(dir: &Path, g: &gridobs::RadialGrid, sc: &gridobs::LoadingScenario) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_grid(&dir.join("grid.json"), g)?;
    write_json(&dir.join("scenario.json"), &ScenarioFile::from_scenario(sc))?;
    write_json(
        &dir.join("noise.json"),
        &NoiseFile {
            format_version: FORMAT_VERSION,
            spec: NoiseSpec::fixture_default(),
            master_seed: 42,
        },
    )?;
    write_json(
        &dir.join("thresholds.json"),
        &ThresholdsFile {
            format_version: FORMAT_VERSION,
            thresholds: Thresholds::new(0.003, 0.05),
        },
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let outcome = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(&cli)),
            Err(e) => {
                error!("cannot start thread pool: {e}");
                return ExitCode::from(1);
            }
        },
        None => run(&cli),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
