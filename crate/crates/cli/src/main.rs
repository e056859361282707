use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gvwo_core::geometry::{EulerAxis, EulerZYX};
use gvwo_core::io::{read_trajectory_path, write_trajectory_path};
use gvwo_core::observability::{
    lie_gradients, random_system, rank_report, riccati_closed_form, riccati_simulate,
};
use gvwo_core::sim::report::write_report;
use gvwo_core::sim::sensors::{SCENARIO_FILE, TRUTH_FILE};
use gvwo_core::sim::{
    compute_ate, evaluate, generate_truth, run_streams, synthesize_sensors, true_extrinsic,
    Alignment, RunMode, RunSetup, SensorStreams, SimScenario, Truth,
};
use gvwo_core::state::ExtrinsicMode;
use gvwo_core::vision::CameraExtrinsics;
use gvwo_core::wheel::OdomNoise;
use nalgebra::{Matrix3, Vector3};

/// GPS-aided visual-wheel odometry: simulation, filtering and analysis tools.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate ground truth and sensor CSVs from a scenario file.
    Simulate {
        /// Scenario TOML; built-in defaults when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Output directory for encoder.csv, features.csv, gps.csv, truth.csv.
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario duration, seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Run the filter and write records.csv, summary.toml and trajectory.csv.
    Run(RunArgs),
    /// Observability checks.
    #[command(subcommand)]
    Obs(ObsCommand),
    /// ATE between two trajectory CSVs (`t,x,y,z,qw,qx,qy,qz`).
    Ate {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// `none` or `se3`.
        #[arg(long, default_value = "none")]
        align: Alignment,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Simulate this scenario in memory and run on it.
    #[arg(long, conflicts_with = "data")]
    scenario: Option<PathBuf>,
    /// Play back CSVs from this directory. A scenario.toml there supplies the
    /// mounting and filter settings; a truth.csv enables error metrics.
    #[arg(long)]
    data: Option<PathBuf>,
    /// vwo | gps-vwo-fixed | gps-vwo (= gps-vwo-1dof-yaw) | gps-vwo-1dof-{yaw,pitch,roll} | gps-vwo-3dof
    #[arg(long, default_value = "gps-vwo")]
    mode: RunMode,
    #[arg(long)]
    out: PathBuf,
    /// Initial extrinsic error added to the true angles, degrees `yaw,pitch,roll` (simulation only).
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
    perturb: Option<[f64; 3]>,
    /// Initial extrinsic angles, degrees `yaw,pitch,roll` (playback without scenario.toml).
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true, default_value = "0,0,0")]
    extrinsic: [f64; 3],
    /// `^Ep_V`, meters (playback without scenario.toml).
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true, default_value = "0,0,0")]
    p_v: [f64; 3],
    /// Camera optical center in the odometer frame, meters (playback without scenario.toml).
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true, default_value = "0,0,0")]
    camera: [f64; 3],
    #[command(flatten)]
    noise: NoiseArgs,
}

/// Odometer noise assumed by the filter.
#[derive(Args)]
struct NoiseArgs {
    /// Left tick noise, ticks per sample.
    #[arg(long, default_value_t = 0.01)]
    sigma_nl: f64,
    /// Right tick noise, ticks per sample.
    #[arg(long, default_value_t = 0.01)]
    sigma_nr: f64,
    /// Roll-rate noise, rad/s.
    #[arg(long, default_value_t = 0.01)]
    sigma_wx: f64,
    /// Pitch-rate noise, rad/s.
    #[arg(long, default_value_t = 0.01)]
    sigma_wy: f64,
    /// Lateral velocity noise, m/s.
    #[arg(long, default_value_t = 0.1)]
    sigma_vy: f64,
    /// Vertical velocity noise, m/s.
    #[arg(long, default_value_t = 0.01)]
    sigma_vz: f64,
}

impl NoiseArgs {
    fn odom(&self) -> OdomNoise {
        OdomNoise {
            sigma_nl: self.sigma_nl,
            sigma_nr: self.sigma_nr,
            sigma_wx: self.sigma_wx,
            sigma_wy: self.sigma_wy,
            sigma_vy: self.sigma_vy,
            sigma_vz: self.sigma_vz,
        }
    }
}

#[derive(Subcommand)]
enum ObsCommand {
    /// Rank of the observability matrix over random states.
    Rank {
        /// 1dof-yaw | 1dof-pitch | 1dof-roll | 3dof
        #[arg(long, default_value = "3dof")]
        mode: String,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Integrate the straight-line Riccati system and write the diagonals.
    Riccati {
        #[arg(long, default_value_t = 3.0)]
        vx: f64,
        #[arg(long, default_value_t = 4.0)]
        vy: f64,
        #[arg(long, default_value_t = 60.0)]
        t_end: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        /// CSV `t,p11,p22,p33`; summary only when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_triple(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into()
        .map_err(|v: Vec<f64>| format!("expected 3 comma-separated values, got {}", v.len()))
}

fn load_scenario(path: Option<&Path>) -> Result<SimScenario> {
    match path {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(SimScenario::from_toml(&text)?)
        }
        None => Ok(SimScenario::default()),
    }
}

fn simulate(
    scenario: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    duration: Option<f64>,
) -> Result<()> {
    let mut sc = load_scenario(scenario)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    if let Some(d) = duration {
        sc.duration = d;
    }
    sc.validate()?;
    let truth = generate_truth(&sc)?;
    let streams = synthesize_sensors(&truth, &sc)?;
    streams.write_dir(out)?;
    write_trajectory_path(&out.join(TRUTH_FILE), &truth.trajectory())?;
    std::fs::write(out.join(SCENARIO_FILE), sc.to_toml())?;
    for w in &streams.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{} encoder samples, {} frames, {} GPS fixes, path {:.1} m -> {}",
        streams.encoder.len(),
        streams.frames.len(),
        streams.gps.len(),
        truth.path_length(),
        out.display()
    );
    Ok(())
}

fn run(a: &RunArgs) -> Result<()> {
    let (streams, setup, truth, sc) = if let Some(dir) = &a.data {
        let streams = SensorStreams::read_dir(dir)?;
        let sc_path = dir.join(SCENARIO_FILE);
        let sc = if sc_path.exists() {
            Some(load_scenario(Some(&sc_path))?)
        } else {
            None
        };
        let mut setup = match &sc {
            Some(sc) => {
                let mut sc = sc.clone();
                if let Some(p) = &a.perturb {
                    sc.initial_perturbation_deg = *p;
                }
                RunSetup::from_scenario(&sc, a.mode)
            }
            None => RunSetup {
                mode: a.mode,
                filter: Default::default(),
                camera: CameraExtrinsics::forward_facing(Vector3::new(
                    a.camera[0],
                    a.camera[1],
                    a.camera[2],
                )),
                initial_angles: EulerZYX::from_degrees(
                    a.extrinsic[0],
                    a.extrinsic[1],
                    a.extrinsic[2],
                ),
                p_v_in_e: Vector3::new(a.p_v[0], a.p_v[1], a.p_v[2]),
                lever_arm: Vector3::zeros(),
            },
        };
        setup.filter.odom_noise = a.noise.odom();
        let truth_path = dir.join(TRUTH_FILE);
        let truth = if truth_path.exists() && sc.is_some() {
            Some(Truth::from_trajectory(&read_trajectory_path(&truth_path)?)?)
        } else {
            None
        };
        (streams, setup, truth, sc)
    } else {
        let mut sc = load_scenario(a.scenario.as_deref())?;
        if let Some(p) = &a.perturb {
            sc.initial_perturbation_deg = *p;
        }
        let truth = generate_truth(&sc)?;
        let streams = synthesize_sensors(&truth, &sc)?;
        let mut setup = RunSetup::from_scenario(&sc, a.mode);
        setup.filter.odom_noise = a.noise.odom();
        (streams, setup, Some(truth), Some(sc))
    };
    let report = run_streams(&streams, &setup)?;
    let eval = match (&truth, &sc) {
        (Some(t), Some(sc)) => Some(evaluate(&report, t, &true_extrinsic(sc))?),
        _ => None,
    };
    write_report(&a.out, &report, eval.as_ref())?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let [y, p, r] = report.final_extrinsic.angles().to_degrees();
    println!(
        "mode {}: {} records, final extrinsic ({y:.3}, {p:.3}, {r:.3}) deg",
        report.mode,
        report.records.len()
    );
    if let Some(e) = &eval {
        let [ey, ep, er] = e.final_extrinsic_error().map(f64::to_degrees);
        println!(
            "ATE {:.3} m, final extrinsic error ({ey:.3}, {ep:.3}, {er:.3}) deg",
            e.ate
        );
    }
    Ok(())
}

fn obs_rank(mode: &str, samples: usize, seed: u64) -> Result<()> {
    let mode = match mode {
        "3dof" => ExtrinsicMode::ThreeDof,
        "1dof-yaw" => ExtrinsicMode::OneDof(EulerAxis::Yaw),
        "1dof-pitch" => ExtrinsicMode::OneDof(EulerAxis::Pitch),
        "1dof-roll" => ExtrinsicMode::OneDof(EulerAxis::Roll),
        other => bail!("unknown mode {other:?}"),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = CameraExtrinsics::forward_facing(Vector3::new(1.5, 0.0, 1.4));
    println!(
        "sample,full_rank,nullspace_dim,rotation_rank,rotation_rank_strict,translation_rank,y_norm"
    );
    for k in 0..samples {
        let sys = random_system(&mut rng, mode, camera);
        let rep = rank_report(&lie_gradients(&sys)?);
        println!(
            "{k},{},{},{},{},{},{:.6e}",
            rep.full_rank,
            rep.nullspace_dim,
            rep.rotation_rank,
            rep.rotation_rank_strict,
            rep.translation_rank,
            rep.y_norm
        );
    }
    Ok(())
}

fn obs_riccati(vx: f64, vy: f64, t_end: f64, dt: f64, out: Option<&Path>) -> Result<()> {
    let p0 = Matrix3::identity();
    let trace = riccati_simulate(vx, vy, &p0, t_end, dt)?;
    if let Some(path) = out {
        let mut text = String::from("t,p11,p22,p33\n");
        for (t, d) in trace.t.iter().zip(&trace.diag) {
            text.push_str(&format!("{t},{},{},{}\n", d[0], d[1], d[2]));
        }
        std::fs::write(path, text)?;
    }
    let f = trace.final_cov;
    println!(
        "final diagonal ({:.6e}, {:.6e}, {:.6e})",
        f[(0, 0)],
        f[(1, 1)],
        f[(2, 2)]
    );
    if let Some(c) = riccati_closed_form(vx, vy, &p0, t_end) {
        println!(
            "closed form    ({:.6e}, {:.6e}, {:.6e})",
            c[(0, 0)],
            c[(1, 1)],
            c[(2, 2)]
        );
    }
    println!("max asymmetry {:.3e}", trace.max_asymmetry);
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate {
            scenario,
            out,
            seed,
            duration,
        } => simulate(scenario.as_deref(), &out, seed, duration),
        Command::Run(a) => run(&a),
        Command::Obs(ObsCommand::Rank {
            mode,
            samples,
            seed,
        }) => obs_rank(&mode, samples, seed),
        Command::Obs(ObsCommand::Riccati {
            vx,
            vy,
            t_end,
            dt,
            out,
        }) => obs_riccati(vx, vy, t_end, dt, out.as_deref()),
        Command::Ate { est, truth, align } => {
            let ate = compute_ate(
                &read_trajectory_path(&est)?,
                &read_trajectory_path(&truth)?,
                align,
            )?;
            println!("{ate:.6}");
            Ok(())
        }
    }
}
