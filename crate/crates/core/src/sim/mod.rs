//! Simulation harness: synthetic scenarios, sensor streams, end-to-end runs and metrics.

pub mod metrics;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod sensors;
pub mod truth;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use metrics::{compute_ate, evaluate, Alignment, Evaluation};
pub use runner::{run_filter, run_streams, RunMode, RunRecord, RunReport, RunSetup};
pub use scenario::{FilterConfig, SimScenario, TrajectorySpec};
pub use sensors::{synthesize_sensors, true_extrinsic, SensorStreams};
pub use truth::{generate_truth, Truth};

pub(crate) const STREAM_TRUTH: u64 = 1;
pub(crate) const STREAM_LANDMARKS: u64 = 2;
pub(crate) const STREAM_ENCODER: u64 = 3;
pub(crate) const STREAM_CAMERA: u64 = 4;
pub(crate) const STREAM_GPS: u64 = 5;

/// Independent random stream per source, so changing one sensor's settings
/// leaves every other draw untouched.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulate a scenario and run one mode over it.
pub fn run_scenario(sc: &SimScenario, mode: RunMode) -> crate::Result<(RunReport, Evaluation)> {
    let truth = generate_truth(sc)?;
    let streams = synthesize_sensors(&truth, sc)?;
    let report = run_streams(&streams, &RunSetup::from_scenario(sc, mode))?;
    let eval = evaluate(&report, &truth, &true_extrinsic(sc))?;
    Ok((report, eval))
}
