//! Chaotic-system simulation and synthetic dataset generation.
//!
//! Two three-dimensional flows are built in — the Lorenz system and the
//! Rössler system — integrated with classical fixed-step RK4. Observations
//! are produced by adding i.i.d. Gaussian measurement noise to the true
//! states; both are kept, so experiments can train on noisy observations
//! while scoring recall or forecasts against the clean dynamics.
//!
//! [`build_synthetic_suite`] materializes the benchmark datasets (three
//! systems crossed with six noise levels) as CSV plus a JSON sidecar, and is
//! deterministic: the same seed yields byte-identical files.

use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rng;
use crate::Result;

/// A three-dimensional autonomous ODE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "snake_case")]
pub enum OdeSystem {
    /// Lorenz system: `dx = sigma (y - x)`, `dy = x (rho - z) - y`,
    /// `dz = x y - beta z`.
    Lorenz { sigma: f64, rho: f64, beta: f64 },
    /// Rössler system: `dx = -y - z`, `dy = x + a y`, `dz = b + z (x - c)`.
    Rossler { a: f64, b: f64, c: f64 },
}

impl OdeSystem {
    /// Right-hand side of the flow at `state`.
    pub fn rhs(&self, state: [f64; 3]) -> [f64; 3] {
        let [x, y, z] = state;
        match *self {
            OdeSystem::Lorenz { sigma, rho, beta } => {
                [sigma * (y - x), x * (rho - z) - y, x * y - beta * z]
            }
            OdeSystem::Rossler { a, b, c } => [-y - z, x + a * y, b + z * (x - c)],
        }
    }

    /// Short machine name used in dataset files.
    pub fn family(&self) -> &'static str {
        match self {
            OdeSystem::Lorenz { .. } => "lorenz",
            OdeSystem::Rossler { .. } => "rossler",
        }
    }
}

/// Lorenz in the classic chaotic regime, with its standard initial
/// condition.
pub fn lorenz_chaotic() -> (OdeSystem, [f64; 3]) {
    (OdeSystem::Lorenz { sigma: 10.0, rho: 28.0, beta: 2.667 }, [0.0, 1.0, 1.05])
}

/// Lorenz below the chaotic threshold (`rho = 9`): trajectories spiral into
/// a fixed point.
pub fn lorenz_stable() -> (OdeSystem, [f64; 3]) {
    (OdeSystem::Lorenz { sigma: 10.0, rho: 9.0, beta: 2.667 }, [10.0, 10.0, 10.0])
}

/// Rössler with the standard chaotic parameters.
pub fn rossler_standard() -> (OdeSystem, [f64; 3]) {
    (OdeSystem::Rossler { a: 0.2, b: 0.2, c: 5.7 }, [1.0, 1.0, 1.0])
}

/// A simulated orbit: `times[i]` is `i * dt`, `states[i]` the state at that
/// time. `states[0]` is the initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<[f64; 3]>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// One coordinate of every state as a scalar series.
    pub fn coordinate(&self, axis: usize) -> Vec<f64> {
        assert!(axis < 3, "coordinate axis must be 0..3, got {axis}");
        self.states.iter().map(|s| s[axis]).collect()
    }
}

/// Integrate `system` from `x0` with classical fourth-order Runge-Kutta at
/// fixed step `dt`, returning `n_steps` samples (the initial condition plus
/// `n_steps - 1` steps).
///
/// Fails with the offending step index if the state leaves the finite range
/// (e.g. a step size far too large for the dynamics), and rejects
/// non-positive/non-finite `dt`, zero `n_steps`, or a non-finite `x0`.
pub fn integrate_rk4(
    system: OdeSystem,
    x0: [f64; 3],
    dt: f64,
    n_steps: usize,
) -> Result<Trajectory> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidConfig(format!("integration step dt must be positive, got {dt}")));
    }
    if n_steps == 0 {
        return Err(Error::InvalidConfig("n_steps must be at least 1".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig(format!("initial state must be finite, got {x0:?}")));
    }
    let mut states = Vec::with_capacity(n_steps);
    let mut times = Vec::with_capacity(n_steps);
    let mut x = x0;
    states.push(x);
    times.push(0.0);
    for step in 1..n_steps {
        x = rk4_step(system, x, dt);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "integration diverged at step {step} (t = {})",
                step as f64 * dt
            )));
        }
        states.push(x);
        times.push(step as f64 * dt);
    }
    Ok(Trajectory { times, states })
}

fn rk4_step(system: OdeSystem, x: [f64; 3], dt: f64) -> [f64; 3] {
    let k1 = system.rhs(x);
    let k2 = system.rhs(axpy(x, 0.5 * dt, k1));
    let k3 = system.rhs(axpy(x, 0.5 * dt, k2));
    let k4 = system.rhs(axpy(x, dt, k3));
    let mut out = x;
    for i in 0..3 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn axpy(x: [f64; 3], a: f64, y: [f64; 3]) -> [f64; 3] {
    [x[0] + a * y[0], x[1] + a * y[1], x[2] + a * y[2]]
}

/// Add i.i.d. Gaussian measurement noise `N(0, sigma^2)` to every coordinate
/// of every state. `sigma = 0` returns the states unchanged (bit for bit).
pub fn add_noise(
    states: &[[f64; 3]],
    sigma: f64,
    rng: &mut rng::ChaCha8Rng,
) -> Result<Vec<[f64; 3]>> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(states.to_vec());
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidConfig(format!("noise distribution: {e}")))?;
    Ok(states
        .iter()
        .map(|s| {
            let mut o = *s;
            for v in &mut o {
                *v += normal.sample(rng);
            }
            o
        })
        .collect())
}

/// Default noise grid for the benchmark suite.
pub const NOISE_LEVELS: [f64; 6] = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5];

/// Default number of samples per trajectory.
pub const DEFAULT_STEPS: usize = 10_000;

/// Default integration step.
pub const DEFAULT_DT: f64 = 0.01;

/// Sidecar metadata written next to each dataset CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(flatten)]
    pub system: OdeSystem,
    pub initial: [f64; 3],
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub sigma_noise: f64,
    pub split: SplitSizes,
}

/// Sequential train/validation/test partition sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    /// Standard 0.7 / 0.1 / 0.2 sequential split.
    pub fn standard(n: usize) -> Self {
        let train = (n as f64 * 0.7).floor() as usize;
        let val = (n as f64 * 0.8).floor() as usize - train;
        SplitSizes { train, val, test: n - train - val }
    }
}

/// One generated dataset, in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub meta: DatasetMeta,
    pub trajectory: Trajectory,
    /// States plus measurement noise; equal to the states when
    /// `sigma_noise` is zero.
    pub observations: Vec<[f64; 3]>,
}

/// Generate one named dataset. The noise stream is derived from
/// `(seed, name)`, so each dataset is reproducible in isolation.
pub fn make_dataset(
    name: &str,
    system: OdeSystem,
    initial: [f64; 3],
    sigma: f64,
    dt: f64,
    n_steps: usize,
    seed: u64,
) -> Result<Dataset> {
    let trajectory = integrate_rk4(system, initial, dt, n_steps)?;
    let mut noise_rng = rng::stream(seed, &format!("noise/{name}"));
    let observations = add_noise(&trajectory.states, sigma, &mut noise_rng)?;
    Ok(Dataset {
        name: name.to_string(),
        meta: DatasetMeta {
            system,
            initial,
            dt,
            n_steps,
            seed,
            sigma_noise: sigma,
            split: SplitSizes::standard(n_steps),
        },
        trajectory,
        observations,
    })
}

/// The benchmark grid: chaotic Lorenz, stable Lorenz, and Rössler, each at
/// every noise level. Returns `(name, system, initial, sigma)` rows.
pub fn default_suite() -> Vec<(String, OdeSystem, [f64; 3], f64)> {
    let systems = [
        ("lorenz_chaotic", lorenz_chaotic()),
        ("lorenz_stable", lorenz_stable()),
        ("rossler", rossler_standard()),
    ];
    let mut out = Vec::new();
    for (base, (system, initial)) in systems {
        for sigma in NOISE_LEVELS {
            out.push((format!("{base}_sigma{sigma:.1}"), system, initial, sigma));
        }
    }
    out
}

/// Files written for one dataset.
#[derive(Debug, Clone)]
pub struct DatasetFiles {
    /// Noisy observations, `t,ch0,ch1,ch2`.
    pub observations: PathBuf,
    /// Ground-truth states, same schema.
    pub states: PathBuf,
    /// JSON metadata sidecar.
    pub meta: PathBuf,
}

/// Write a dataset under `dir` as `<name>.csv` (observations),
/// `<name>.states.csv` (ground truth), and `<name>.json` (metadata). All
/// writes are atomic, and numbers are printed in shortest round-trip form so
/// regeneration is byte-identical.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<DatasetFiles> {
    let files = DatasetFiles {
        observations: dir.join(format!("{}.csv", dataset.name)),
        states: dir.join(format!("{}.states.csv", dataset.name)),
        meta: dir.join(format!("{}.json", dataset.name)),
    };
    crate::ioutil::atomic_write(
        &files.observations,
        series_csv(&dataset.trajectory.times, &dataset.observations).as_bytes(),
    )?;
    crate::ioutil::atomic_write(
        &files.states,
        series_csv(&dataset.trajectory.times, &dataset.trajectory.states).as_bytes(),
    )?;
    let mut meta = serde_json::to_vec_pretty(&dataset.meta)
        .map_err(|e| Error::InvalidConfig(format!("metadata serialization: {e}")))?;
    meta.push(b'\n');
    crate::ioutil::atomic_write(&files.meta, &meta)?;
    Ok(files)
}

fn series_csv(times: &[f64], rows: &[[f64; 3]]) -> String {
    let mut out = String::with_capacity(rows.len() * 32);
    out.push_str("t,ch0,ch1,ch2\n");
    for (t, row) in times.iter().zip(rows) {
        out.push_str(&format!("{t},{},{},{}\n", row[0], row[1], row[2]));
    }
    out
}

/// Generate and write the full benchmark suite under `dir`, returning the
/// datasets in generation order. Deterministic in `seed`.
pub fn build_synthetic_suite(
    dir: &Path,
    seed: u64,
    dt: f64,
    n_steps: usize,
) -> Result<Vec<Dataset>> {
    let mut out = Vec::new();
    for (name, system, initial, sigma) in default_suite() {
        let ds = make_dataset(&name, system, initial, sigma, dt, n_steps, seed)?;
        write_dataset(dir, &ds)?;
        out.push(ds);
    }
    Ok(out)
}
