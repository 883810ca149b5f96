use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::rig::{CameraConfig, Observation, Rig};
use crate::control::{replay_trajectory, MAX_CURRENT_A};
use crate::error::{Error, Result};
use crate::metrics::{format_length, repeatability, Trajectory};
use crate::plant::PlantParams;

/// Zero-mean Gaussian current noise added to each axis on every tick, after
/// DAC quantization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurrentNoise {
    pub std_a: f64,
    pub seed: u64,
}

pub(crate) struct NoiseSource {
    rng: ChaCha8Rng,
    dist: Normal<f64>,
}

impl NoiseSource {
    pub(crate) fn new(noise: &CurrentNoise) -> Result<Self> {
        let dist = Normal::new(0.0, noise.std_a).map_err(|e| Error::Config(format!("current noise: {e}")))?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(noise.seed),
            dist,
        })
    }

    pub(crate) fn perturb(&mut self, amps: [f64; 2]) -> [f64; 2] {
        let mut out = amps;
        for a in &mut out {
            *a = (*a + self.dist.sample(&mut self.rng)).clamp(-MAX_CURRENT_A, MAX_CURRENT_A);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatabilityConfig {
    pub passes: u32,
    pub rate_hz: f64,
    pub noise: Option<CurrentNoise>,
    pub camera: CameraConfig,
    pub observation: Observation,
    pub seed: u64,
}

impl Default for RepeatabilityConfig {
    fn default() -> Self {
        Self {
            passes: 10,
            rate_hz: 1.0,
            noise: None,
            camera: CameraConfig::high_speed(),
            observation: Observation::Camera,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassSummary {
    pub pass: u32,
    pub rmse_mm: f64,
    pub max_error_mm: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatabilityRun {
    pub passes: u32,
    pub rate_hz: f64,
    pub duration_s: f64,
    /// SHA-256 over the commanded levels of the whole run.
    pub command_digest: String,
    /// Passes 2..n scored against pass 1.
    pub per_pass: Vec<PassSummary>,
    pub mean_rmse_mm: f64,
    pub std_rmse_mm: f64,
}

impl RepeatabilityRun {
    pub fn table(&self) -> String {
        let mut s = String::from("pass        RMSE         max\n");
        for p in &self.per_pass {
            s += &format!(
                "{:>4} {:>11} {:>11}\n",
                p.pass,
                format_length(p.rmse_mm),
                format_length(p.max_error_mm)
            );
        }
        s += &format!(
            "mean {} ± {} over {} passes at {} Hz\n",
            format_length(self.mean_rmse_mm),
            format_length(self.std_rmse_mm),
            self.passes,
            self.rate_hz
        );
        s
    }
}

/// Replay `traj` open loop, film it and score passes 2..n against pass 1.
pub fn run_repeatability(
    traj: &Trajectory,
    params: &PlantParams,
    cfg: &RepeatabilityConfig,
) -> Result<(RepeatabilityRun, Vec<Trajectory>)> {
    if cfg.passes < 2 {
        return Err(Error::Validation(format!("repeatability needs ≥ 2 passes, got {}", cfg.passes)));
    }
    let stream = replay_trajectory(traj, cfg.passes, cfg.rate_hz, params)?;
    let per_pass_ticks = stream.pass_commands().len() as u64;
    let mut rig = Rig::new(params.clone(), cfg.camera.clone(), cfg.observation, cfg.seed)?;
    let mut noise = cfg.noise.as_ref().map(NoiseSource::new).transpose()?;
    let mut passes = vec![Trajectory::new(); cfg.passes as usize];
    let mut digest = Sha256::new();
    let mut total = 0u64;
    for c in stream {
        digest.update(c.level_x.to_le_bytes());
        digest.update(c.level_y.to_le_bytes());
        let amps = match noise.as_mut() {
            Some(n) => n.perturb(c.amps()),
            None => c.amps(),
        };
        let pass = (rig.tick() / per_pass_ticks) as usize;
        if let Some(obs) = rig.step(amps)? {
            obs.append_to(&mut passes[pass])?;
        }
        total += 1;
    }
    let r = repeatability(&passes)?;
    let per_pass = r
        .passes
        .iter()
        .enumerate()
        .map(|(i, e)| PassSummary {
            pass: i as u32 + 2,
            rmse_mm: e.rmse_mm,
            max_error_mm: e.max_error_mm,
            n_samples: e.n_samples,
        })
        .collect();
    let run = RepeatabilityRun {
        passes: cfg.passes,
        rate_hz: cfg.rate_hz,
        duration_s: total as f64 / crate::CONTROL_RATE_HZ,
        command_digest: hex::encode(digest.finalize()),
        per_pass,
        mean_rmse_mm: r.mean_rmse_mm,
        std_rmse_mm: r.std_rmse_mm,
    };
    Ok((run, passes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::figure_eight;

    #[test]
    fn two_noiseless_passes_share_the_command_stream() {
        let eight = figure_eight(1.5, 3.0, 1000).unwrap();
        let cfg = RepeatabilityConfig {
            passes: 2,
            observation: Observation::Truth,
            ..RepeatabilityConfig::default()
        };
        let (a, passes) = run_repeatability(&eight, &PlantParams::calibrated(), &cfg).unwrap();
        let (b, _) = run_repeatability(&eight, &PlantParams::calibrated(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(passes.len(), 2);
        assert_eq!(passes[0].len(), 1000);
        assert!((a.duration_s - 2.0).abs() < 1e-9);
    }

    #[test]
    fn noise_raises_the_error() {
        let eight = figure_eight(1.5, 3.0, 1000).unwrap();
        let quiet = RepeatabilityConfig {
            passes: 3,
            observation: Observation::Truth,
            ..RepeatabilityConfig::default()
        };
        let noisy = RepeatabilityConfig {
            noise: Some(CurrentNoise { std_a: 0.005, seed: 3 }),
            ..quiet.clone()
        };
        let p = PlantParams::calibrated();
        let (q, _) = run_repeatability(&eight, &p, &quiet).unwrap();
        let (n, _) = run_repeatability(&eight, &p, &noisy).unwrap();
        assert!(n.mean_rmse_mm > q.mean_rmse_mm);
        assert_eq!(n.command_digest, q.command_digest);
    }

    #[test]
    fn single_pass_is_rejected() {
        let eight = figure_eight(1.5, 3.0, 100).unwrap();
        let cfg = RepeatabilityConfig {
            passes: 1,
            ..RepeatabilityConfig::default()
        };
        assert!(run_repeatability(&eight, &PlantParams::default(), &cfg).is_err());
    }
}
