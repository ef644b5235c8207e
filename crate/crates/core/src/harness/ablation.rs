//! Ablation grids and memory-budget sweeps over full stream runs.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::config::StreamConfig;
use crate::harness::metrics::{average_incremental_accuracy, mean_forgetting};
use crate::harness::report::{format_arm_table, write_run, ArmResult};
use crate::harness::runner::run_config;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    Curriculum,
    Iss,
}

impl Factor {
    pub fn parse(name: &str) -> Result<Self> {
        match name.trim() {
            "curriculum" => Ok(Factor::Curriculum),
            "iss" => Ok(Factor::Iss),
            other => Err(Error::domain(format!(
                "unknown ablation factor {other:?} (expected curriculum or iss)"
            ))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Factor::Curriculum => "curriculum",
            Factor::Iss => "iss",
        }
    }

    fn set(self, config: &mut StreamConfig, on: bool) {
        match self {
            Factor::Curriculum => config.curriculum_enabled = on,
            Factor::Iss => config.iss_enabled = on,
        }
    }
}

pub fn parse_grid(spec: &str) -> Result<Vec<Factor>> {
    let mut factors = Vec::new();
    for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
        let f = Factor::parse(part)?;
        if !factors.contains(&f) {
            factors.push(f);
        }
    }
    if factors.is_empty() {
        return Err(Error::domain("ablation grid names no factors"));
    }
    Ok(factors)
}

/// Every on/off combination of `factors`; an arm is named after the factors it
/// enables (`baseline` when none are).
pub fn ablation_arms(base: &StreamConfig, factors: &[Factor]) -> Vec<(String, StreamConfig)> {
    (0..1usize << factors.len())
        .map(|mask| {
            let mut cfg = base.clone();
            let mut on = Vec::new();
            for (bit, f) in factors.iter().enumerate() {
                let enabled = mask & (1 << bit) != 0;
                f.set(&mut cfg, enabled);
                if enabled {
                    on.push(f.name());
                }
            }
            let name = if on.is_empty() { "baseline".to_string() } else { on.join("+") };
            (name, cfg)
        })
        .collect()
}

fn run_arm(arm: &str, config: &StreamConfig, out: Option<&Path>) -> Result<ArmResult> {
    log::info!("arm {arm}, seed {}, epsilon {}", config.seed, config.epsilon);
    let run = run_config(config)?;
    if let Some(dir) = out {
        write_run(&dir.join(format!("{arm}-seed{}", config.seed)), config, &run)?;
    }
    Ok(ArmResult {
        arm: arm.to_string(),
        seed: config.seed,
        epsilon: config.epsilon,
        average_incremental_accuracy: average_incremental_accuracy(&run.metrics).ok(),
        mean_forgetting: mean_forgetting(&run.metrics),
    })
}

/// Runs every arm for every seed. With `out`, each run gets its own
/// subdirectory and the per-arm table is written to `summary.csv`.
pub fn run_ablation(
    base: &StreamConfig,
    factors: &[Factor],
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<Vec<ArmResult>> {
    let mut rows = Vec::new();
    for (name, cfg) in ablation_arms(base, factors) {
        for &seed in seeds {
            rows.push(run_arm(&name, &StreamConfig { seed, ..cfg.clone() }, out)?);
        }
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("summary.csv"), format_arm_table(&rows))?;
    }
    Ok(rows)
}

/// Runs the stream at each memory budget. `with_random` adds a random-selection
/// arm at every budget alongside the informative one.
pub fn sweep_memory(
    base: &StreamConfig,
    epsilons: &[f64],
    seeds: &[u64],
    with_random: bool,
    out: Option<&Path>,
) -> Result<Vec<ArmResult>> {
    let mut rows = Vec::new();
    for &epsilon in epsilons {
        let mut arms = vec![("iss", true)];
        if with_random {
            arms.push(("random", false));
        }
        for (arm, iss) in arms {
            for &seed in seeds {
                let cfg = StreamConfig { seed, epsilon, iss_enabled: iss, ..base.clone() };
                cfg.validate()?;
                let name = format!("{arm}-eps{epsilon}");
                let mut row = run_arm(&name, &cfg, out)?;
                row.arm = arm.to_string();
                rows.push(row);
            }
        }
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("sweep.csv"), format_arm_table(&rows))?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_expands_to_all_combinations() {
        let factors = parse_grid("curriculum,iss").unwrap();
        let arms = ablation_arms(&StreamConfig::default(), &factors);
        let names: Vec<&str> = arms.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["baseline", "curriculum", "iss", "curriculum+iss"]);
        assert!(!arms[0].1.curriculum_enabled && !arms[0].1.iss_enabled);
        assert!(arms[3].1.curriculum_enabled && arms[3].1.iss_enabled);
        assert!(parse_grid("curriculum,bogus").is_err());
        assert!(parse_grid("").is_err());
    }
}
