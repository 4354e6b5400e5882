//! Random load scenarios with a fixed system total.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rascopf::network::Network;

use crate::error::ExperimentError;

/// Per-bus scaling factors drawn from `U(lo, hi)`, then rescaled so the
/// system load is `total_load_mw`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub seed: u64,
    pub total_load_mw: f64,
}

impl ScenarioSpec {
    pub fn uniform(lo: f64, hi: f64, count: usize, seed: u64) -> Self {
        Self {
            lo,
            hi,
            count,
            seed,
            total_load_mw: 2850.0,
        }
    }

    /// `count = 0` is accepted and yields no scenarios.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if !(self.lo > 0.0 && self.lo < self.hi && self.hi.is_finite()) {
            return Err(ExperimentError::Scenario(format!(
                "bounds must satisfy 0 < lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        if !(self.total_load_mw > 0.0 && self.total_load_mw.is_finite()) {
            return Err(ExperimentError::Scenario(format!(
                "total load must be positive, got {}",
                self.total_load_mw
            )));
        }
        Ok(())
    }
}

/// Scales each bus load by its own factor and rescales to the target total.
pub fn rescale(base_mw: &[f64], factors: &[f64], total_mw: f64) -> Vec<f64> {
    let scaled: Vec<f64> = base_mw.iter().zip(factors).map(|(p, x)| p * x).collect();
    let sum: f64 = scaled.iter().sum();
    scaled.iter().map(|p| p * total_mw / sum).collect()
}

/// One load vector (MW per bus) per scenario. The draws come from a single
/// ChaCha8 stream, so `(seed, spec)` fixes every vector.
pub fn generate_scenarios(net: &Network, spec: &ScenarioSpec) -> Result<Vec<Vec<f64>>, ExperimentError> {
    spec.validate()?;
    let base = net.loads_mw();
    if !(base.iter().sum::<f64>() > 0.0) {
        return Err(ExperimentError::Scenario("case has no load to scale".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dist = Uniform::new(spec.lo, spec.hi);
    Ok((0..spec.count)
        .map(|_| {
            let x: Vec<f64> = base.iter().map(|_| dist.sample(&mut rng)).collect();
            rescale(&base, &x, spec.total_load_mw)
        })
        .collect())
}
