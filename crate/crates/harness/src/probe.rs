//! Empirical check of the aggregation step's sensitivity on neighbouring
//! federations of mean-estimation tasks.
//!
//! Half of the trials swap one task's data for fresh random points. The other
//! half reflect that task's points through its starting model, which reverses
//! its update; once both updates are clipped the aggregate moves by `2 gamma / q`.

use pmtl_core::data::TaskDataset;
use pmtl_core::objectives::{ModelFamily, ModelSpec};
use pmtl_core::privacy::{empirical_sensitivity_probe, SensitivityReport};
use pmtl_core::rng::{Purpose, Streams};
use pmtl_core::solvers::pmtl_aggregate_once;
use pmtl_core::{FederationConfig, ParamVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSettings {
    pub tasks: usize,
    pub dim: usize,
    pub points_per_task: usize,
    pub gamma: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            tasks: 10,
            dim: 2,
            points_per_task: 3,
            gamma: 0.01,
            trials: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeReport {
    /// Worst case over all trials against both bounds.
    pub report: SensitivityReport,
    pub random_max: f64,
    pub adversarial_max: f64,
}

fn random_task<R: Rng>(id: usize, settings: &ProbeSettings, rng: &mut R) -> pmtl_core::Result<TaskDataset> {
    let points: Vec<Vec<f64>> = (0..settings.points_per_task)
        .map(|_| (0..settings.dim).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    TaskDataset::from_points(id, &points)
}

/// Runs `settings.trials` one-round noiseless PMTL aggregations on neighbouring
/// pairs with full participation and `lambda = 0`.
pub fn probe_sensitivity(settings: &ProbeSettings) -> Result<ProbeReport> {
    if settings.tasks == 0 || settings.dim == 0 || settings.points_per_task == 0 || settings.trials == 0 {
        return Err(HarnessError::Config("probe needs tasks, dim, points and trials all >= 1".into()));
    }
    let m = settings.tasks;
    let spec = ModelSpec::new(ModelFamily::SquaredErrorMean, settings.dim);
    let mut config = FederationConfig::new(m);
    config.rounds = 1;
    config.local_steps = 1;
    config.lambda = 0.0;
    config.gamma = settings.gamma;
    config.eta = 0.5 / settings.points_per_task as f64;
    config.validate()?;
    let start = vec![ParamVector::zeros(settings.dim); m];
    let streams = Streams::new(settings.seed);

    let run = |adversarial: bool, trials: usize| -> Result<f64> {
        empirical_sensitivity_probe(
            |fed: &[TaskDataset]| pmtl_aggregate_once(&spec, &config, fed, Some(start.clone())),
            |trial| {
                let mut rng = streams.stream(Purpose::Auxiliary, u64::from(adversarial), trial as u64);
                let d: Vec<TaskDataset> = (0..m)
                    .map(|k| random_task(k, settings, &mut rng))
                    .collect::<pmtl_core::Result<_>>()?;
                let k = rng.random_range(0..m);
                let replacement = if adversarial {
                    let mirrored: Vec<Vec<f64>> = d[k]
                        .examples()
                        .iter()
                        .map(|e| e.features.iter().map(|x| -x).collect())
                        .collect();
                    TaskDataset::from_points(k, &mirrored)?
                } else {
                    random_task(k, settings, &mut rng)?
                };
                let mut d2 = d.clone();
                d2[k] = replacement;
                Ok((d, d2))
            },
            trials,
        )
        .map_err(HarnessError::from)
    };
    let adversarial_trials = settings.trials.div_ceil(2);
    let adversarial_max = run(true, adversarial_trials)?;
    let random_max = if settings.trials > adversarial_trials {
        run(false, settings.trials - adversarial_trials)?
    } else {
        0.0
    };
    Ok(ProbeReport {
        report: SensitivityReport::new(
            adversarial_max.max(random_max),
            settings.trials,
            settings.gamma,
            m as f64,
        ),
        random_max,
        adversarial_max,
    })
}
