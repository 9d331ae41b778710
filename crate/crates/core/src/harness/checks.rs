//! Gradient and oracle checks over whole instance sets.

use serde::Serialize;

use super::evaluate::{EvalReport, TrainedModel};
use super::parallel::{par_map, Execution};
use crate::error::Result;
use crate::gradcore::{finite_difference_gradcheck, screened_gradcheck, Coverage, GradcheckReport, SeedStream};
use crate::rpmgen::{oracle_solve, ProblemInstance};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckSummary {
    pub eps: f64,
    pub instances: usize,
    /// Parameter entries probed, summed over instances.
    pub checked: usize,
    pub max_rel_error: f64,
    /// Before kink screening; equal to `max_rel_error` without screening.
    pub raw_max_rel_error: f64,
    /// Entries whose `±eps` stencil straddled a relu kink.
    pub kinks: usize,
    pub worst_instance_seed: Option<u64>,
    /// Parameter name and flat index of the worst entry.
    pub worst_entry: Option<(String, usize)>,
}

/// Central-difference check of the training loss on every instance.
///
/// Each instance probes `per_param` entries of every parameter, drawn from
/// `seed`. The sampling stream of the loss is re-seeded per evaluation so
/// stochastic rule sampling is identical across the perturbed evaluations.
/// With `screen_tolerance`, stencils that straddle a relu kink are
/// re-measured as in [`screened_gradcheck`].
pub fn model_gradcheck(
    model: &TrainedModel,
    instances: &[ProblemInstance],
    per_param: usize,
    eps: f64,
    screen_tolerance: Option<f64>,
    seed: u64,
    exec: Execution,
) -> Result<GradcheckSummary> {
    let net = &model.net;
    let sample_rng = |inst: &ProblemInstance| SeedStream::new(inst.seed).split_named("gradcheck").rng();
    let reports = par_map(instances, exec.threads(), |i, inst| -> Result<GradcheckReport> {
        let mut params = model.params.clone();
        let (_, grads) = net.loss_and_gradients(&params, inst, &mut sample_rng(inst))?;
        let coverage = Coverage::Sample {
            per_param,
            seed: SeedStream::new(seed).split(i as u64).seed(),
        };
        let f = |p: &_| net.loss_value(p, inst, &mut sample_rng(inst));
        match screen_tolerance {
            Some(tol) => screened_gradcheck(&mut params, &grads, coverage, eps, tol, f),
            None => finite_difference_gradcheck(&mut params, &grads, coverage, eps, f),
        }
    });
    let mut summary = GradcheckSummary {
        eps,
        instances: instances.len(),
        checked: 0,
        max_rel_error: 0.0,
        raw_max_rel_error: 0.0,
        kinks: 0,
        worst_instance_seed: None,
        worst_entry: None,
    };
    for (inst, r) in instances.iter().zip(reports) {
        let r = r?;
        log::debug!("instance {}: max relative error {:e}", inst.seed, r.max_rel_error);
        summary.checked += r.checked;
        summary.kinks += r.kinks;
        summary.raw_max_rel_error = summary.raw_max_rel_error.max(r.raw_max_rel_error);
        if summary.worst_instance_seed.is_none() || r.max_rel_error > summary.max_rel_error {
            summary.max_rel_error = r.max_rel_error;
            summary.worst_instance_seed = Some(inst.seed);
            summary.worst_entry = r.worst;
        }
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSummary {
    pub accuracy: EvalReport,
    pub unique_answers: usize,
    /// Instances with zero or several consistent candidates.
    pub ambiguous_seeds: Vec<u64>,
}

impl OracleSummary {
    pub fn passed(&self) -> bool {
        self.ambiguous_seeds.is_empty() && self.accuracy.correct == self.accuracy.total
    }
}

/// Runs the exhaustive solver on every instance.
pub fn oracle_check(data: &[ProblemInstance], exec: Execution) -> OracleSummary {
    let solved = par_map(data, exec.threads(), |_, inst| oracle_solve(inst).ok());
    let hits: Vec<bool> = data.iter().zip(&solved).map(|(inst, s)| *s == Some(inst.answer_index)).collect();
    let ambiguous_seeds: Vec<u64> = data
        .iter()
        .zip(&solved)
        .filter(|(_, s)| s.is_none())
        .map(|(inst, _)| inst.seed)
        .collect();
    OracleSummary {
        accuracy: EvalReport::from_outcomes(data, &hits),
        unique_answers: data.len() - ambiguous_seeds.len(),
        ambiguous_seeds,
    }
}
