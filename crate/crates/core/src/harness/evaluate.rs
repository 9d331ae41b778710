use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::parallel::{par_map, Execution};
use crate::error::Result;
use crate::gradcore::{ParameterStore, Rng, SeedStream};
use crate::model::{predict, Copinet};
use crate::rpmgen::{oracle_solve, Attribute, ProblemInstance, NUM_CANDIDATES};

/// Anything that answers a problem.
pub trait Policy: Sync {
    fn choose(&self, inst: &ProblemInstance) -> Result<usize>;
}

/// Something that scores all candidates of a problem.
pub trait Scorer: Sync {
    fn potentials(&self, inst: &ProblemInstance) -> Result<Vec<f64>>;
}

/// Rule samples during evaluation depend only on the instance.
pub(crate) fn eval_rng(inst: &ProblemInstance) -> Rng {
    SeedStream::new(inst.seed).split_named("eval-sample").rng()
}

/// A network with concrete weights.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub net: Copinet,
    pub params: ParameterStore,
}

impl Scorer for TrainedModel {
    fn potentials(&self, inst: &ProblemInstance) -> Result<Vec<f64>> {
        self.net.potentials(&self.params, inst, &mut eval_rng(inst))
    }
}

impl Policy for TrainedModel {
    fn choose(&self, inst: &ProblemInstance) -> Result<usize> {
        Ok(predict(&self.potentials(inst)?))
    }
}

/// The symbolic solver.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    fn choose(&self, inst: &ProblemInstance) -> Result<usize> {
        oracle_solve(inst)
    }
}

/// Uniform guessing, seeded per instance.
#[derive(Debug, Clone, Copy)]
pub struct RandomPolicy {
    pub seed: u64,
}

impl Policy for RandomPolicy {
    fn choose(&self, inst: &ProblemInstance) -> Result<usize> {
        let mut rng = SeedStream::new(self.seed).split(inst.seed).rng();
        Ok(rng.gen_range(0..NUM_CANDIDATES))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl Bucket {
    fn add(&mut self, hit: bool) {
        self.total += 1;
        self.correct += usize::from(hit);
        self.accuracy = self.correct as f64 / self.total as f64;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub correct: usize,
    pub total: usize,
    /// Zero on an empty dataset.
    pub accuracy: f64,
    /// Keyed `attribute:rule`, e.g. `size:progression+1`.
    pub per_rule: BTreeMap<String, Bucket>,
}

impl EvalReport {
    pub fn from_outcomes(data: &[ProblemInstance], hits: &[bool]) -> Self {
        let mut r = EvalReport::default();
        for (inst, &hit) in data.iter().zip(hits) {
            r.total += 1;
            r.correct += usize::from(hit);
            for attr in Attribute::ALL {
                let key = format!("{}:{}", attr.name(), inst.rule_spec.rule(attr).name());
                r.per_rule.entry(key).or_default().add(hit);
            }
        }
        if r.total > 0 {
            r.accuracy = r.correct as f64 / r.total as f64;
        }
        r
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut s = format!("accuracy {:.2}% ({}/{})\n", 100.0 * self.accuracy, self.correct, self.total);
        for (k, b) in &self.per_rule {
            s.push_str(&format!("  {k:<28} {:>6.2}% ({}/{})\n", 100.0 * b.accuracy, b.correct, b.total));
        }
        s
    }
}

pub fn evaluate(policy: &dyn Policy, data: &[ProblemInstance], exec: Execution) -> Result<EvalReport> {
    let picks = par_map(data, exec.threads(), |_, inst| policy.choose(inst));
    let hits = picks
        .into_iter()
        .zip(data)
        .map(|(p, inst)| p.map(|p| p == inst.answer_index))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_outcomes(data, &hits))
}
