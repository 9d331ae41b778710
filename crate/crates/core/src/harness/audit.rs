use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::evaluate::Scorer;
use super::parallel::{par_map, Execution};
use crate::error::Result;
use crate::gradcore::SeedStream;
use crate::rpmgen::{ProblemInstance, NUM_CANDIDATES};

/// Grid transforms that keep the missing cell at the bottom right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    RowSwap,
    ColumnSwap,
    CandidateShuffle,
}

impl Transform {
    pub const ALL: [Transform; 3] = [Transform::RowSwap, Transform::ColumnSwap, Transform::CandidateShuffle];

    pub fn name(self) -> &'static str {
        match self {
            Transform::RowSwap => "row-swap",
            Transform::ColumnSwap => "column-swap",
            Transform::CandidateShuffle => "candidate-shuffle",
        }
    }
}

/// Swaps the first two rows of the context.
pub fn swap_context_rows(inst: &ProblemInstance) -> ProblemInstance {
    let mut out = inst.clone();
    for c in 0..3 {
        out.context.swap(c, 3 + c);
    }
    out
}

/// Swaps the first two columns of the context.
pub fn swap_context_columns(inst: &ProblemInstance) -> ProblemInstance {
    let mut out = inst.clone();
    for r in 0..3 {
        out.context.swap(3 * r, 3 * r + 1);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub seed: u64,
    pub transform: Transform,
    pub deviation: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub instances: usize,
    pub max_row_deviation: f64,
    pub max_column_deviation: f64,
    pub max_candidate_deviation: f64,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn max_deviation(&self) -> f64 {
        self.max_row_deviation.max(self.max_column_deviation).max(self.max_candidate_deviation)
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "audit {}: {} instances, max deviation {:e} (rows {:e}, columns {:e}, candidates {:e})\n",
            if self.passed() { "passed" } else { "FAILED" },
            self.instances,
            self.max_deviation(),
            self.max_row_deviation,
            self.max_column_deviation,
            self.max_candidate_deviation
        );
        for v in self.violations.iter().take(20) {
            s.push_str(&format!("  seed {} {}: {:e}\n", v.seed, v.transform.name(), v.deviation));
        }
        if self.violations.len() > 20 {
            s.push_str(&format!("  ... {} more\n", self.violations.len() - 20));
        }
        s
    }
}

fn max_abs_diff(a: &[f64], b: impl Iterator<Item = f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Checks each instance against a row swap, a column swap and a random
/// candidate shuffle. Any nonzero deviation is a violation.
pub fn invariance_audit(scorer: &dyn Scorer, data: &[ProblemInstance], seed: u64, exec: Execution) -> Result<AuditReport> {
    let stream = SeedStream::new(seed);
    let per_instance = par_map(data, exec.threads(), |_, inst| -> Result<[f64; 3]> {
        let base = scorer.potentials(inst)?;
        let rows = scorer.potentials(&swap_context_rows(inst))?;
        let cols = scorer.potentials(&swap_context_columns(inst))?;
        let mut perm: Vec<usize> = (0..NUM_CANDIDATES).collect();
        let mut rng = stream.split(inst.seed).rng();
        while perm.iter().enumerate().all(|(i, &p)| i == p) {
            perm.shuffle(&mut rng);
        }
        let shuffled = scorer.potentials(&inst.permute_candidates(&perm))?;
        Ok([
            max_abs_diff(&rows, base.iter().copied()),
            max_abs_diff(&cols, base.iter().copied()),
            max_abs_diff(&shuffled, perm.iter().map(|&p| base[p])),
        ])
    });
    let mut report = AuditReport {
        instances: data.len(),
        ..AuditReport::default()
    };
    for (inst, devs) in data.iter().zip(per_instance) {
        let devs = devs?;
        report.max_row_deviation = report.max_row_deviation.max(devs[0]);
        report.max_column_deviation = report.max_column_deviation.max(devs[1]);
        report.max_candidate_deviation = report.max_candidate_deviation.max(devs[2]);
        for (t, d) in Transform::ALL.into_iter().zip(devs) {
            if d != 0.0 {
                report.violations.push(Violation {
                    seed: inst.seed,
                    transform: t,
                    deviation: d,
                });
            }
        }
    }
    Ok(report)
}

/// Wraps a scorer and adds position-dependent offsets: each candidate slot
/// and each context cell gets its own tag. Used as a negative control.
pub struct PositionTagged<'a> {
    pub inner: &'a dyn Scorer,
    pub strength: f64,
}

impl Scorer for PositionTagged<'_> {
    fn potentials(&self, inst: &ProblemInstance) -> Result<Vec<f64>> {
        let tag: f64 = inst
            .context
            .iter()
            .enumerate()
            .map(|(k, p)| (k + 1) as f64 * p.pixels.iter().map(|&x| f64::from(x)).sum::<f64>() / 255.0)
            .sum();
        Ok(self
            .inner
            .potentials(inst)?
            .into_iter()
            .enumerate()
            .map(|(j, v)| v + self.strength * (j as f64 + 1e-3 * tag))
            .collect())
    }
}
