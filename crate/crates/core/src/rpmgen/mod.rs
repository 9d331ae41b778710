//! Procedural 3x3 matrix problems with per-attribute row rules, rendered
//! panels, distractors with a uniqueness guarantee, and the symbolic oracle.

mod attributes;
mod dataset;
mod oracle;
mod render;
mod rules;

use serde::{Deserialize, Serialize};

pub use attributes::{Attribute, AttributeVector, Rule, RuleSpec, NUM_ATTRIBUTES, NUM_RULES, NUM_VALUES};
pub(crate) use dataset::write_atomic;
pub use dataset::{read_dataset, sidecar_path, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use oracle::{consistent_candidates, generate_distractors, oracle_solve, MAX_DISTRACTOR_RETRIES, NUM_CANDIDATES};
pub use render::{render_exact, render_panel, render_with_offsets, Panel, GRAY_LEVELS, PANEL_PIXELS, PANEL_SIDE, RADII};
pub use rules::{generate_matrix, rule_holds, sample_rule_spec, satisfies, value_grid, ValueGrid};

use crate::error::Result;
use crate::gradcore::SeedStream;

/// Context panels per problem.
pub const NUM_CONTEXT: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemInstance {
    /// Grid positions (0,0) .. (2,1), row-major.
    pub context: Vec<Panel>,
    pub candidates: Vec<Panel>,
    pub answer_index: usize,
    pub rule_spec: RuleSpec,
    pub seed: u64,
}

impl ProblemInstance {
    /// Same problem with candidates reordered: new slot `i` holds old
    /// candidate `perm[i]`. The answer index follows its panel.
    pub fn permute_candidates(&self, perm: &[usize]) -> Self {
        let candidates = perm.iter().map(|&i| self.candidates[i].clone()).collect();
        let answer_index = perm.iter().position(|&i| i == self.answer_index).expect("perm is a permutation");
        Self {
            candidates,
            answer_index,
            ..self.clone()
        }
    }
}

/// Generates one problem; every random choice derives from `seed`.
pub fn generate_instance(seed: u64) -> Result<ProblemInstance> {
    let stream = SeedStream::new(seed);
    let rule_spec = sample_rule_spec(&mut stream.split_named("rules").rng());
    let matrix = generate_matrix(&rule_spec, &mut stream.split_named("matrix").rng());
    let (candidates, answer_index) = generate_distractors(&matrix, &mut stream.split_named("distractors").rng())?;
    let mut jitter = stream.split_named("render").rng();
    let context = matrix[..NUM_CONTEXT].iter().map(|a| render_panel(a, &mut jitter)).collect();
    let candidates = candidates.iter().map(|a| render_panel(a, &mut jitter)).collect();
    Ok(ProblemInstance {
        context,
        candidates,
        answer_index,
        rule_spec,
        seed,
    })
}

/// Seed of instance `index` under a master seed.
pub fn instance_seed(master_seed: u64, index: u64) -> u64 {
    SeedStream::new(master_seed).split(index).seed()
}

pub fn generate_dataset(count: usize, master_seed: u64) -> Result<Vec<ProblemInstance>> {
    (0..count as u64)
        .map(|i| generate_instance(instance_seed(master_seed, i)))
        .collect()
}
