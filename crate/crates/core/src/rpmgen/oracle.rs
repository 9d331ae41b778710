//! Exhaustive symbolic solver and distractor synthesis.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng as _;

use super::attributes::{Attribute, AttributeVector, RuleSpec, NUM_ATTRIBUTES};
use super::rules::satisfies;
use super::ProblemInstance;
use crate::error::{Error, Result};
use crate::gradcore::Rng;

pub const NUM_CANDIDATES: usize = 8;
pub const MAX_DISTRACTOR_RETRIES: usize = 100;

/// Indices of candidates that complete the matrix under at least one of the
/// `M^N` rule assignments.
pub fn consistent_candidates(context: &[AttributeVector], candidates: &[AttributeVector]) -> Vec<usize> {
    candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| RuleSpec::all().any(|spec| satisfies(&spec, context, c)))
        .map(|(i, _)| i)
        .collect()
}

/// Perfect-information solver: brute force over every candidate and every
/// rule assignment. Fails unless exactly one candidate is consistent.
pub fn oracle_solve(instance: &ProblemInstance) -> Result<usize> {
    let context: Vec<AttributeVector> = instance.context.iter().map(|p| p.attributes).collect();
    let candidates: Vec<AttributeVector> = instance.candidates.iter().map(|p| p.attributes).collect();
    match consistent_candidates(&context, &candidates)[..] {
        [only] => Ok(only),
        [] => Err(Error::Oracle(format!("instance {}: no consistent candidate", instance.seed))),
        ref many => Err(Error::Oracle(format!(
            "instance {}: candidates {many:?} are all consistent",
            instance.seed
        ))),
    }
}

fn perturb(answer: &AttributeVector, rng: &mut Rng) -> AttributeVector {
    let k = rng.gen_range(1..=2);
    let mut out = *answer;
    for a in sample(rng, NUM_ATTRIBUTES, k) {
        let attr = Attribute::ALL[a];
        let delta = if rng.gen_bool(0.5) { 1 } else { 3 };
        out = out.with_index(attr, out.index(attr) + delta);
    }
    out
}

/// Builds the shuffled candidate set for a generated matrix.
///
/// Distractors move one or two attributes of the answer by ±1 (modular). A
/// draw is kept only if it is new and fails every rule assignment; the whole
/// set is then re-verified by exhaustive enumeration.
pub fn generate_distractors(
    matrix: &[AttributeVector; 9],
    rng: &mut Rng,
) -> Result<([AttributeVector; NUM_CANDIDATES], usize)> {
    let context = &matrix[..8];
    let answer = matrix[8];
    for _ in 0..MAX_DISTRACTOR_RETRIES {
        let mut set = vec![answer];
        let mut draws = 0;
        while set.len() < NUM_CANDIDATES && draws < 200 {
            draws += 1;
            let d = perturb(&answer, rng);
            if set.contains(&d) || RuleSpec::all().any(|spec| satisfies(&spec, context, &d)) {
                continue;
            }
            set.push(d);
        }
        if set.len() < NUM_CANDIDATES {
            continue;
        }
        set.shuffle(rng);
        let answer_index = set.iter().position(|c| *c == answer).unwrap();
        if consistent_candidates(context, &set) == [answer_index] {
            return Ok((set.try_into().unwrap(), answer_index));
        }
    }
    Err(Error::Generation(format!(
        "no unique candidate set after {MAX_DISTRACTOR_RETRIES} retries for matrix {matrix:?}"
    )))
}
