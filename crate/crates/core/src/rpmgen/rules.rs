//! Rule sampling, row-wise matrix generation, and rule checking.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng as _;

use super::attributes::{Attribute, AttributeVector, Rule, RuleSpec, NUM_ATTRIBUTES, NUM_VALUES};
use crate::gradcore::Rng;

/// Values of one attribute laid out on the 3x3 grid, row-major.
pub type ValueGrid = [[u8; 3]; 3];

pub fn sample_rule_spec(rng: &mut Rng) -> RuleSpec {
    let rules = std::array::from_fn(|_| Rule::ALL[rng.gen_range(0..Rule::ALL.len())]);
    RuleSpec { rules }
}

fn step(v: u8, delta: i8) -> u8 {
    (v as i16 + delta as i16).rem_euclid(NUM_VALUES as i16) as u8
}

fn row_for(rule: Rule, rng: &mut Rng, triple: &[u8; 3]) -> [u8; 3] {
    let start = rng.gen_range(0..NUM_VALUES);
    match rule {
        Rule::Constant => [start; 3],
        Rule::ProgressionUp => [start, step(start, 1), step(start, 2)],
        Rule::ProgressionDown => [start, step(start, -1), step(start, -2)],
        Rule::DistributeThree => {
            let mut row = *triple;
            row.shuffle(rng);
            row
        }
    }
}

/// Fills the 3x3 matrix row by row so that every row obeys `spec`.
/// Index 8 is the answer position (2, 2).
pub fn generate_matrix(spec: &RuleSpec, rng: &mut Rng) -> [AttributeVector; 9] {
    let mut grids = [[[0u8; 3]; 3]; NUM_ATTRIBUTES];
    for (grid, &rule) in grids.iter_mut().zip(&spec.rules) {
        let picked = sample(rng, NUM_VALUES as usize, 3);
        let triple = [picked.index(0) as u8, picked.index(1) as u8, picked.index(2) as u8];
        for row in grid.iter_mut() {
            *row = row_for(rule, rng, &triple);
        }
    }
    std::array::from_fn(|pos| {
        let idx = std::array::from_fn(|a| grids[a][pos / 3][pos % 3]);
        AttributeVector::from_indices(idx).expect("values generated in range")
    })
}

fn row_follows(rule: Rule, row: &[u8; 3]) -> bool {
    match rule {
        Rule::Constant => row[0] == row[1] && row[1] == row[2],
        Rule::ProgressionUp => row[1] == step(row[0], 1) && row[2] == step(row[1], 1),
        Rule::ProgressionDown => row[1] == step(row[0], -1) && row[2] == step(row[1], -1),
        Rule::DistributeThree => unreachable!("checked on the whole grid"),
    }
}

fn sorted(row: &[u8; 3]) -> [u8; 3] {
    let mut r = *row;
    r.sort_unstable();
    r
}

/// Whether all three rows of `grid` satisfy `rule`.
pub fn rule_holds(rule: Rule, grid: &ValueGrid) -> bool {
    match rule {
        Rule::DistributeThree => {
            let set = sorted(&grid[0]);
            set[0] != set[1] && set[1] != set[2] && grid.iter().all(|row| sorted(row) == set)
        }
        _ => grid.iter().all(|row| row_follows(rule, row)),
    }
}

/// One attribute's grid from eight context panels plus a completion.
pub fn value_grid(context: &[AttributeVector], completion: &AttributeVector, attr: Attribute) -> ValueGrid {
    let at = |pos: usize| {
        if pos == 8 {
            completion.index(attr)
        } else {
            context[pos].index(attr)
        }
    };
    std::array::from_fn(|r| std::array::from_fn(|c| at(r * 3 + c)))
}

/// Whether the completed matrix satisfies every rule of `spec`.
pub fn satisfies(spec: &RuleSpec, context: &[AttributeVector], completion: &AttributeVector) -> bool {
    Attribute::ALL
        .iter()
        .all(|&a| rule_holds(spec.rule(a), &value_grid(context, completion, a)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::SeedStream;

    #[test]
    fn sampling_is_reproducible() {
        let a = sample_rule_spec(&mut SeedStream::new(11).rng());
        let b = sample_rule_spec(&mut SeedStream::new(11).rng());
        assert_eq!(a, b);
    }

    #[test]
    fn rule_frequencies_are_uniform() {
        let mut rng = SeedStream::new(123).rng();
        let n = 10_000;
        let mut counts = [[0usize; 4]; NUM_ATTRIBUTES];
        let mut all_constant = 0;
        for _ in 0..n {
            let s = sample_rule_spec(&mut rng);
            for (c, r) in counts.iter_mut().zip(s.rules) {
                c[r.id() as usize] += 1;
            }
            all_constant += usize::from(s.rules.iter().all(|&r| r == Rule::Constant));
        }
        for attr in counts {
            // chi-square with 3 dof; 16.27 is the 0.999 quantile
            let expected = n as f64 / 4.0;
            let chi2: f64 = attr.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
            assert!(chi2 < 16.27, "chi2 {chi2}");
            for c in attr {
                assert!((c as f64 / n as f64 - 0.25).abs() < 0.02);
            }
        }
        // (1/4)^4 = 1/256: expect ~39 of 10,000, binomial sd ~6.2
        let p = 0.25f64.powi(4);
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((all_constant as f64 - n as f64 * p).abs() < 4.0 * sd, "{all_constant}");
    }

    #[test]
    fn constant_rows_are_uniform_within_row() {
        let spec = RuleSpec { rules: [Rule::Constant; 4] };
        let m = generate_matrix(&spec, &mut SeedStream::new(1).rng());
        for row in m.chunks(3) {
            assert!(row.iter().all(|v| *v == row[0]));
        }
    }

    #[test]
    fn progression_from_two_counts_up() {
        let spec = RuleSpec {
            rules: [Rule::ProgressionUp, Rule::Constant, Rule::Constant, Rule::Constant],
        };
        let mut seen_two = false;
        for seed in 0..64 {
            let m = generate_matrix(&spec, &mut SeedStream::new(seed).rng());
            for row in m.chunks(3) {
                let nums: Vec<u8> = row.iter().map(|v| v.number).collect();
                assert_eq!(nums[1], nums[0] % 4 + 1);
                assert_eq!(nums[2], nums[1] % 4 + 1);
                if nums[0] == 2 {
                    assert_eq!(nums, vec![2, 3, 4]);
                    seen_two = true;
                }
            }
        }
        assert!(seen_two);
    }

    #[test]
    fn distribute_three_rows_share_a_value_set() {
        let spec = RuleSpec {
            rules: [Rule::Constant, Rule::DistributeThree, Rule::Constant, Rule::Constant],
        };
        for seed in 0..32 {
            let m = generate_matrix(&spec, &mut SeedStream::new(seed).rng());
            let sets: Vec<[u8; 3]> = m
                .chunks(3)
                .map(|row| sorted(&[row[0].shape_type, row[1].shape_type, row[2].shape_type]))
                .collect();
            assert!(sets.iter().all(|s| *s == sets[0]));
            assert!(sets[0][0] < sets[0][1] && sets[0][1] < sets[0][2]);
        }
    }

    #[test]
    fn every_generated_matrix_satisfies_its_spec() {
        let mut rng = SeedStream::new(99).rng();
        for _ in 0..2000 {
            let spec = sample_rule_spec(&mut rng);
            let m = generate_matrix(&spec, &mut rng);
            assert!(satisfies(&spec, &m[..8], &m[8]), "{spec}");
        }
    }

    #[test]
    fn rule_checks_on_hand_rows() {
        assert!(rule_holds(Rule::ProgressionDown, &[[3, 2, 1], [0, 3, 2], [1, 0, 3]]));
        assert!(!rule_holds(Rule::ProgressionUp, &[[3, 2, 1], [0, 3, 2], [1, 0, 3]]));
        assert!(rule_holds(Rule::DistributeThree, &[[0, 1, 3], [3, 0, 1], [1, 3, 0]]));
        assert!(!rule_holds(Rule::DistributeThree, &[[0, 1, 3], [3, 0, 1], [1, 3, 1]]));
        assert!(!rule_holds(Rule::DistributeThree, &[[0, 0, 0], [0, 0, 0], [0, 0, 0]]));
    }
}
