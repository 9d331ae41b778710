use statrs::distribution::{Binomial, DiscreteCDF};

/// Median; the mean of the two middle values for even lengths.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// One-sided binomial tail `P(X >= successes)` for `X ~ Bin(trials, p)`.
pub fn binomial_upper_tail(successes: u64, trials: u64, p: f64) -> f64 {
    if successes == 0 {
        return 1.0;
    }
    let dist = Binomial::new(p, trials).expect("p lies in [0, 1]");
    dist.sf(successes - 1)
}
