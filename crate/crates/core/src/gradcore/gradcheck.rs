//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;

use super::params::{Gradients, ParamId, ParameterStore};
use super::rng::SeedStream;
use crate::error::{Error, Result};

/// Which parameter entries to probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coverage {
    /// Every scalar of every parameter.
    All,
    /// Up to `per_param` entries of each parameter, chosen from `seed`.
    Sample { per_param: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// Largest error at the requested step, before kink screening.
    pub raw_max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Entries re-measured because the stencil straddled a kink.
    pub kinks: usize,
}

/// `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Steps tried, relative to `eps`, when a stencil straddles a kink.
const REFINEMENTS: [f64; 3] = [1e-1, 1e-2, 1e-3];

/// Compares `analytic` against central differences of `f` with step `eps`.
///
/// `f` is evaluated with individual entries of `params` nudged by `±eps`;
/// every entry is restored before returning, also on error.
pub fn finite_difference_gradcheck<F>(
    params: &mut ParameterStore,
    analytic: &Gradients,
    coverage: Coverage,
    eps: f64,
    f: F,
) -> Result<GradcheckReport>
where
    F: FnMut(&ParameterStore) -> Result<f64>,
{
    probe(params, analytic, coverage, eps, None, f)
}

/// Like [`finite_difference_gradcheck`], but tolerant of piecewise-linear
/// kinks (relu) inside the `±eps` stencil.
///
/// An entry whose error reaches `tolerance` counts as a kink crossing only if
/// its one-sided differences disagree by at least `tolerance` and a central
/// difference with a smaller step then agrees with the analytic value. Its
/// error is taken at that smaller step. A wrong gradient in a smooth region
/// still fails, since no step brings it into agreement.
pub fn screened_gradcheck<F>(
    params: &mut ParameterStore,
    analytic: &Gradients,
    coverage: Coverage,
    eps: f64,
    tolerance: f64,
    f: F,
) -> Result<GradcheckReport>
where
    F: FnMut(&ParameterStore) -> Result<f64>,
{
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(Error::invalid(format!("gradcheck tolerance must be positive, got {tolerance}")));
    }
    probe(params, analytic, coverage, eps, Some(tolerance), f)
}

fn central<F>(params: &mut ParameterStore, id: ParamId, i: usize, step: f64, f: &mut F) -> Result<(f64, f64)>
where
    F: FnMut(&ParameterStore) -> Result<f64>,
{
    let original = params.get(id).values()[i];
    params.get_mut(id).values_mut()[i] = original + step;
    let plus = f(params);
    params.get_mut(id).values_mut()[i] = original - step;
    let minus = f(params);
    params.get_mut(id).values_mut()[i] = original;
    let (plus, minus) = (plus?, minus?);
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::NonFinite(format!(
            "objective at {}[{i}] ± {step}: {plus}, {minus}",
            params.name(id)
        )));
    }
    Ok((plus, minus))
}

fn probe<F>(
    params: &mut ParameterStore,
    analytic: &Gradients,
    coverage: Coverage,
    eps: f64,
    screen: Option<f64>,
    mut f: F,
) -> Result<GradcheckReport>
where
    F: FnMut(&ParameterStore) -> Result<f64>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::invalid(format!("gradcheck eps must lie in (0, 1e-2], got {eps}")));
    }
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        raw_max_rel_error: 0.0,
        worst: None,
        checked: 0,
        kinks: 0,
    };
    let mut center: Option<f64> = None;
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        let n = params.get(id).numel();
        let entries: Vec<usize> = match coverage {
            Coverage::All => (0..n).collect(),
            Coverage::Sample { per_param, seed } => {
                let mut rng = SeedStream::new(seed).split(id.index() as u64).rng();
                let mut v = sample(&mut rng, n, per_param.min(n)).into_vec();
                v.sort_unstable();
                v
            }
        };
        for i in entries {
            let a = analytic.value(id, i);
            let (plus, minus) = central(params, id, i, eps, &mut f)?;
            let raw = relative_error(a, (plus - minus) / (2.0 * eps));
            report.raw_max_rel_error = report.raw_max_rel_error.max(raw);
            let mut err = raw;
            if let Some(tol) = screen.filter(|&t| raw >= t) {
                let c = match center {
                    Some(c) => c,
                    None => *center.insert(f(params)?),
                };
                if relative_error((plus - c) / eps, (c - minus) / eps) >= tol {
                    for r in REFINEMENTS {
                        let (p, m) = central(params, id, i, eps * r, &mut f)?;
                        let refined = relative_error(a, (p - m) / (2.0 * eps * r));
                        if refined < tol {
                            err = refined;
                            report.kinks += 1;
                            break;
                        }
                    }
                }
            }
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((params.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::{Graph, Tensor};

    fn quadratic_store() -> (ParameterStore, ParamId) {
        let mut s = ParameterStore::new();
        let id = s.add("w", Tensor::new(vec![1], vec![0.7]).unwrap()).unwrap();
        (s, id)
    }

    fn quadratic(p: &ParameterStore, id: ParamId) -> Result<(f64, Gradients)> {
        // 3w^2 - 2w + 1
        let mut g = Graph::with_params(p);
        let w = g.param(id);
        let w2 = g.mul(w, w)?;
        let a = g.scale(w2, 3.0);
        let b = g.scale(w, -2.0);
        let y = g.add(a, b)?;
        let y = g.shift(y, 1.0);
        let loss = g.sum_all(y);
        Ok((g.value(loss)[0], g.backward(loss)?))
    }

    #[test]
    fn quadratic_is_exact() {
        let (mut s, id) = quadratic_store();
        let (_, grads) = quadratic(&s, id).unwrap();
        let r = finite_difference_gradcheck(&mut s, &grads, Coverage::All, 1e-4, |p| {
            quadratic(p, id).map(|(v, _)| v)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(s.get(id).values()[0], 0.7);
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let (mut s, id) = quadratic_store();
        let grads = Gradients::zeros_like(&s);
        let r = finite_difference_gradcheck(&mut s, &grads, Coverage::All, 1e-4, |_| Ok(4.0)).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(grads.value(id, 0), 0.0);
    }

    #[test]
    fn rejects_bad_eps_and_non_finite_values() {
        let (mut s, _) = quadratic_store();
        let grads = Gradients::zeros_like(&s);
        assert!(finite_difference_gradcheck(&mut s, &grads, Coverage::All, 0.1, |_| Ok(0.0)).is_err());
        assert!(finite_difference_gradcheck(&mut s, &grads, Coverage::All, 0.0, |_| Ok(0.0)).is_err());
        let err = finite_difference_gradcheck(&mut s, &grads, Coverage::All, 1e-4, |_| Ok(f64::NAN));
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn detects_wrong_gradient() {
        let (mut s, id) = quadratic_store();
        let (_, mut grads) = quadratic(&s, id).unwrap();
        grads.params[id.index()].as_mut().unwrap()[0] += 0.5;
        let r = finite_difference_gradcheck(&mut s, &grads, Coverage::All, 1e-4, |p| {
            quadratic(p, id).map(|(v, _)| v)
        })
        .unwrap();
        assert!(r.max_rel_error > 0.1);
        assert_eq!(r.worst, Some(("w".to_string(), 0)));
        let r = screened_gradcheck(&mut s, &grads, Coverage::All, 1e-4, 1e-3, |p| quadratic(p, id).map(|(v, _)| v))
            .unwrap();
        assert!(r.max_rel_error > 0.1);
        assert_eq!(r.kinks, 0);
    }

    fn relu_store(x: f64) -> (ParameterStore, ParamId) {
        let mut s = ParameterStore::new();
        let id = s.add("x", Tensor::new(vec![1], vec![x]).unwrap()).unwrap();
        (s, id)
    }

    fn relu_loss(p: &ParameterStore, id: ParamId) -> Result<(f64, Gradients)> {
        let mut g = Graph::with_params(p);
        let x = g.param(id);
        let r = g.relu(x);
        let loss = g.sum_all(r);
        Ok((g.value(loss)[0], g.backward(loss)?))
    }

    #[test]
    fn kinks_inside_the_stencil_are_screened() {
        // relu at 3e-5: a ±1e-4 stencil straddles the kink and sees slope 0.65
        let (mut s, id) = relu_store(3e-5);
        let (_, grads) = relu_loss(&s, id).unwrap();
        let f = |p: &ParameterStore| relu_loss(p, id).map(|(v, _)| v);
        let raw = finite_difference_gradcheck(&mut s, &grads, Coverage::All, 1e-4, f).unwrap();
        assert!((raw.max_rel_error - 0.35).abs() < 1e-9, "{raw:?}");
        let screened = screened_gradcheck(&mut s, &grads, Coverage::All, 1e-4, 1e-3, f).unwrap();
        assert_eq!(screened.kinks, 1);
        assert!(screened.max_rel_error < 1e-9);
        assert_eq!(screened.raw_max_rel_error, raw.max_rel_error);
        assert_eq!(s.get(id).values()[0], 3e-5);

        // a wrong gradient near the same kink is still caught
        let mut wrong = grads.clone();
        wrong.params[id.index()].as_mut().unwrap()[0] = 0.5;
        let r = screened_gradcheck(&mut s, &wrong, Coverage::All, 1e-4, 1e-3, f).unwrap();
        assert_eq!(r.kinks, 0);
        assert!(r.max_rel_error > 0.1);
    }
}
