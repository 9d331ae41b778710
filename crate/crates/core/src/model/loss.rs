use super::config::{LossConfig, LossMode};
use super::network::{argmax, Copinet};
use crate::error::{Error, Result};
use crate::gradcore::{Gradients, Graph, ParameterStore, Rng, Var};
use crate::rpmgen::ProblemInstance;

fn check_answer(g: &Graph<'_>, potentials: Var, answer: usize) -> Result<usize> {
    let shape = g.shape(potentials);
    if shape.len() != 1 {
        return Err(Error::invalid(format!("potentials must be a vector, got shape {shape:?}")));
    }
    if answer >= shape[0] {
        return Err(Error::invalid(format!("answer index {answer} out of range for {} candidates", shape[0])));
    }
    Ok(shape[0])
}

/// `-[log σ(f* - b) + Σ log(1 - σ(f' - b))]`.
pub fn contrast_loss(g: &mut Graph<'_>, potentials: Var, answer: usize, baseline: f64) -> Result<Var> {
    let n = check_answer(g, potentials, answer)?;
    let sign: Vec<f64> = (0..n).map(|j| if j == answer { 1.0 } else { -1.0 }).collect();
    let sign = g.constant_from(vec![n], sign)?;
    let centered = g.shift(potentials, -baseline);
    let z = g.mul(centered, sign)?;
    let ls = g.log_sigmoid(z);
    let total = g.sum_all(ls);
    Ok(g.neg(total))
}

/// `-log softmax(potentials)[answer]`.
pub fn cross_entropy_loss(g: &mut Graph<'_>, potentials: Var, answer: usize) -> Result<Var> {
    check_answer(g, potentials, answer)?;
    let lsm = g.log_softmax(potentials, 0)?;
    let picked = g.select_rows(lsm, &[answer])?;
    let total = g.sum_all(picked);
    Ok(g.neg(total))
}

pub fn loss(g: &mut Graph<'_>, potentials: Var, answer: usize, config: &LossConfig) -> Result<Var> {
    match config.mode {
        LossMode::Contrast => contrast_loss(g, potentials, answer, config.baseline),
        LossMode::CrossEntropy => cross_entropy_loss(g, potentials, answer),
    }
}

/// Argmax of the potentials, ties broken by the lowest index.
pub fn predict(potentials: &[f64]) -> usize {
    argmax(potentials)
}

/// Softmax over the candidate potentials.
pub fn candidate_distribution(potentials: &[f64]) -> Vec<f64> {
    let max = potentials.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = potentials.iter().map(|p| (p - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

impl Copinet {
    /// Training loss of one instance.
    pub fn loss_value(&self, params: &ParameterStore, inst: &ProblemInstance, rng: &mut Rng) -> Result<f64> {
        let mut g = Graph::with_params(params);
        let out = self.forward(&mut g, inst, rng)?;
        let l = loss(&mut g, out.potentials, inst.answer_index, &self.config.loss)?;
        Ok(g.value(l)[0])
    }

    /// Training loss of one instance and its parameter gradients.
    pub fn loss_and_gradients(
        &self,
        params: &ParameterStore,
        inst: &ProblemInstance,
        rng: &mut Rng,
    ) -> Result<(f64, Gradients)> {
        let mut g = Graph::with_params(params);
        let out = self.forward(&mut g, inst, rng)?;
        let l = loss(&mut g, out.potentials, inst.answer_index, &self.config.loss)?;
        let value = g.value(l)[0];
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss of instance {} is {value}", inst.seed)));
        }
        Ok((value, g.backward(l)?))
    }
}
