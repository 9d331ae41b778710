use rand::Rng as _;

use super::*;
use crate::gradcore::{
    finite_difference_gradcheck, Coverage, Graph, ParamId, ParameterStore, Rng, SeedStream, Tensor,
};
use crate::rpmgen::{generate_instance, Panel, ProblemInstance, NUM_CANDIDATES, PANEL_PIXELS};

fn rng(seed: u64) -> Rng {
    SeedStream::new(seed).rng()
}

/// Overwrites every parameter, biases included, with uniform noise.
fn scramble(store: &mut ParameterStore, seed: u64, scale: f64) {
    let mut r = rng(seed);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).values_mut() {
            *v = r.gen_range(-scale..scale);
        }
    }
}

fn swap_rows(inst: &ProblemInstance, a: usize, b: usize) -> ProblemInstance {
    let mut out = inst.clone();
    for c in 0..3 {
        out.context.swap(a * 3 + c, b * 3 + c);
    }
    out
}

fn swap_cols(inst: &ProblemInstance, a: usize, b: usize) -> ProblemInstance {
    let mut out = inst.clone();
    for r in 0..3 {
        out.context.swap(r * 3 + a, r * 3 + b);
    }
    out
}

fn model(variant: Variant, seed: u64) -> (Copinet, ParameterStore) {
    Copinet::new(ModelConfig::preset(variant).with_seed(seed)).unwrap()
}

fn blank_panel() -> Panel {
    let mut p = generate_instance(0).unwrap().context[0].clone();
    p.pixels = vec![0; PANEL_PIXELS];
    p
}

/// `x · W + b` with `W: [k, m]` row-major, evaluated directly.
fn affine_ref(store: &ParameterStore, a: &Affine, x: &[f64]) -> Vec<f64> {
    let w = store.get(a.weight).values();
    let b = store.get(a.bias).values();
    let m = b.len();
    (0..m).map(|j| b[j] + x.iter().enumerate().map(|(i, xi)| xi * w[i * m + j]).sum::<f64>()).collect()
}

fn relu_ref(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

#[test]
fn blank_grid_matches_hand_replay() {
    let (net, mut store) = model(Variant::Copinet, 1);
    scramble(&mut store, 2, 0.05);
    let enc = net.encoder;
    let blank = blank_panel();
    let context = vec![blank.clone(); 8];
    let mut g = Graph::with_params(&store);
    let out = encode_pair(&mut g, &enc, &context, &blank).unwrap();
    let got = g.value(out).to_vec();

    let e0 = relu_ref(affine_ref(&store, &enc.embed_out, &relu_ref(affine_ref(&store, &enc.embed_hidden, &[0.0; PANEL_PIXELS]))));
    let line: Vec<f64> = e0.iter().map(|x| 3.0 * x).collect();
    let c = relu_ref(affine_ref(&store, &enc.combiner, &line));
    let pooled: Vec<f64> = c.iter().map(|x| 6.0 * x).collect();
    let want = affine_ref(&store, &enc.latent, &pooled);
    assert_eq!(got.len(), want.len());
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn encoder_ignores_row_and_column_swaps() {
    let (net, mut store) = model(Variant::Copinet, 3);
    scramble(&mut store, 4, 0.05);
    let inst = generate_instance(11).unwrap();
    let enc = |i: &ProblemInstance| {
        let mut g = Graph::with_params(&store);
        let v = encode_pair(&mut g, &net.encoder, &i.context, &i.candidates[0]).unwrap();
        g.value(v).to_vec()
    };
    let base = enc(&inst);
    assert_eq!(enc(&swap_rows(&inst, 0, 1)), base);
    assert_eq!(enc(&swap_cols(&inst, 0, 1)), base);
}

#[test]
fn wrong_panel_count_fails() {
    let (net, store) = model(Variant::Copinet, 0);
    let inst = generate_instance(1).unwrap();
    let mut g = Graph::with_params(&store);
    assert!(encode_pair(&mut g, &net.encoder, &inst.context[..7], &inst.candidates[0]).is_err());
    let mut short = inst.clone();
    short.candidates.pop();
    assert!(net.potentials(&store, &short, &mut rng(0)).is_err());
    let mut bad = inst;
    bad.context[3].pixels.pop();
    assert!(net.potentials(&store, &bad, &mut rng(0)).is_err());
}

fn fixed_map(store: &mut ParameterStore, dim: usize, diag: f64) -> ContrastMap {
    let mut w = vec![0.0; dim * dim];
    for i in 0..dim {
        w[i * dim + i] = diag;
    }
    let weight = store.add("h.weight", Tensor::new(vec![dim, dim], w).unwrap()).unwrap();
    let bias = store.add("h.bias", Tensor::zeros(vec![dim]).unwrap()).unwrap();
    ContrastMap {
        affine: Affine { weight, bias },
        normalize: false,
        mean_skip: false,
    }
}

#[test]
fn contrast_halving_example() {
    let mut store = ParameterStore::new();
    let h = fixed_map(&mut store, 2, 0.5);
    let mut g = Graph::with_params(&store);
    let f = g.constant_from(vec![2, 2], vec![1.0, 1.0, 3.0, 3.0]).unwrap();
    let out = contrast_module(&mut g, f, None, &h).unwrap();
    assert_eq!(g.value(out), &[-1.0, -1.0, 1.0, 1.0]);
}

#[test]
fn identical_candidates_cancel() {
    let mut store = ParameterStore::new();
    let h = fixed_map(&mut store, 3, 0.125);
    let mut g = Graph::with_params(&store);
    let row = [0.75, -1.25, 2.5];
    let f = g.constant_from(vec![8, 3], row.repeat(8)).unwrap();
    let out = contrast_module(&mut g, f, None, &h).unwrap();
    assert!(g.value(out).iter().all(|&x| x == 0.0), "{:?}", g.value(out));
}

#[test]
fn contrast_is_permutation_equivariant() {
    let (net, mut store) = model(Variant::Copinet, 5);
    scramble(&mut store, 6, 0.2);
    let h = net.stages[0].contrast.unwrap();
    let mut r = rng(7);
    let rows: Vec<Vec<f64>> = (0..8).map(|_| (0..64).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
    let embed: Vec<f64> = (0..32).map(|_| r.gen_range(-1.0..1.0)).collect();
    let run = |order: &[usize]| {
        let mut g = Graph::with_params(&store);
        let f = g.constant_from(vec![8, 64], order.iter().flat_map(|&i| rows[i].clone()).collect()).unwrap();
        let e = g.constant_from(vec![1, 32], embed.clone()).unwrap();
        let out = contrast_module(&mut g, f, Some(e), &h).unwrap();
        g.value(out).chunks(64).map(<[f64]>::to_vec).collect::<Vec<_>>()
    };
    let base = run(&[0, 1, 2, 3, 4, 5, 6, 7]);
    let perm = [3, 7, 0, 5, 1, 6, 2, 4];
    let shuffled = run(&perm);
    for (i, &p) in perm.iter().enumerate() {
        assert_eq!(shuffled[i], base[p]);
    }
}

#[test]
fn untrained_heads_are_uniform_and_row_swap_invariant() {
    let (net, store) = model(Variant::Copinet, 8);
    let inst = generate_instance(21).unwrap();
    let d = net.rule_distribution(&store, &inst.context).unwrap().unwrap();
    assert!(d.iter().all(|&p| (p - 0.25).abs() < 1e-15), "{d:?}");

    let (net, mut store) = model(Variant::Copinet, 8);
    scramble(&mut store, 9, 0.05);
    let d = net.rule_distribution(&store, &inst.context).unwrap().unwrap();
    assert!(d.iter().any(|&p| (p - 0.25).abs() > 1e-6));
    let swapped = swap_rows(&inst, 0, 1);
    assert_eq!(net.rule_distribution(&store, &swapped.context).unwrap().unwrap(), d);
    for row in d.chunks(4) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn inference_never_sees_candidates() {
    let (net, mut store) = model(Variant::Copinet, 10);
    scramble(&mut store, 11, 0.05);
    let inst = generate_instance(31).unwrap();
    let mut blanked = inst.clone();
    for c in &mut blanked.candidates {
        c.pixels.fill(0);
    }
    let dist = |i: &ProblemInstance| {
        let mut g = Graph::with_params(&store);
        let out = net.forward(&mut g, i, &mut rng(0)).unwrap();
        g.value(out.rule_distribution.unwrap()).to_vec()
    };
    assert_eq!(dist(&inst), dist(&blanked));
}

#[test]
fn soft_sampling_is_identity() {
    let mut g = Graph::new();
    let d = g.constant_from(vec![2, 4], vec![0.1, 0.2, 0.3, 0.4, 0.25, 0.25, 0.25, 0.25]).unwrap();
    let s = sample_rules(&mut g, d, Sampling::Soft, 1.0, &mut rng(0)).unwrap();
    assert_eq!(g.value(s), g.value(d));
    assert!(sample_rules(&mut g, d, Sampling::GumbelHard, 0.0, &mut rng(0)).is_err());
}

#[test]
fn gumbel_hard_follows_peaked_distribution() {
    let logits = [10.0, 0.0, 0.0, 0.0];
    let tau = 0.1;
    let z: f64 = logits.iter().map(|l: &f64| (l / tau).exp()).sum();
    let oracle = (logits[0] / tau).exp() / z;
    assert!(oracle > 0.99);
    let mut r = rng(12);
    let mut hits = 0;
    for _ in 0..1000 {
        let mut g = Graph::new();
        let l = g.constant_from(vec![1, 4], logits.to_vec()).unwrap();
        let d = g.softmax(l, 1).unwrap();
        let s = sample_rules(&mut g, d, Sampling::GumbelHard, tau, &mut r).unwrap();
        let v = g.value(s);
        assert_eq!(v.iter().sum::<f64>(), 1.0);
        assert!(v.iter().all(|&x| x == 0.0 || x == 1.0));
        hits += usize::from(v[0] == 1.0);
    }
    assert!(hits >= 990, "{hits}");
}

#[test]
fn gumbel_gradient_flows_through_relaxation() {
    let (net, mut store) = Copinet::new(ModelConfig {
        loss: LossConfig {
            sampling: Sampling::GumbelHard,
            ..LossConfig::default()
        },
        ..ModelConfig::preset(Variant::Copinet)
    })
    .unwrap();
    scramble(&mut store, 13, 0.05);
    let inst = generate_instance(3).unwrap();
    let (_, grads) = net.loss_and_gradients(&store, &inst, &mut rng(1)).unwrap();
    let heads = net.inference.as_ref().unwrap().heads.weight;
    assert!(grads.get(heads).unwrap().iter().any(|&x| x != 0.0));
}

#[test]
fn potentials_follow_candidate_permutation() {
    for variant in Variant::ALL {
        let (net, mut store) = model(variant, 14);
        scramble(&mut store, 15, 0.05);
        let inst = generate_instance(41).unwrap();
        let base = net.potentials(&store, &inst, &mut rng(0)).unwrap();
        let perm = [5, 2, 7, 0, 3, 1, 6, 4];
        let moved = net.potentials(&store, &inst.permute_candidates(&perm), &mut rng(0)).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(moved[i], base[p], "{variant}");
        }
        assert_eq!(predict(&moved), perm.iter().position(|&p| p == predict(&base)).unwrap());
    }
}

#[test]
fn potentials_ignore_context_swaps() {
    for variant in Variant::ALL {
        let (net, mut store) = model(variant, 16);
        scramble(&mut store, 17, 0.05);
        let inst = generate_instance(51).unwrap();
        let base = net.potentials(&store, &inst, &mut rng(0)).unwrap();
        for (a, b) in [(0, 1), (1, 0)] {
            assert_eq!(net.potentials(&store, &swap_rows(&inst, a, b), &mut rng(0)).unwrap(), base);
            assert_eq!(net.potentials(&store, &swap_cols(&inst, a, b), &mut rng(0)).unwrap(), base);
        }
    }
}

#[test]
fn initialization_and_soft_forward_are_deterministic() {
    let inst = generate_instance(61).unwrap();
    let (net, a) = model(Variant::Copinet, 18);
    let (_, b) = model(Variant::Copinet, 18);
    let (_, c) = model(Variant::Copinet, 19);
    assert_eq!(a, b);
    assert_ne!(a, c);
    let p1 = net.potentials(&a, &inst, &mut rng(1)).unwrap();
    let p2 = net.potentials(&a, &inst, &mut rng(2)).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(p1.len(), NUM_CANDIDATES);
}

#[test]
fn variants_differ_in_components() {
    let (backbone, _) = model(Variant::BackboneXe, 0);
    assert!(backbone.inference.is_none() && backbone.stages.iter().all(|s| s.contrast.is_none()));
    let (cxe, _) = model(Variant::ContrastXe, 0);
    assert!(cxe.inference.is_none() && cxe.stages.iter().all(|s| s.contrast.is_some()));
    let (full, _) = model(Variant::Copinet, 0);
    assert!(full.inference.is_some());
    assert_eq!(full.stages.len(), 2);
}

fn loss_of(potentials: &[f64], answer: usize, contrast: bool) -> (f64, Vec<f64>) {
    let mut g = Graph::new();
    let p = g.input(&Tensor::new(vec![potentials.len()], potentials.to_vec()).unwrap());
    let l = if contrast {
        contrast_loss(&mut g, p, answer, 0.0).unwrap()
    } else {
        cross_entropy_loss(&mut g, p, answer).unwrap()
    };
    let (_, inputs) = g.backward_with_inputs(l).unwrap();
    (g.value(l)[0], inputs[&p].clone())
}

#[test]
fn contrast_loss_reference_values() {
    let (l, grad) = loss_of(&[0.0; 8], 3, true);
    assert!((l - 5.545177).abs() < 1e-6, "{l}");
    assert!((l + 8.0 * 0.5f64.ln()).abs() < 1e-12);
    for (j, g) in grad.iter().enumerate() {
        let want = if j == 3 { -0.5 } else { 0.5 };
        assert!((g - want).abs() < 1e-12, "{j}: {g}");
    }
    let mut p = [-10.0; 8];
    p[0] = 10.0;
    let (l, _) = loss_of(&p, 0, true);
    // -log σ(10) = ln(1 + e^-10)
    let want = 8.0 * (-10f64).exp().ln_1p();
    assert!((l - want).abs() < 1e-12);
    assert!((l - 3.632e-4).abs() < 1e-6, "{l}");
}

#[test]
fn contrast_loss_respects_baseline() {
    let mut g = Graph::new();
    let p = g.constant_from(vec![8], vec![1.5; 8]).unwrap();
    let l = contrast_loss(&mut g, p, 0, 1.5).unwrap();
    assert!((g.value(l)[0] - 5.545177).abs() < 1e-6);
    assert!(contrast_loss(&mut g, p, 8, 0.0).is_err());
    assert!(cross_entropy_loss(&mut g, p, 9).is_err());
}

#[test]
fn cross_entropy_reference_values() {
    let (l, _) = loss_of(&[0.7; 8], 5, false);
    assert!((l - 8f64.ln()).abs() < 1e-12);
    let mut p = [0.0; 8];
    p[2] = 30.0;
    assert!(loss_of(&p, 2, false).0 < 1e-12);
    let a = loss_of(&[0.1, 0.5, -0.3, 2.0, 0.0, 1.0, -1.0, 0.2], 1, false).0;
    let b = loss_of(&[100.1, 100.5, 99.7, 102.0, 100.0, 101.0, 99.0, 100.2], 1, false).0;
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn predict_and_distribution() {
    assert_eq!(predict(&[1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0]), 2);
    assert_eq!(predict(&[0.4; 8]), 0);
    let p: [f64; 8] = [0.3, -1.0, 2.5, 2.4, 0.0, 1.0, -3.0, 0.2];
    let warped: Vec<f64> = p.iter().map(|x| x.exp() * 5.0 + 1.0).collect();
    assert_eq!(predict(&p), predict(&warped));

    assert!(candidate_distribution(&[1.0; 8]).iter().all(|&q| (q - 0.125).abs() < 1e-15));
    let d = candidate_distribution(&p);
    assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let shifted: Vec<f64> = p.iter().map(|x| x + 7.5).collect();
    for (a, b) in d.iter().zip(candidate_distribution(&shifted)) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    for (variant, seed) in [(Variant::Copinet, 20), (Variant::BackboneXe, 21)] {
        let (net, mut store) = model(variant, seed);
        scramble(&mut store, seed + 100, 0.1);
        let inst = generate_instance(seed).unwrap();
        let (_, grads) = net.loss_and_gradients(&store, &inst, &mut rng(0)).unwrap();
        let report = finite_difference_gradcheck(
            &mut store,
            &grads,
            Coverage::Sample { per_param: 6, seed },
            1e-4,
            |p| net.loss_value(p, &inst, &mut rng(0)),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-3, "{variant}: {report:?}");
    }
}
