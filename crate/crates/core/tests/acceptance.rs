//! One line per acceptance criterion. The two training experiments take
//! hours on one core and only run with `COPINET_FULL_ACCEPTANCE=1`.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use copinet::gradcore::Graph;
use copinet::harness::{
    ablation_suite, invariance_audit, model_gradcheck, oracle_check, overfit_one, size_sweep, variant_config, Execution,
    PositionTagged, RunCache, TrainConfig, TrainedModel,
};
use copinet::model::{contrast_loss, cross_entropy_loss, Copinet, ModelConfig, Variant};
use copinet::rpmgen::{generate_dataset, generate_instance, instance_seed, ProblemInstance};

const FULL_ENV: &str = "COPINET_FULL_ACCEPTANCE";

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

struct Line {
    id: u32,
    name: &'static str,
    verdict: Verdict,
    elapsed: Duration,
    budget: Duration,
}

fn fresh(variant: Variant, seed: u64) -> TrainedModel {
    let (net, params) = Copinet::new(ModelConfig::preset(variant).with_seed(seed)).expect("preset builds");
    TrainedModel { net, params }
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn gradcheck() -> Verdict {
    let insts: Vec<ProblemInstance> = (0..20).map(|i| generate_instance(instance_seed(1, i)).unwrap()).collect();
    let s = model_gradcheck(&fresh(Variant::Copinet, 2), &insts, 8, 1e-4, Some(1e-3), 3, Execution::default()).unwrap();
    verdict(
        s.max_rel_error < 1e-3,
        format!(
            "max relative error {:.3e} over {} entries; {} relu-kink stencils re-measured (unscreened {:.3e})",
            s.max_rel_error, s.checked, s.kinks, s.raw_max_rel_error
        ),
    )
}

fn audit() -> Verdict {
    let data = generate_dataset(1000, 4).unwrap();
    let mut worst = 0.0f64;
    for variant in Variant::ALL {
        let r = invariance_audit(&fresh(variant, 5), &data, 6, Execution::default()).unwrap();
        worst = worst.max(r.max_deviation());
    }
    let model = fresh(Variant::Copinet, 5);
    let mutant = PositionTagged {
        inner: &model,
        strength: 1e-3,
    };
    let m = invariance_audit(&mutant, &data[..100], 6, Execution::default()).unwrap();
    verdict(
        worst == 0.0 && !m.passed(),
        format!("max deviation {worst:e} on 1000 instances; mutant flagged {} violations", m.violations.len()),
    )
}

fn loss_identities() -> Verdict {
    let mut g = Graph::new();
    let p = g.constant_from(vec![8], vec![0.0; 8]).unwrap();
    let cl = contrast_loss(&mut g, p, 2, 0.0).unwrap();
    let xe = cross_entropy_loss(&mut g, p, 2).unwrap();
    let (cl, xe) = (g.value(cl)[0], g.value(xe)[0]);

    // the same values through full networks whose output layer is zeroed
    let inst = generate_instance(7).unwrap();
    let through_model = |variant: Variant| {
        let mut m = fresh(variant, 0);
        for name in ["head.out.weight", "head.out.bias"] {
            let id = m.params.id(name).unwrap();
            m.params.get_mut(id).values_mut().fill(0.0);
        }
        let mut rng = copinet::gradcore::SeedStream::new(0).rng();
        m.net.loss_value(&m.params, &inst, &mut rng).unwrap()
    };
    let (cl_net, xe_net) = (through_model(Variant::Copinet), through_model(Variant::BackboneXe));
    let ok = (cl - 5.545177).abs() < 1e-6
        && (xe - 8f64.ln()).abs() < 1e-6
        && (cl_net - 5.545177).abs() < 1e-6
        && (xe_net - 8f64.ln()).abs() < 1e-6;
    verdict(ok, format!("contrast {cl:.7} / {cl_net:.7}, cross-entropy {xe:.7} / {xe_net:.7}"))
}

fn oracle() -> Verdict {
    let data = generate_dataset(10_000, 8).unwrap();
    let s = oracle_check(&data, Execution::default());
    verdict(
        s.passed(),
        format!("{}/{} correct, {} unique answers", s.accuracy.correct, s.accuracy.total, s.unique_answers),
    )
}

fn overfit() -> Verdict {
    let inst = generate_instance(9).unwrap();
    let cfg = variant_config(&TrainConfig::default(), Variant::Copinet, 0);
    let losses = overfit_one(&cfg, &inst, 500).unwrap();
    match losses.iter().position(|&l| l < 0.01) {
        Some(step) => Verdict::Pass(format!("loss {:.2e} after {step} steps", losses[step])),
        None => Verdict::Fail(format!("loss {:.3e} after 500 steps", losses[500])),
    }
}

fn reproducible() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    common::tiny_workspace(dir.path(), "16,6,6");
    let results = common::reproducibility(dir.path());
    let bad: Vec<&str> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    verdict(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} commands identical across two runs", results.len())
        } else {
            format!("differing: {}", bad.join(", "))
        },
    )
}

struct Experiments {
    train: Vec<ProblemInstance>,
    val: Vec<ProblemInstance>,
    test: Vec<ProblemInstance>,
    cache: RunCache,
}

impl Experiments {
    fn new() -> Self {
        Self {
            train: generate_dataset(5000, 100).unwrap(),
            val: generate_dataset(500, 200).unwrap(),
            test: generate_dataset(1000, 300).unwrap(),
            cache: RunCache::new(),
        }
    }
}

fn ablation(x: &mut Experiments) -> Verdict {
    let base = TrainConfig::default();
    let r = ablation_suite(&base, &x.train, &x.val, &x.test, &[0, 1, 2], Execution::deterministic(), &mut x.cache)
        .unwrap();
    print!("{}", r.table());
    let m = |v| 100.0 * r.median(v).unwrap();
    let (bb, xe, cl, full) = (m(Variant::BackboneXe), m(Variant::ContrastXe), m(Variant::ContrastCl), m(Variant::Copinet));
    let ok = bb + 20.0 <= xe && xe <= cl && cl <= full && full > 60.0;
    verdict(ok, format!("medians backbone-xe {bb:.2}, contrast-xe {xe:.2}, contrast-cl {cl:.2}, copinet {full:.2}"))
}

fn sweep(x: &mut Experiments) -> Verdict {
    let base = TrainConfig::default();
    let r = size_sweep(
        &base,
        &x.train,
        &x.val,
        &x.test,
        &[250, 500, 1000, 2000, 5000],
        &[0, 1, 2],
        Execution::deterministic(),
        &mut x.cache,
    )
    .unwrap();
    let (n, worst) = r.inversions();
    let medians: Vec<String> = r.points.iter().map(|p| format!("{}:{:.2}", p.size, 100.0 * p.median_accuracy)).collect();
    verdict(
        n == 0 || (n == 1 && worst <= 0.02),
        format!("medians {}; {n} inversion(s), largest {:.2} pts", medians.join(" "), 100.0 * worst),
    )
}

fn timed(id: u32, name: &'static str, budget_secs: u64, f: impl FnOnce() -> Verdict) -> Line {
    let start = Instant::now();
    let verdict = f();
    let line = Line {
        id,
        name,
        verdict,
        elapsed: start.elapsed(),
        budget: Duration::from_secs(budget_secs),
    };
    report(&line);
    line
}

fn report(l: &Line) {
    let over = l.elapsed > l.budget;
    let (tag, detail) = match &l.verdict {
        Verdict::Pass(d) if over => ("FAIL", format!("{d}; over time budget")),
        Verdict::Pass(d) => ("PASS", d.clone()),
        Verdict::Fail(d) => ("FAIL", d.clone()),
        Verdict::Skip(d) => ("SKIP", d.clone()),
    };
    println!(
        "[{tag}] {}. {:<22} {detail} ({:.1}s of {}s)",
        l.id,
        l.name,
        l.elapsed.as_secs_f64(),
        l.budget.as_secs()
    );
}

fn main() -> ExitCode {
    let full = std::env::var(FULL_ENV).is_ok_and(|v| v == "1");
    let mut lines = vec![
        timed(1, "gradient check", 300, gradcheck),
        timed(2, "invariance audit", 120, audit),
        timed(3, "loss identities", 1, loss_identities),
        timed(4, "oracle", 120, oracle),
    ];
    if full {
        let mut x = Experiments::new();
        lines.push(timed(5, "ablation ordering", 7200, || ablation(&mut x)));
        lines.push(timed(6, "dataset-size sweep", 10800, || sweep(&mut x)));
    } else {
        for (id, name) in [(5, "ablation ordering"), (6, "dataset-size sweep")] {
            let l = Line {
                id,
                name,
                verdict: Verdict::Skip(format!("set {FULL_ENV}=1 to run")),
                elapsed: Duration::ZERO,
                budget: Duration::ZERO,
            };
            report(&l);
            lines.push(l);
        }
    }
    lines.push(timed(7, "overfit one instance", 60, overfit));
    lines.push(timed(8, "CLI reproducibility", 600, reproducible));

    let failed = lines
        .iter()
        .filter(|l| matches!(l.verdict, Verdict::Fail(_)) || (matches!(l.verdict, Verdict::Pass(_)) && l.elapsed > l.budget))
        .count();
    println!("{} criteria checked, {failed} failed", lines.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
