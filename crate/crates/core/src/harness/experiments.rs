use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::parallel::Execution;
use super::stats::median;
use super::train::{train_on, RunReport, TrainConfig};
use crate::error::{Error, Result};
use crate::gradcore::SeedStream;
use crate::model::{ModelConfig, Variant};
use crate::rpmgen::ProblemInstance;

/// Memoizes finished runs by configuration and training-set identity, so
/// drivers that share a run train it once.
#[derive(Debug, Default)]
pub struct RunCache {
    runs: HashMap<String, RunReport>,
}

impl RunCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    fn key(config: &TrainConfig, train: &[ProblemInstance], val: &[ProblemInstance], test: &[ProblemInstance]) -> String {
        let seeds = |d: &[ProblemInstance]| {
            let mut h = crc32fast::Hasher::new();
            for inst in d {
                h.update(&inst.seed.to_le_bytes());
            }
            format!("{}:{:08x}", d.len(), h.finalize())
        };
        format!(
            "{}|{}|{}|{}",
            serde_json::to_string(config).expect("config serializes"),
            seeds(train),
            seeds(val),
            seeds(test)
        )
    }

    /// Runs `train_on` unless an identical run is already stored.
    pub fn run(
        &mut self,
        config: &TrainConfig,
        train: &[ProblemInstance],
        val: &[ProblemInstance],
        test: &[ProblemInstance],
        exec: Execution,
    ) -> Result<RunReport> {
        let key = Self::key(config, train, val, test);
        if let Some(r) = self.runs.get(&key) {
            return Ok(r.clone());
        }
        let (_, report) = train_on(config, train, val, Some(test), exec)?;
        self.runs.insert(key, report.clone());
        Ok(report)
    }

    pub fn to_json(&self) -> String {
        let mut entries: Vec<_> = self.runs.iter().collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        serde_json::to_string(&entries).expect("runs serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let entries: Vec<(String, RunReport)> =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("run cache: {e}")))?;
        Ok(Self {
            runs: entries.into_iter().collect(),
        })
    }
}

/// `base` with the architecture swapped for `variant` and both seeds set.
/// Sampling, temperature, baseline and sizes carry over.
pub fn variant_config(base: &TrainConfig, variant: Variant, seed: u64) -> TrainConfig {
    let model = ModelConfig {
        variant,
        loss: crate::model::LossConfig {
            mode: variant.default_loss(),
            ..base.model.loss
        },
        seed,
        ..base.model
    };
    TrainConfig {
        model,
        master_seed: seed,
        ..*base
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub test_accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

impl SeedResult {
    fn from_report(seed: u64, r: &RunReport) -> Self {
        Self {
            seed,
            test_accuracy: r.test_accuracy.unwrap_or(0.0),
            best_epoch: r.best_epoch,
            epochs_run: r.epochs.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub runs: Vec<SeedResult>,
    pub median_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn median(&self, v: Variant) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == v).map(|r| r.median_accuracy)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,seed,test_accuracy,best_epoch,epochs_run\n");
        for row in &self.rows {
            for r in &row.runs {
                let _ = writeln!(s, "{},{},{:.6},{},{}", row.variant, r.seed, r.test_accuracy, r.best_epoch, r.epochs_run);
            }
            let _ = writeln!(s, "{},median,{:.6},,", row.variant, row.median_accuracy);
        }
        s
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<14} {:>10}  per seed\n", "variant", "median");
        for row in &self.rows {
            let per: Vec<String> = row.runs.iter().map(|r| format!("{:.2}%", 100.0 * r.test_accuracy)).collect();
            let _ = writeln!(s, "{:<14} {:>9.2}%  {}", row.variant.name(), 100.0 * row.median_accuracy, per.join(" "));
        }
        s
    }
}

/// Trains the four presets on shared data for every seed.
pub fn ablation_suite(
    base: &TrainConfig,
    train: &[ProblemInstance],
    val: &[ProblemInstance],
    test: &[ProblemInstance],
    seeds: &[u64],
    exec: Execution,
    cache: &mut RunCache,
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let mut runs = Vec::new();
        for &seed in seeds {
            log::info!("ablation: {variant}, seed {seed}");
            let report = cache.run(&variant_config(base, variant, seed), train, val, test, exec)?;
            runs.push(SeedResult::from_report(seed, &report));
        }
        let accs: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
        rows.push(AblationRow {
            variant,
            median_accuracy: median(&accs).expect("seeds are non-empty"),
            runs,
        });
    }
    Ok(AblationReport { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub size: usize,
    pub runs: Vec<SeedResult>,
    pub median_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub variant: Variant,
    pub points: Vec<SweepPoint>,
}

/// Training subsets for a sweep: prefixes of one fixed shuffle of `0..n`,
/// each returned in ascending index order so the largest size equal to `n`
/// is the full set as given.
pub fn nested_subsets(n: usize, sizes: &[usize], seed: u64) -> Result<Vec<Vec<usize>>> {
    if sizes.is_empty() {
        return Err(Error::Config("no sizes given".into()));
    }
    if sizes.contains(&0) {
        return Err(Error::Config("training-set size 0 is not allowed".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("sizes must be strictly increasing, got {sizes:?}")));
    }
    if let Some(&max) = sizes.last().filter(|&&m| m > n) {
        return Err(Error::Config(format!("size {max} exceeds the {n} available training instances")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut SeedStream::new(seed).split_named("sweep-subsets").rng());
    Ok(sizes
        .iter()
        .map(|&s| {
            let mut v = order[..s].to_vec();
            v.sort_unstable();
            v
        })
        .collect())
}

impl SweepReport {
    pub fn medians(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.median_accuracy).collect()
    }

    /// Number of decreases between consecutive medians and the largest one.
    pub fn inversions(&self) -> (usize, f64) {
        let m = self.medians();
        let drops: Vec<f64> = m.windows(2).map(|w| w[0] - w[1]).filter(|&d| d > 0.0).collect();
        (drops.len(), drops.iter().copied().fold(0.0, f64::max))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("size,seed,test_accuracy,best_epoch,epochs_run\n");
        for p in &self.points {
            for r in &p.runs {
                let _ = writeln!(s, "{},{},{:.6},{},{}", p.size, r.seed, r.test_accuracy, r.best_epoch, r.epochs_run);
            }
            let _ = writeln!(s, "{},median,{:.6},,", p.size, p.median_accuracy);
        }
        s
    }

    /// Median accuracy against log training-set size as a standalone SVG.
    pub fn to_svg(&self) -> String {
        let (w, h, margin) = (640.0, 400.0, 60.0);
        let xs: Vec<f64> = self.points.iter().map(|p| (p.size as f64).ln()).collect();
        let (x0, x1) = (xs.first().copied().unwrap_or(0.0), xs.last().copied().unwrap_or(1.0));
        let span = if x1 > x0 { x1 - x0 } else { 1.0 };
        let px = |x: f64| margin + (x - x0) / span * (w - 2.0 * margin);
        let py = |a: f64| h - margin - a * (h - 2.0 * margin);
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
             <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
            m = margin,
            b = h - margin,
            r = w - margin
        );
        for tick in 0..=4 {
            let a = tick as f64 / 4.0;
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{:.0}%</text>",
                margin - 6.0,
                py(a) + 4.0,
                100.0 * a
            );
        }
        for (p, &x) in self.points.iter().zip(&xs) {
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
                px(x),
                h - margin + 18.0,
                p.size
            );
            for r in &p.runs {
                let _ = writeln!(
                    s,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"#999\"/>",
                    px(x),
                    py(r.test_accuracy)
                );
            }
        }
        let pts: Vec<String> = self
            .points
            .iter()
            .zip(&xs)
            .map(|(p, &x)| format!("{:.2},{:.2}", px(x), py(p.median_accuracy)))
            .collect();
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f5fbf\" stroke-width=\"2\"/>", pts.join(" "));
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">training instances (log scale)</text>",
            w / 2.0,
            h - 15.0
        );
        let _ = writeln!(
            s,
            "<text x=\"16\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">test accuracy ({})</text>",
            h / 2.0,
            h / 2.0,
            self.variant
        );
        s.push_str("</svg>\n");
        s
    }
}

/// Trains `base`'s variant on nested training subsets for every seed,
/// scoring each on the same test set.
#[allow(clippy::too_many_arguments)]
pub fn size_sweep(
    base: &TrainConfig,
    train: &[ProblemInstance],
    val: &[ProblemInstance],
    test: &[ProblemInstance],
    sizes: &[usize],
    seeds: &[u64],
    exec: Execution,
    cache: &mut RunCache,
) -> Result<SweepReport> {
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let subsets = nested_subsets(train.len(), sizes, base.master_seed)?;
    let mut points = Vec::new();
    for (&size, idx) in sizes.iter().zip(&subsets) {
        let subset: Vec<ProblemInstance> = idx.iter().map(|&i| train[i].clone()).collect();
        let mut runs = Vec::new();
        for &seed in seeds {
            log::info!("sweep: size {size}, seed {seed}");
            let cfg = variant_config(base, base.model.variant, seed);
            let report = cache.run(&cfg, &subset, val, test, exec)?;
            runs.push(SeedResult::from_report(seed, &report));
        }
        let accs: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
        points.push(SweepPoint {
            size,
            median_accuracy: median(&accs).expect("seeds are non-empty"),
            runs,
        });
    }
    Ok(SweepReport {
        variant: base.model.variant,
        points,
    })
}
