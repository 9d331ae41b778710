use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::evaluate::{eval_rng, evaluate, EvalReport, TrainedModel};
use super::parallel::{par_map, Execution};
use crate::error::{Error, Result};
use crate::gradcore::{adam_step, load_checkpoint_into, save_checkpoint, AdamConfig, AdamState, Graph, SeedStream};
use crate::model::{loss, parse_key_values, parse_num, predict, Copinet, ModelConfig};
use crate::rpmgen::{read_dataset, write_atomic, ProblemInstance};

/// Optimization settings; dataset locations live in [`DataPaths`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best validation loss before stopping.
    pub patience: usize,
    /// Drives shuffling and rule sampling.
    pub master_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::preset(crate::model::Variant::Copinet),
            optimizer: AdamConfig::default(),
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            master_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.eps.is_nan() || o.eps <= 0.0 {
            return Err(Error::Config(format!("invalid optimizer settings {o:?}")));
        }
        self.model.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPaths {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: Option<PathBuf>,
}

/// Contents of a training config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainFile {
    pub config: TrainConfig,
    pub data: DataPaths,
}

const TRAIN_KEYS: [&str; 8] = [
    "batch_size",
    "max_epochs",
    "patience",
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "master_seed",
];

const DATA_KEYS: [&str; 3] = ["train_data", "val_data", "test_data"];

impl TrainConfig {
    fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| pairs.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        let mut config = TrainConfig {
            model: ModelConfig::from_pairs(pairs)?,
            ..TrainConfig::default()
        };
        if let Some(v) = get("batch_size") {
            config.batch_size = parse_num(v, "batch_size")?;
        }
        if let Some(v) = get("max_epochs") {
            config.max_epochs = parse_num(v, "max_epochs")?;
        }
        if let Some(v) = get("patience") {
            config.patience = parse_num(v, "patience")?;
        }
        if let Some(v) = get("lr") {
            config.optimizer.lr = parse_num(v, "lr")?;
        }
        if let Some(v) = get("beta1") {
            config.optimizer.beta1 = parse_num(v, "beta1")?;
        }
        if let Some(v) = get("beta2") {
            config.optimizer.beta2 = parse_num(v, "beta2")?;
        }
        if let Some(v) = get("adam_eps") {
            config.optimizer.eps = parse_num(v, "adam_eps")?;
        }
        if let Some(v) = get("master_seed") {
            config.master_seed = parse_num(v, "master_seed")?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Parses `key=value` settings without dataset keys.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_key_values(text)?;
        check_keys(&pairs, false)?;
        Self::from_pairs(&pairs)
    }

    pub fn to_text(&self) -> String {
        let o = &self.optimizer;
        format!(
            "{}batch_size={}\nmax_epochs={}\npatience={}\nlr={}\nbeta1={}\nbeta2={}\nadam_eps={}\nmaster_seed={}\n",
            self.model.to_text(),
            self.batch_size,
            self.max_epochs,
            self.patience,
            o.lr,
            o.beta1,
            o.beta2,
            o.eps,
            self.master_seed
        )
    }
}

fn check_keys(pairs: &[(String, String)], allow_data: bool) -> Result<()> {
    let known = |k: &str| {
        TRAIN_KEYS.contains(&k) || ModelConfig::KEYS.contains(&k) || (allow_data && DATA_KEYS.contains(&k))
    };
    match pairs.iter().find(|(k, _)| !known(k)) {
        Some((k, _)) => Err(Error::Config(format!("unknown key {k:?}"))),
        None => Ok(()),
    }
}

impl TrainFile {
    /// Parses `key=value` text. Relative dataset paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let pairs = parse_key_values(text)?;
        check_keys(&pairs, true)?;
        let get = |k: &str| pairs.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        let path = |k: &str| get(k).map(|v| base.join(v));
        let config = TrainConfig::from_pairs(&pairs)?;
        let data = DataPaths {
            train: path("train_data").ok_or_else(|| Error::Config("train_data is required".into()))?,
            val: path("val_data").ok_or_else(|| Error::Config("val_data is required".into()))?,
            test: path("test_data"),
        };
        Ok(Self { config, data })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-instance training loss over the epoch.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: String,
    pub config: TrainConfig,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were restored; 0 if no epoch improved on the start.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub steps: u64,
    pub test_accuracy: Option<f64>,
    pub test: Option<EvalReport>,
    /// Absent in deterministic mode.
    pub wall_clock_secs: Option<f64>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Mean loss and accuracy of `model` on `data`.
pub fn loss_and_accuracy(model: &TrainedModel, data: &[ProblemInstance], exec: Execution) -> Result<(f64, f64)> {
    let scored = par_map(data, exec.threads(), |_, inst| -> Result<(f64, bool)> {
        let mut g = Graph::with_params(&model.params);
        let out = model.net.forward(&mut g, inst, &mut eval_rng(inst))?;
        let l = loss(&mut g, out.potentials, inst.answer_index, &model.net.config.loss)?;
        Ok((g.value(l)[0], predict(g.value(out.potentials)) == inst.answer_index))
    });
    let scored = scored.into_iter().collect::<Result<Vec<_>>>()?;
    let n = scored.len().max(1) as f64;
    let loss = scored.iter().map(|s| s.0).sum::<f64>() / n;
    let acc = scored.iter().filter(|s| s.1).count() as f64 / n;
    Ok((loss, acc))
}

fn with_context(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}, batch {batch}: {m}")),
        other => other,
    }
}

/// Trains on in-memory data, restores the best-validation weights and, if
/// `test` is given, scores them there.
pub fn train_on(
    config: &TrainConfig,
    train: &[ProblemInstance],
    val: &[ProblemInstance],
    test: Option<&[ProblemInstance]>,
    exec: Execution,
) -> Result<(TrainedModel, RunReport)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let started = Instant::now();
    let (net, params) = Copinet::new(config.model)?;
    let mut model = TrainedModel { net, params };
    let mut adam = AdamState::new(&model.params, config.optimizer);
    let seeds = SeedStream::new(config.master_seed);
    let (shuffle_seeds, sample_seeds) = (seeds.split_named("shuffle"), seeds.split_named("sample"));
    let threads = exec.threads();

    let (mut best_val_loss, _) = loss_and_accuracy(&model, val, exec)?;
    let mut best = model.params.clone();
    let mut best_epoch = 0;
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_seeds.split(epoch as u64).rng());
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let step = adam.step_count();
            let results = par_map(batch, threads, |pos, &i| {
                let mut rng = sample_seeds.split(step).split(pos as u64).rng();
                model.net.loss_and_gradients(&model.params, &train[i], &mut rng)
            });
            let mut total: Option<crate::gradcore::Gradients> = None;
            for r in results {
                let (l, g) = r.map_err(|e| with_context(e, epoch, b))?;
                loss_sum += l;
                match &mut total {
                    Some(t) => t.add_assign(&g),
                    None => total = Some(g),
                }
            }
            model.params.zero_grads();
            model.params.accumulate(&total.expect("batches are non-empty"))?;
            adam_step(&mut model.params, &mut adam).map_err(|e| with_context(e, epoch, b))?;
        }
        let (val_loss, val_accuracy) = loss_and_accuracy(&model, val, exec)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("epoch {epoch}: validation loss {val_loss}")));
        }
        let train_loss = loss_sum / train.len() as f64;
        log::info!(
            "epoch {epoch}: train loss {train_loss:.5}, val loss {val_loss:.5}, val acc {:.2}%",
            100.0 * val_accuracy
        );
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            best_epoch = epoch;
            best.copy_values_from(&model.params)?;
        } else if epoch - best_epoch >= config.patience {
            stopped_early = epoch < config.max_epochs;
            log::info!("early stop after epoch {epoch}; best epoch {best_epoch}");
            break;
        }
    }
    model.params.copy_values_from(&best)?;
    model.params.zero_grads();
    let test = test.map(|t| evaluate(&model, t, exec)).transpose()?;
    let report = RunReport {
        variant: config.model.variant.to_string(),
        config: *config,
        seed: config.master_seed,
        epochs,
        best_epoch,
        best_val_loss,
        stopped_early,
        steps: adam.step_count(),
        test_accuracy: test.as_ref().map(|t| t.accuracy),
        test,
        wall_clock_secs: (!exec.deterministic).then(|| started.elapsed().as_secs_f64()),
    };
    Ok((model, report))
}

/// Full-batch ADAM on a single instance. Returns the training loss before
/// each of the `steps` updates, followed by the loss after the last one.
pub fn overfit_one(config: &TrainConfig, inst: &ProblemInstance, steps: usize) -> Result<Vec<f64>> {
    config.validate()?;
    let (net, mut params) = Copinet::new(config.model)?;
    let mut adam = AdamState::new(&params, config.optimizer);
    let samples = SeedStream::new(config.master_seed).split_named("sample");
    let mut losses = Vec::with_capacity(steps + 1);
    for step in 0..steps as u64 {
        let (l, g) = net.loss_and_gradients(&params, inst, &mut samples.split(step).rng())?;
        losses.push(l);
        params.zero_grads();
        params.accumulate(&g)?;
        adam_step(&mut params, &mut adam)?;
    }
    losses.push(net.loss_value(&params, inst, &mut samples.split(steps as u64).rng())?);
    Ok(losses)
}

/// Reads the datasets named in `file` and trains.
pub fn train(file: &TrainFile, exec: Execution) -> Result<(TrainedModel, RunReport)> {
    let train = read_dataset(&file.data.train)?;
    let val = read_dataset(&file.data.val)?;
    let test = file.data.test.as_deref().map(read_dataset).transpose()?;
    train_on(&file.config, &train, &val, test.as_deref(), exec)
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const MODEL_CONFIG_FILE: &str = "model.cfg";
pub const REPORT_FILE: &str = "report.json";

/// Writes checkpoint, model config and report into `dir`.
pub fn save_run(dir: &Path, model: &TrainedModel, report: &RunReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_checkpoint(&model.params, &dir.join(CHECKPOINT_FILE))?;
    write_atomic(&dir.join(MODEL_CONFIG_FILE), model.net.config.to_text().as_bytes())?;
    write_atomic(&dir.join(REPORT_FILE), report.to_json().as_bytes())
}

/// Loads a checkpoint together with its model config. Without an explicit
/// config path, `model.cfg` next to the checkpoint is used.
pub fn load_model(checkpoint: &Path, config: Option<&Path>) -> Result<TrainedModel> {
    let cfg_path = match config {
        Some(p) => p.to_path_buf(),
        None => checkpoint.with_file_name(MODEL_CONFIG_FILE),
    };
    let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let (net, mut params) = Copinet::new(ModelConfig::parse(&text)?)?;
    load_checkpoint_into(&mut params, checkpoint)?;
    Ok(TrainedModel { net, params })
}
