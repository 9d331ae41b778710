use rand::Rng as _;

use super::config::{ModelConfig, Sampling};
use crate::error::{Error, Result};
use crate::gradcore::{Graph, ParamId, ParameterStore, Rng, SeedStream, Tensor, Var};
use crate::rpmgen::{Panel, ProblemInstance, NUM_ATTRIBUTES, NUM_CANDIDATES, NUM_CONTEXT, NUM_RULES, PANEL_PIXELS};

pub const PANEL_HIDDEN: usize = 128;
pub const PANEL_EMBED: usize = 64;
/// Embedding width of one attribute's rule.
pub const RULE_EMBED_WIDTH: usize = 8;

/// One affine map inside the graph's parameter store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Affine {
    fn build(store: &mut ParameterStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<Self> {
        let (weight, bias) = store.add_affine(name, fan_in, fan_out, rng)?;
        Ok(Self { weight, bias })
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        g.affine(x, w, b)
    }
}

/// Panel embedder, row/column combiner and latent transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Encoder {
    pub embed_hidden: Affine,
    pub embed_out: Affine,
    pub combiner: Affine,
    pub latent: Affine,
}

impl Encoder {
    fn build(store: &mut ParameterStore, prefix: &str, dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            embed_hidden: Affine::build(store, &format!("{prefix}.embed_hidden"), PANEL_PIXELS, PANEL_HIDDEN, rng)?,
            embed_out: Affine::build(store, &format!("{prefix}.embed_out"), PANEL_HIDDEN, PANEL_EMBED, rng)?,
            combiner: Affine::build(store, &format!("{prefix}.combiner"), PANEL_EMBED, PANEL_EMBED, rng)?,
            latent: Affine::build(store, &format!("{prefix}.latent"), PANEL_EMBED, dim, rng)?,
        })
    }

    /// `[k, 1024] -> [k, 64]`, the same weights for every panel.
    pub fn embed_panels(&self, g: &mut Graph<'_>, pixels: Var) -> Result<Var> {
        let h = self.embed_hidden.apply(g, pixels)?;
        let h = g.relu(h);
        let e = self.embed_out.apply(g, h)?;
        Ok(g.relu(e))
    }

    /// Row/column features from panel embeddings. Each entry of `lines` lists
    /// the embedding rows of one grid row or column; `owners[i]` lists the
    /// line indices pooled into output row `i`.
    fn pool(&self, g: &mut Graph<'_>, embeddings: Var, lines: &[Vec<usize>], owners: &[Vec<usize>]) -> Result<Var> {
        let sums = g.sum_groups(embeddings, lines)?;
        let c = self.combiner.apply(g, sums)?;
        let c = g.relu(c);
        let pooled = g.sum_groups(c, owners)?;
        self.latent.apply(g, pooled)
    }
}

/// Rows of the `[16, 1024]` panel matrix forming grid position `pos`
/// (row-major) when candidate `j` completes the grid.
fn grid_row(pos: usize, j: usize) -> usize {
    if pos < NUM_CONTEXT {
        pos
    } else {
        NUM_CONTEXT + j
    }
}

/// Grid rows then grid columns, as lists of positions.
fn grid_lines(positions: usize) -> Vec<Vec<usize>> {
    let rows = (0..3).map(|r| (0..3).map(|c| r * 3 + c).filter(|&p| p < positions).collect());
    let cols = (0..3).map(|c| (0..3).map(|r| r * 3 + c).filter(|&p| p < positions).collect());
    rows.chain(cols).collect()
}

pub fn panel_matrix(panels: &[&Panel]) -> Result<Tensor> {
    let mut v = Vec::with_capacity(panels.len() * PANEL_PIXELS);
    for p in panels {
        if p.pixels.len() != PANEL_PIXELS {
            return Err(Error::invalid(format!("panel has {} pixels, expected {PANEL_PIXELS}", p.pixels.len())));
        }
        v.extend(p.pixels.iter().map(|&x| f64::from(x) / 255.0));
    }
    Tensor::new(vec![panels.len(), PANEL_PIXELS], v)
}

fn check_context(context: &[Panel]) -> Result<()> {
    if context.len() != NUM_CONTEXT {
        return Err(Error::invalid(format!("expected {NUM_CONTEXT} context panels, got {}", context.len())));
    }
    Ok(())
}

/// Encodes the context completed by each candidate: `[len(candidates), D]`.
pub fn encode_pairs(g: &mut Graph<'_>, enc: &Encoder, context: &[Panel], candidates: &[Panel]) -> Result<Var> {
    check_context(context)?;
    let panels: Vec<&Panel> = context.iter().chain(candidates).collect();
    let x = g.constant(panel_matrix(&panels)?);
    let e = enc.embed_panels(g, x)?;
    let layout = grid_lines(NUM_CONTEXT + 1);
    let mut lines = Vec::with_capacity(layout.len() * candidates.len());
    let mut owners = Vec::with_capacity(candidates.len());
    for j in 0..candidates.len() {
        owners.push((lines.len()..lines.len() + layout.len()).collect());
        lines.extend(layout.iter().map(|l| l.iter().map(|&p| grid_row(p, j)).collect()));
    }
    enc.pool(g, e, &lines, &owners)
}

/// Features of the grid completed by `candidate`: `[1, D]`.
pub fn encode_pair(g: &mut Graph<'_>, enc: &Encoder, context: &[Panel], candidate: &Panel) -> Result<Var> {
    encode_pairs(g, enc, context, std::slice::from_ref(candidate))
}

/// Features of the context alone, the empty slot simply missing from its
/// row and column: `[1, D]`.
pub fn encode_context(g: &mut Graph<'_>, enc: &Encoder, context: &[Panel]) -> Result<Var> {
    check_context(context)?;
    let panels: Vec<&Panel> = context.iter().collect();
    let x = g.constant(panel_matrix(&panels)?);
    let e = enc.embed_panels(g, x)?;
    let lines = grid_lines(NUM_CONTEXT);
    let owners = vec![(0..lines.len()).collect()];
    enc.pool(g, e, &lines, &owners)
}

/// The map `h` applied to the summed candidate features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContrastMap {
    pub affine: Affine,
    pub normalize: bool,
    /// Adds the plain candidate mean to the learned summary, so `h` starts
    /// from full subtraction of the shared part.
    pub mean_skip: bool,
}

/// `F_j - h(concat(sum_k F_k, rule_embed))` for every row `j` of `features`.
pub fn contrast_module(g: &mut Graph<'_>, features: Var, rule_embed: Option<Var>, h: &ContrastMap) -> Result<Var> {
    let shape = g.shape(features).to_vec();
    if shape.len() != 2 {
        return Err(Error::invalid(format!("contrast expects [K, D] features, got {shape:?}")));
    }
    let s = g.sum_groups(features, &[(0..shape[0]).collect()])?;
    let input = match rule_embed {
        Some(r) => g.concat(&[s, r], 1)?,
        None => s,
    };
    let input = if h.normalize { g.instance_norm(input) } else { input };
    let mut common = h.affine.apply(g, input)?;
    if h.mean_skip {
        let mean = g.scale(s, 1.0 / shape[0] as f64);
        common = g.add(common, mean)?;
    }
    let common = g.reshape(common, vec![shape[1]])?;
    g.sub_bcast(features, common)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inference {
    pub encoder: Encoder,
    /// All N heads side by side: `D -> N*M`, zero-initialized.
    pub heads: Affine,
    /// Per attribute, an `[M, RULE_EMBED_WIDTH]` table.
    pub rule_tables: Vec<ParamId>,
}

/// `p(t_i | O)` as an `[N, M]` row-stochastic matrix.
pub fn infer_rule_distribution(g: &mut Graph<'_>, inf: &Inference, context: &[Panel]) -> Result<Var> {
    let z = encode_context(g, &inf.encoder, context)?;
    let logits = inf.heads.apply(g, z)?;
    let logits = g.reshape(logits, vec![NUM_ATTRIBUTES, NUM_RULES])?;
    g.softmax(logits, 1)
}

/// Rule weights fed to the contrast modules. Soft sampling returns `dist`
/// itself; hard sampling draws one Gumbel-perturbed one-hot per attribute
/// with the relaxed softmax carrying the gradient.
pub fn sample_rules(g: &mut Graph<'_>, dist: Var, sampling: Sampling, tau: f64, rng: &mut Rng) -> Result<Var> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    if sampling == Sampling::Soft {
        return Ok(dist);
    }
    let shape = g.shape(dist).to_vec();
    let (rows, m) = (shape[0], shape[1]);
    let noise: Vec<f64> = (0..rows * m)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect();
    let logp = g.log(dist);
    let noise = g.constant_from(shape.clone(), noise)?;
    let perturbed = g.add(logp, noise)?;
    let scaled = g.scale(perturbed, 1.0 / tau);
    let relaxed = g.softmax(scaled, 1)?;
    let mut hard = vec![0.0; rows * m];
    for (r, row) in g.value(relaxed).chunks_exact(m).enumerate() {
        hard[r * m + argmax(row)] = 1.0;
    }
    g.straight_through(hard, relaxed)
}

/// Concatenated per-attribute embeddings weighted by `rules`: `[1, N*8]`.
pub fn rule_embedding(g: &mut Graph<'_>, inf: &Inference, rules: Var) -> Result<Var> {
    let parts = (0..NUM_ATTRIBUTES)
        .map(|i| {
            let w = g.select_rows(rules, &[i])?;
            let table = g.param(inf.rule_tables[i]);
            g.matmul(w, table)
        })
        .collect::<Result<Vec<_>>>()?;
    g.concat(&parts, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Residual {
    pub first: Affine,
    pub second: Affine,
}

impl Residual {
    /// `relu(F + second(relu(first(F))))`.
    pub fn apply(&self, g: &mut Graph<'_>, f: Var) -> Result<Var> {
        let h = self.first.apply(g, f)?;
        let h = g.relu(h);
        let h = self.second.apply(g, h)?;
        let y = g.add(f, h)?;
        Ok(g.relu(y))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    /// Absent in the backbone variant.
    pub contrast: Option<ContrastMap>,
    pub residual: Residual,
}

/// Parameter handles of one model; the values live in a [`ParameterStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Copinet {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub inference: Option<Inference>,
    pub stages: Vec<Stage>,
    pub head_hidden: Affine,
    pub head_out: Affine,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `[8]`, one per candidate in presentation order.
    pub potentials: Var,
    /// `[N, M]` when the inference branch is present.
    pub rule_distribution: Option<Var>,
    pub sampled_rules: Option<Var>,
}

impl Copinet {
    /// Architecture for `config` with freshly initialized weights.
    pub fn new(config: ModelConfig) -> Result<(Self, ParameterStore)> {
        config.validate()?;
        let d = config.feature_dim;
        let mut store = ParameterStore::new();
        let mut rng = SeedStream::new(config.seed).split_named("init").rng();
        let encoder = Encoder::build(&mut store, "encoder", d, &mut rng)?;
        let inference = if config.variant.has_inference() {
            let encoder = Encoder::build(&mut store, "inference.encoder", d, &mut rng)?;
            let heads = Affine::build(&mut store, "inference.heads", d, NUM_ATTRIBUTES * NUM_RULES, &mut rng)?;
            store.get_mut(heads.weight).values_mut().fill(0.0);
            let limit = (6.0 / (NUM_RULES + RULE_EMBED_WIDTH) as f64).sqrt();
            let rule_tables = (0..NUM_ATTRIBUTES)
                .map(|i| {
                    let v = (0..NUM_RULES * RULE_EMBED_WIDTH).map(|_| rng.gen_range(-limit..=limit)).collect();
                    store.add(format!("inference.rules{i}"), Tensor::new(vec![NUM_RULES, RULE_EMBED_WIDTH], v)?)
                })
                .collect::<Result<_>>()?;
            Some(Inference {
                encoder,
                heads,
                rule_tables,
            })
        } else {
            None
        };
        let embed_width = if inference.is_some() { NUM_ATTRIBUTES * RULE_EMBED_WIDTH } else { 0 };
        let stages = (0..config.repetitions)
            .map(|r| {
                let contrast = if config.variant.has_contrast() {
                    Some(ContrastMap {
                        affine: Affine::build(&mut store, &format!("stage{r}.contrast"), d + embed_width, d, &mut rng)?,
                        normalize: true,
                        mean_skip: true,
                    })
                } else {
                    None
                };
                Ok(Stage {
                    contrast,
                    residual: Residual {
                        first: Affine::build(&mut store, &format!("stage{r}.res_first"), d, d, &mut rng)?,
                        second: Affine::build(&mut store, &format!("stage{r}.res_second"), d, d, &mut rng)?,
                    },
                })
            })
            .collect::<Result<_>>()?;
        let head_hidden = Affine::build(&mut store, "head.hidden", d, d, &mut rng)?;
        let head_out = Affine::build(&mut store, "head.out", d, 1, &mut rng)?;
        Ok((
            Self {
                config,
                encoder,
                inference,
                stages,
                head_hidden,
                head_out,
            },
            store,
        ))
    }

    /// Builds the full forward pass into `g`, whose store must come from [`Copinet::new`]
    /// with the same config (or a checkpoint of it).
    pub fn forward(&self, g: &mut Graph<'_>, inst: &ProblemInstance, rng: &mut Rng) -> Result<ForwardOutput> {
        if inst.candidates.len() != NUM_CANDIDATES {
            return Err(Error::invalid(format!(
                "expected {NUM_CANDIDATES} candidates, got {}",
                inst.candidates.len()
            )));
        }
        let mut f = encode_pairs(g, &self.encoder, &inst.context, &inst.candidates)?;
        let (rule_distribution, sampled_rules, embed) = match &self.inference {
            Some(inf) => {
                let dist = infer_rule_distribution(g, inf, &inst.context)?;
                let rules = sample_rules(g, dist, self.config.loss.sampling, self.config.loss.tau, rng)?;
                let embed = rule_embedding(g, inf, rules)?;
                (Some(dist), Some(rules), Some(embed))
            }
            None => (None, None, None),
        };
        for stage in &self.stages {
            if let Some(h) = &stage.contrast {
                f = contrast_module(g, f, embed, h)?;
            }
            f = stage.residual.apply(g, f)?;
        }
        let h = self.head_hidden.apply(g, f)?;
        let h = g.relu(h);
        let out = self.head_out.apply(g, h)?;
        let potentials = g.reshape(out, vec![NUM_CANDIDATES])?;
        Ok(ForwardOutput {
            potentials,
            rule_distribution,
            sampled_rules,
        })
    }

    /// Potentials of `inst` under `params`.
    pub fn potentials(&self, params: &ParameterStore, inst: &ProblemInstance, rng: &mut Rng) -> Result<Vec<f64>> {
        let mut g = Graph::with_params(params);
        let out = self.forward(&mut g, inst, rng)?;
        Ok(g.value(out.potentials).to_vec())
    }

    /// `p(t_i | O)` row-major as `[N*M]`, or `None` without the inference branch.
    pub fn rule_distribution(&self, params: &ParameterStore, context: &[Panel]) -> Result<Option<Vec<f64>>> {
        let Some(inf) = &self.inference else { return Ok(None) };
        let mut g = Graph::with_params(params);
        let d = infer_rule_distribution(&mut g, inf, context)?;
        Ok(Some(g.value(d).to_vec()))
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
