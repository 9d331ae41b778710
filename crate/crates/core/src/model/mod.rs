//! The CoPINet family: a row/column-pooled encoder, contrast modules, a
//! rule-inference branch, the potential head and its two losses.

mod config;
mod loss;
mod network;

pub use config::{loss_name, parse_key_values, LossConfig, LossMode, ModelConfig, Sampling, Variant};
pub use loss::{candidate_distribution, contrast_loss, cross_entropy_loss, loss, predict};
pub use network::{
    encode_context, encode_pair, encode_pairs, infer_rule_distribution, panel_matrix, rule_embedding, sample_rules,
    contrast_module, Affine, ContrastMap, Copinet, Encoder, ForwardOutput, Inference, Residual, Stage, PANEL_EMBED,
    PANEL_HIDDEN, RULE_EMBED_WIDTH,
};

pub(crate) use config::parse_num;

#[cfg(test)]
mod tests;
