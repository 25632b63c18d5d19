//! The shared grounding model: encoders, anchor decoder and concept head.
//!
//! Parameters live in a single [`ParamStore`]. Both training branches build
//! their tapes against that store through [`Forward`], so they read and
//! update the same tensors.

mod decoder;
mod encoders;
mod layers;

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ConceptDictionary, EmbeddingTable, ParagraphSample, Sentence};
use crate::error::{Error, Result};
use crate::tensor::{Mat, ParamId, ParamStore, Var};

pub use decoder::{
    attention_centroid, attention_sum, box_rows_to_intervals, boxes_to_intervals, Decoder, DecoderLayer,
    DecoderState, DecoderTrace, GroundingPrediction, LayerState, LayerTrace,
};
pub use encoders::{
    clip_position_table, encode_sentences, modulated_positional_encoding, query_positions, AttentionProj,
    EncoderLayer, GruCell, QueryEncoder, VideoEncoder,
};
pub use layers::{Forward, Linear, Mlp, Norm, Probe};

use layers::Init;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub video_layers: usize,
    pub query_layers: usize,
    pub decoder_layers: usize,
    /// Hidden size of each recurrent direction.
    pub gru_hidden: usize,
    pub dropout: f64,
    /// Clip feature width `D_v`.
    pub feature_dim: usize,
    /// Word vector width.
    pub word_dim: usize,
    /// Seed for parameter initialization.
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || !self.d_model.is_multiple_of(4) {
            return bad(format!("d_model must be a positive multiple of 4, got {}", self.d_model));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("heads ({}) must divide d_model ({})", self.heads, self.d_model));
        }
        if self.video_layers == 0 || self.query_layers == 0 || self.decoder_layers == 0 {
            return bad("every stack needs at least one layer".into());
        }
        if self.ffn_dim == 0 || self.gru_hidden == 0 || self.feature_dim == 0 || self.word_dim == 0 {
            return bad("layer widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}

/// Every parameter group of the model.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub video: VideoEncoder,
    pub gru_forward: GruCell,
    pub gru_backward: GruCell,
    pub sentence_proj: Linear,
    pub query: QueryEncoder,
    pub decoder: Decoder,
    pub concept_proj: Linear,
}

/// The output of one branch forward.
#[derive(Clone, Debug)]
pub struct BranchOutput {
    /// Encoded video, `T x D`.
    pub memory: Var,
    pub state: DecoderState,
}

pub struct GroundingModel {
    config: ModelConfig,
    store: ParamStore,
    params: ModelParams,
    concept_head_calls: AtomicUsize,
}

impl Clone for GroundingModel {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            store: self.store.clone(),
            params: self.params.clone(),
            concept_head_calls: AtomicUsize::new(self.concept_head_calls()),
        }
    }
}

impl std::fmt::Debug for GroundingModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GroundingModel")
            .field("config", &self.config)
            .field("parameters", &self.store.num_scalars())
            .finish()
    }
}

impl GroundingModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init { store: &mut store, rng: ChaCha8Rng::seed_from_u64(config.init_seed) };
        let d = config.d_model;
        let video = VideoEncoder {
            input: init.linear("video.input", config.feature_dim, d),
            layers: (0..config.video_layers)
                .map(|i| EncoderLayer::new(&mut init, &format!("video.layer{i}"), d, config.ffn_dim, true))
                .collect(),
            norm: init.norm("video.norm", d),
        };
        let gru_forward = GruCell::new(&mut init, "text.gru_forward", config.word_dim, config.gru_hidden);
        let gru_backward = GruCell::new(&mut init, "text.gru_backward", config.word_dim, config.gru_hidden);
        let sentence_proj = init.linear("text.proj", 2 * config.gru_hidden, d);
        let query = QueryEncoder {
            paragraph_token: init.normal("query.paragraph_token", 1, d, 1.0),
            input_norm: init.norm("query.input_norm", d),
            layers: (0..config.query_layers)
                .map(|i| EncoderLayer::new(&mut init, &format!("query.layer{i}"), d, config.ffn_dim, false))
                .collect(),
            norm: init.norm("query.norm", d),
        };
        let decoder = Decoder {
            layers: (0..config.decoder_layers)
                .map(|i| DecoderLayer::new(&mut init, &format!("decoder.layer{i}"), d, config.ffn_dim))
                .collect(),
            norm: init.norm("decoder.norm", d),
            refine_head: init.mlp_zero_out("decoder.refine_head", d, d, 2),
        };
        let concept_proj = init.linear("concept.proj", config.word_dim, d);
        let params = ModelParams { video, gru_forward, gru_backward, sentence_proj, query, decoder, concept_proj };
        Ok(Self { config, store, params, concept_head_calls: AtomicUsize::new(0) })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Parameters of the concept head, which inference never reads.
    pub fn concept_param_ids(&self) -> Vec<ParamId> {
        self.params.concept_proj.ids()
    }

    /// Number of concept-head evaluations since construction.
    pub fn concept_head_calls(&self) -> usize {
        self.concept_head_calls.load(Ordering::Relaxed)
    }

    /// Encoded paragraph and sentence queries `Z_q`, `(N+1) x D`.
    pub fn encode_text(&self, fw: &mut Forward<'_>, sentences: &[Sentence], table: &EmbeddingTable) -> Var {
        let p = &self.params;
        let feats = encode_sentences(fw, &p.gru_forward, &p.gru_backward, &p.sentence_proj, sentences, table);
        p.query.forward(fw, feats, self.config.heads)
    }

    /// Encoded video memory, `L x D`.
    pub fn encode_video(&self, fw: &mut Forward<'_>, features: &Mat) -> Var {
        self.params.video.forward(fw, features, self.config.heads)
    }

    pub fn decode(&self, fw: &mut Forward<'_>, memory: Var, queries: Var) -> DecoderState {
        let len = fw.graph.shape(memory).0;
        let pos = fw.constant(clip_position_table(len, self.config.d_model));
        self.params.decoder.forward(fw, memory, queries, pos, self.config.heads)
    }

    /// Video encoder and decoder for one branch; `queries` comes from
    /// [`Self::encode_text`] and may be shared between branches.
    pub fn branch(&self, fw: &mut Forward<'_>, features: &Mat, queries: Var) -> BranchOutput {
        let memory = self.encode_video(fw, features);
        let state = self.decode(fw, memory, queries);
        BranchOutput { memory, state }
    }

    /// Concept logits `Z_q · (E W + b)ᵀ`, `(N+1) x K`.
    pub fn concept_logits(&self, fw: &mut Forward<'_>, queries: Var, dict: &ConceptDictionary) -> Var {
        self.concept_head_calls.fetch_add(1, Ordering::Relaxed);
        let e = fw.constant(dict.embeddings.clone());
        let keys = fw.linear(&self.params.concept_proj, e);
        fw.graph.matmul_bt(queries, keys)
    }

    /// Inference-branch forward on the sample's own video.
    pub fn infer(&self, sample: &ParagraphSample, table: &EmbeddingTable) -> GroundingPrediction {
        self.trace(sample, table).prediction()
    }

    /// Inference forward returning every decoder layer's values.
    pub fn trace(&self, sample: &ParagraphSample, table: &EmbeddingTable) -> DecoderTrace {
        let mut fw = Forward::eval(&self.store);
        let q = self.encode_text(&mut fw, &sample.sentences, table);
        let out = self.branch(&mut fw, &sample.features.to_mat(), q);
        out.state.trace(&fw.graph)
    }
}

#[cfg(test)]
mod tests;
