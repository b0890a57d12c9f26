//! The neural model: a shared BiLSTM encoder feeding a biaffine parse head,
//! a masked-language-modeling head and a word-ordering head.

mod encoder;
mod lm_heads;
mod mst;
mod parse_head;

pub use lm_heads::{MlmItem, WoShuffle};
pub use mst::{decode_single_root, max_arborescence};
pub use parse_head::ParseDistribution;

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use ndarray::{ArrayD, IxDyn};
use numkernel::{read_checkpoint, write_checkpoint, Snapshot, Value};

use crate::data::{Alphabets, Sentence, UNK_POS};
use crate::error::{Result, UdError};

pub type TrainRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> TrainRng {
    TrainRng::seed_from_u64(seed)
}

/// Every width and rate of the network. Defaults are the full-scale
/// configuration; tests shrink them.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    pub pos_dim: usize,
    pub char_filters: usize,
    pub char_window: usize,
    pub lstm_layers: usize,
    /// Per-direction BiLSTM hidden size; encoder output is twice this.
    pub lstm_hidden: usize,
    pub arc_mlp_dim: usize,
    pub label_mlp_dim: usize,
    pub wo_dim: usize,
    /// Dimension of precomputed external contextual vectors; 0 disables the
    /// hook.
    pub lm_dim: usize,
    pub embed_dropout: f64,
    pub recurrent_dropout: f64,
    /// Fraction of positions shuffled for the word-ordering objective.
    pub wo_shuffle_rate: f64,
    /// Mask already-placed words out of later word-ordering softmaxes.
    pub wo_exclude_consumed: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 100,
            char_dim: 50,
            pos_dim: 50,
            char_filters: 50,
            char_window: 3,
            lstm_layers: 3,
            lstm_hidden: 512,
            arc_mlp_dim: 512,
            label_mlp_dim: 128,
            wo_dim: 512,
            lm_dim: 0,
            embed_dropout: 0.33,
            recurrent_dropout: 0.33,
            wo_shuffle_rate: 1.0,
            wo_exclude_consumed: false,
        }
    }
}

impl ModelConfig {
    /// A small configuration for unit tests and synthetic experiments.
    pub fn tiny() -> Self {
        ModelConfig {
            word_dim: 16,
            char_dim: 8,
            pos_dim: 8,
            char_filters: 8,
            char_window: 3,
            lstm_layers: 1,
            lstm_hidden: 24,
            arc_mlp_dim: 24,
            label_mlp_dim: 12,
            wo_dim: 16,
            lm_dim: 0,
            embed_dropout: 0.33,
            recurrent_dropout: 0.33,
            wo_shuffle_rate: 1.0,
            wo_exclude_consumed: false,
        }
    }

    /// Word-level input dimension: word + char-CNN + POS (+ external).
    pub fn input_dim(&self) -> usize {
        self.word_dim + self.char_filters + self.pos_dim + self.lm_dim
    }

    pub fn encoder_dim(&self) -> usize {
        2 * self.lstm_hidden
    }
}

/// A sentence converted to alphabet indices, ready for the encoder. ROOT is
/// not included; parse-mode encoding prepends it.
#[derive(Debug, Clone)]
pub struct IndexedSentence {
    pub word_idx: Vec<usize>,
    pub char_idx: Vec<Vec<usize>>,
    pub pos_idx: Vec<usize>,
    pub gold_heads: Option<Vec<usize>>,
    /// Per-token label class when the deprel exists in the label alphabet.
    pub gold_labels: Option<Vec<Option<usize>>>,
    /// Optional external contextual vectors, one per token.
    pub e_lm: Option<Vec<Vec<f64>>>,
}

impl IndexedSentence {
    pub fn len(&self) -> usize {
        self.word_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_idx.is_empty()
    }
}

pub(crate) struct LstmDir {
    pub w_x: Value,
    pub w_h: Value,
    pub b: Value,
}

pub(crate) struct BiLstmLayer {
    pub fwd: LstmDir,
    pub bwd: LstmDir,
}

pub(crate) struct EncoderParams {
    pub word_emb: Value,
    pub char_emb: Value,
    pub pos_emb: Value,
    pub root_emb: Value,
    pub conv_w: Value,
    pub conv_b: Value,
    pub layers: Vec<BiLstmLayer>,
}

pub(crate) struct ParseHeadParams {
    pub arc_head_w: Value,
    pub arc_head_b: Value,
    pub arc_dep_w: Value,
    pub arc_dep_b: Value,
    pub label_head_w: Value,
    pub label_head_b: Value,
    pub label_dep_w: Value,
    pub label_dep_b: Value,
    pub arc_u1: Value,
    pub arc_u2: Value,
    pub arc_u3: Value,
    pub arc_b: Value,
    pub label_u: Value,
    pub label_w_head: Value,
    pub label_w_dep: Value,
    pub label_b: Value,
}

pub(crate) struct WoParams {
    pub map_w: Value,
    pub map_b: Value,
    pub init_w: Value,
    pub init_b: Value,
    pub lstm: LstmDir,
    pub score_u: Value,
}

pub(crate) struct MlmParams {
    pub out_w: Value,
    pub out_b: Value,
}

/// One parser instance: parameters plus the alphabets they were built over.
pub struct Model {
    pub cfg: ModelConfig,
    pub alphabets: Alphabets,
    pub(crate) encoder: EncoderParams,
    pub(crate) parse: ParseHeadParams,
    pub(crate) wo: WoParams,
    pub(crate) mlm: MlmParams,
}

fn uniform(rng: &mut TrainRng, shape: &[usize], bound: f64) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-bound..bound))
}

fn xavier(rng: &mut TrainRng, rows: usize, cols: usize) -> ArrayD<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rng, &[rows, cols], bound)
}

fn zeros(shape: &[usize]) -> ArrayD<f64> {
    ArrayD::zeros(IxDyn(shape))
}

fn lstm_dir(name: &str, input: usize, hidden: usize, rng: &mut TrainRng) -> LstmDir {
    LstmDir {
        w_x: Value::param(format!("{name}.w_x"), xavier(rng, input, 4 * hidden)),
        w_h: Value::param(format!("{name}.w_h"), xavier(rng, hidden, 4 * hidden)),
        b: Value::param(format!("{name}.b"), zeros(&[4 * hidden])),
    }
}

impl Model {
    pub fn new(cfg: ModelConfig, alphabets: Alphabets, seed: u64) -> Model {
        Model::with_pretrained(cfg, alphabets, seed, None)
    }

    /// Build a model, optionally seeding the word table from pretrained
    /// vectors; vocabulary forms missing from the file keep their random
    /// uniform(-0.1, 0.1) rows and stay trainable either way.
    pub fn with_pretrained(
        cfg: ModelConfig,
        alphabets: Alphabets,
        seed: u64,
        pretrained: Option<&HashMap<String, Vec<f64>>>,
    ) -> Model {
        let mut rng = rng_from_seed(seed);
        let mut word_table = uniform(&mut rng, &[alphabets.words.len(), cfg.word_dim], 0.1);
        if let Some(table) = pretrained {
            for idx in 0..alphabets.words.len() {
                let form = alphabets.words.symbol(idx);
                let hit = table
                    .get(form)
                    .or_else(|| table.get(&form.to_lowercase()));
                if let Some(vec) = hit {
                    for (j, v) in vec.iter().enumerate() {
                        word_table[[idx, j]] = *v;
                    }
                }
            }
        }

        let encoder = EncoderParams {
            word_emb: Value::param("encoder.word_emb", word_table),
            char_emb: Value::param(
                "encoder.char_emb",
                uniform(&mut rng, &[alphabets.chars.len(), cfg.char_dim], 0.1),
            ),
            pos_emb: Value::param(
                "encoder.pos_emb",
                uniform(&mut rng, &[alphabets.pos.len(), cfg.pos_dim], 0.1),
            ),
            root_emb: Value::param(
                "encoder.root_emb",
                uniform(&mut rng, &[cfg.word_dim + cfg.char_filters + cfg.pos_dim], 0.1),
            ),
            conv_w: Value::param(
                "encoder.conv_w",
                xavier(&mut rng, cfg.char_window * cfg.char_dim, cfg.char_filters),
            ),
            conv_b: Value::param("encoder.conv_b", zeros(&[cfg.char_filters])),
            layers: (0..cfg.lstm_layers)
                .map(|i| {
                    let input = if i == 0 { cfg.input_dim() } else { cfg.encoder_dim() };
                    BiLstmLayer {
                        fwd: lstm_dir(&format!("encoder.lstm{i}.fwd"), input, cfg.lstm_hidden, &mut rng),
                        bwd: lstm_dir(&format!("encoder.lstm{i}.bwd"), input, cfg.lstm_hidden, &mut rng),
                    }
                })
                .collect(),
        };

        let enc = cfg.encoder_dim();
        let n_labels = alphabets.n_label_classes();
        let a = cfg.arc_mlp_dim;
        let l = cfg.label_mlp_dim;
        let mut label_u = zeros(&[n_labels, l, l]);
        for k in 0..n_labels {
            let slice = xavier(&mut rng, l, l);
            label_u
                .index_axis_mut(ndarray::Axis(0), k)
                .assign(&slice.into_dimensionality::<ndarray::Ix2>().unwrap());
        }
        let parse = ParseHeadParams {
            arc_head_w: Value::param("parse.arc_head.w", xavier(&mut rng, enc, a)),
            arc_head_b: Value::param("parse.arc_head.b", zeros(&[a])),
            arc_dep_w: Value::param("parse.arc_dep.w", xavier(&mut rng, enc, a)),
            arc_dep_b: Value::param("parse.arc_dep.b", zeros(&[a])),
            label_head_w: Value::param("parse.label_head.w", xavier(&mut rng, enc, l)),
            label_head_b: Value::param("parse.label_head.b", zeros(&[l])),
            label_dep_w: Value::param("parse.label_dep.w", xavier(&mut rng, enc, l)),
            label_dep_b: Value::param("parse.label_dep.b", zeros(&[l])),
            arc_u1: Value::param("parse.arc.u1", xavier(&mut rng, a, a)),
            arc_u2: Value::param("parse.arc.u2", uniform(&mut rng, &[a], 0.01)),
            arc_u3: Value::param("parse.arc.u3", uniform(&mut rng, &[a], 0.01)),
            arc_b: Value::param("parse.arc.b", zeros(&[])),
            label_u: Value::param("parse.label.u", label_u),
            label_w_head: Value::param("parse.label.w_head", xavier(&mut rng, n_labels, l)),
            label_w_dep: Value::param("parse.label.w_dep", xavier(&mut rng, n_labels, l)),
            label_b: Value::param("parse.label.b", zeros(&[n_labels])),
        };

        let wo = WoParams {
            map_w: Value::param("wo.map.w", xavier(&mut rng, enc, cfg.wo_dim)),
            map_b: Value::param("wo.map.b", zeros(&[cfg.wo_dim])),
            init_w: Value::param("wo.init.w", xavier(&mut rng, cfg.wo_dim, cfg.wo_dim)),
            init_b: Value::param("wo.init.b", zeros(&[cfg.wo_dim])),
            lstm: lstm_dir("wo.lstm", cfg.wo_dim, cfg.wo_dim, &mut rng),
            score_u: Value::param("wo.score.u", uniform(&mut rng, &[cfg.wo_dim], 0.1)),
        };

        let mlm = MlmParams {
            out_w: Value::param("mlm.out.w", xavier(&mut rng, enc, alphabets.words.len())),
            out_b: Value::param("mlm.out.b", zeros(&[alphabets.words.len()])),
        };

        Model { cfg, alphabets, encoder, parse, wo, mlm }
    }

    /// Every trainable parameter in a stable order. The encoder parameters
    /// appear exactly once and are shared by all three objectives.
    pub fn params(&self) -> Vec<Value> {
        let mut out = vec![
            self.encoder.word_emb.clone(),
            self.encoder.char_emb.clone(),
            self.encoder.pos_emb.clone(),
            self.encoder.root_emb.clone(),
            self.encoder.conv_w.clone(),
            self.encoder.conv_b.clone(),
        ];
        for layer in &self.encoder.layers {
            for dir in [&layer.fwd, &layer.bwd] {
                out.push(dir.w_x.clone());
                out.push(dir.w_h.clone());
                out.push(dir.b.clone());
            }
        }
        out.extend([
            self.parse.arc_head_w.clone(),
            self.parse.arc_head_b.clone(),
            self.parse.arc_dep_w.clone(),
            self.parse.arc_dep_b.clone(),
            self.parse.label_head_w.clone(),
            self.parse.label_head_b.clone(),
            self.parse.label_dep_w.clone(),
            self.parse.label_dep_b.clone(),
            self.parse.arc_u1.clone(),
            self.parse.arc_u2.clone(),
            self.parse.arc_u3.clone(),
            self.parse.arc_b.clone(),
            self.parse.label_u.clone(),
            self.parse.label_w_head.clone(),
            self.parse.label_w_dep.clone(),
            self.parse.label_b.clone(),
            self.wo.map_w.clone(),
            self.wo.map_b.clone(),
            self.wo.init_w.clone(),
            self.wo.init_b.clone(),
            self.wo.lstm.w_x.clone(),
            self.wo.lstm.w_h.clone(),
            self.wo.lstm.b.clone(),
            self.wo.score_u.clone(),
            self.mlm.out_w.clone(),
            self.mlm.out_b.clone(),
        ]);
        out
    }

    pub fn find_param(&self, name: &str) -> Option<Value> {
        self.params().into_iter().find(|p| p.name() == Some(name))
    }

    pub fn snapshot(&self) -> Snapshot {
        numkernel::snapshot_of(&self.params())
    }

    pub fn restore(&self, snap: &Snapshot) {
        numkernel::restore_into(&self.params(), snap);
    }

    /// Convert a sentence to indices. `e_lm` must match the token count when
    /// supplied, and its width must match the configured `lm_dim`.
    pub fn index_sentence(&self, s: &Sentence, e_lm: Option<&[Vec<f64>]>) -> Result<IndexedSentence> {
        if let Some(vectors) = e_lm {
            if vectors.len() != s.len() {
                return Err(UdError::invalid(format!(
                    "contextual vectors cover {} tokens, sentence has {}",
                    vectors.len(),
                    s.len()
                )));
            }
            if let Some(bad) = vectors.iter().find(|v| v.len() != self.cfg.lm_dim) {
                return Err(UdError::invalid(format!(
                    "contextual vector of dimension {} does not match configured {}",
                    bad.len(),
                    self.cfg.lm_dim
                )));
            }
        }
        let gold_heads = s.heads();
        let gold_labels = if s.tokens.iter().any(|t| t.deprel.is_some()) {
            Some(
                s.tokens
                    .iter()
                    .map(|t| t.deprel.as_deref().and_then(|d| self.alphabets.label_class(d)))
                    .collect(),
            )
        } else {
            None
        };
        Ok(IndexedSentence {
            word_idx: s.tokens.iter().map(|t| self.alphabets.word_index(&t.form)).collect(),
            char_idx: s.tokens.iter().map(|t| self.alphabets.char_indices(&t.form)).collect(),
            pos_idx: s
                .tokens
                .iter()
                .map(|t| {
                    if t.upos == UNK_POS {
                        crate::data::UNK
                    } else {
                        self.alphabets.pos_index(&t.upos)
                    }
                })
                .collect(),
            gold_heads,
            gold_labels,
            e_lm: e_lm.map(|v| v.to_vec()),
        })
    }

    // ---- persistence ----

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut ckpt = std::fs::File::create(dir.join("model.ckpt"))?;
        write_checkpoint(&mut ckpt, &self.snapshot())?;
        std::fs::write(dir.join("alphabets.json"), self.alphabets.to_json()?)?;
        std::fs::write(dir.join("model.json"), serde_json::to_string_pretty(&self.cfg)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Model> {
        let cfg: ModelConfig =
            serde_json::from_str(&std::fs::read_to_string(dir.join("model.json"))?)?;
        let alphabets = Alphabets::from_json(&std::fs::read_to_string(dir.join("alphabets.json"))?)?;
        let model = Model::new(cfg, alphabets, 0);
        let mut f = std::fs::File::open(dir.join("model.ckpt"))?;
        let snap = read_checkpoint(&mut f)?;
        let params = model.params();
        if snap.len() != params.len() {
            return Err(UdError::invalid(format!(
                "checkpoint has {} arrays, model expects {}",
                snap.len(),
                params.len()
            )));
        }
        model.restore(&snap);
        Ok(model)
    }
}
