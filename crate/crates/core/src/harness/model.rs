use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{RunConfig, Task};
use crate::data::{encode_document, Document, EncodedDocument, Vocab};
use crate::encoder::{self, EncoderConfig};
use crate::error::{Error, Result};
use crate::heads::{
    self, bio_probs, decode_bio, decode_entities_spade, decode_links, head_forward, head_losses, itc_probs,
    rel_probs, spade_gold, stc_probs, Entity, HeadGold, HeadKind, Link,
};
use crate::numerics::{Graph, ParamStore, Scalar, Var};
use crate::objectives::{self, init_mlm_head, mlm_objective};

/// Independent random streams of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Mask = 3,
    Dropout = 4,
    Subset = 5,
    Permute = 6,
}

/// Deterministic generator for `(seed, stream, index)`.
pub fn rng_for(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ (stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    r.set_stream(index);
    r
}

/// Heads trained and evaluated for a task.
pub fn head_kinds(task: Task, el_gold_entities: bool) -> Vec<HeadKind> {
    match task {
        Task::ElSpade if !el_gold_entities => vec![HeadKind::Itc, HeadKind::Stc, HeadKind::Rel],
        t => t.heads().to_vec(),
    }
}

/// Entity classes in first-seen order over `docs`.
pub fn collect_classes(docs: &[Document]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for d in docs {
        for e in &d.entities {
            if !out.contains(&e.class) {
                out.push(e.class.clone());
            }
        }
    }
    out
}

/// Encoder, task heads and everything needed to run them on raw
/// documents.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    /// Run configuration with `encoder.vocab_size` resolved.
    pub config: RunConfig,
    pub task: Task,
    pub vocab: Vocab,
    pub classes: Vec<String>,
    pub params: ParamStore<f32>,
    pub step: u64,
}

/// Entities and links expressed in token keys.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyedPrediction {
    pub entities: Vec<Entity>,
    pub links: Vec<Link>,
}

impl Model {
    /// Fresh encoder plus the parameters `task` needs.
    pub fn new(mut config: RunConfig, task: Task, vocab: Vocab, classes: Vec<String>) -> Result<Model> {
        if config.encoder.vocab_size == 0 {
            config.encoder.vocab_size = vocab.len();
        }
        if config.encoder.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "encoder.vocab_size {} does not match the vocabulary ({})",
                config.encoder.vocab_size,
                vocab.len()
            )));
        }
        config.validate()?;
        let mut rng = rng_for(config.seed, Stream::Init, 0);
        let mut params = encoder::init_params(&config.encoder, &mut rng)?;
        let mut head_rng = rng_for(config.seed, Stream::Init, 1);
        if task == Task::Pretrain {
            params.extend(init_mlm_head(config.encoder.hidden, vocab.len(), &mut head_rng));
        } else {
            let kinds = head_kinds(task, config.heads.el_gold_entities);
            params.extend(heads::init_params(&config.heads, &kinds, classes.len(), config.encoder.hidden, &mut head_rng)?);
        }
        Ok(Model {
            config,
            task,
            vocab,
            classes,
            params,
            step: 0,
        })
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.config.encoder
    }

    pub fn kinds(&self) -> Vec<HeadKind> {
        head_kinds(self.task, self.config.heads.el_gold_entities)
    }

    /// Whether inputs are sorted into canonical order before the forward
    /// pass. Only when nothing in the model or decoder sees the order.
    pub fn canonicalizes(&self) -> bool {
        !self.config.encoder.use_1d_positions && self.task.order_free()
    }

    pub fn prepare(&self, doc: &Document) -> Result<EncodedDocument> {
        let enc = encode_document(doc, &self.vocab, self.config.encoder.max_tokens)?;
        Ok(if self.canonicalizes() { enc.canonical() } else { enc })
    }

    pub fn gold(&self, enc: &EncodedDocument, doc: &Document) -> Result<HeadGold> {
        spade_gold(enc, doc, &self.classes)
    }

    /// Supervised loss of one prepared document.
    pub fn task_loss<'a>(
        &'a self,
        g: &mut Graph<'a, f32>,
        enc: &EncodedDocument,
        gold: &HeadGold,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let out = encoder::encode_graph(g, &self.params, &self.config.encoder, &enc.input, rng)?;
        let logits = head_forward(g, &self.params, out.hidden, &self.kinds())?;
        head_losses(g, &logits, gold, &enc.input.mask, self.config.heads.rel_pos_weight)
    }

    /// Masked-LM loss of one document under a masking plan.
    pub fn mlm_loss<'a>(
        &'a self,
        g: &mut Graph<'a, f32>,
        enc: &EncodedDocument,
        plan: &objectives::MaskingPlan,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Option<Var>> {
        let masked = plan.apply(&enc.input)?;
        let out = encoder::encode_graph(g, &self.params, &self.config.encoder, &masked, rng)?;
        let targets = objectives::mlm_targets(plan);
        mlm_objective(g, &self.params, out.hidden, &targets, self.config.encoder.layer_norm_eps)
    }

    /// Decoded prediction and gold for one document, both in token keys.
    pub fn predict(&self, doc: &Document) -> Result<(KeyedPrediction, KeyedPrediction)> {
        let enc = self.prepare(doc)?;
        let gold = self.gold(&enc, doc)?;
        let hidden = encoder::encode(&enc.input, &self.config.encoder, &self.params)?;
        let mask = &enc.input.mask;
        let mut pred = KeyedPrediction::default();
        match self.task {
            Task::Pretrain => return Err(Error::Contract("a pre-training checkpoint has no task heads".into())),
            Task::EeSpade => {
                let itc = itc_probs(&hidden, &self.params)?;
                let stc = stc_probs(&hidden, &self.params, mask)?;
                pred.entities = decode_entities_spade(&itc, &stc, mask);
            }
            Task::EeBio => {
                let p = bio_probs(&hidden, &self.params)?;
                let tags: Vec<usize> = (0..enc.len())
                    .map(|i| if mask[i] { heads::argmax(p.row(i)) } else { 0 })
                    .collect();
                pred.entities = decode_bio(&tags);
            }
            Task::ElSpade => {
                let entities = if self.config.heads.el_gold_entities {
                    gold.entities.clone()
                } else {
                    let itc = itc_probs(&hidden, &self.params)?;
                    let stc = stc_probs(&hidden, &self.params, mask)?;
                    decode_entities_spade(&itc, &stc, mask)
                };
                let rel = rel_probs(&hidden, &self.params)?;
                pred.links = decode_links(&rel, &entities, self.config.heads.link_threshold);
                pred.entities = entities;
            }
        }
        let gold = KeyedPrediction {
            entities: gold.entities,
            links: gold.links,
        };
        Ok((to_keys(&pred, &enc), to_keys(&gold, &enc)))
    }
}

fn to_keys(p: &KeyedPrediction, enc: &EncodedDocument) -> KeyedPrediction {
    let key = |i: usize| enc.token_keys[i];
    let mut links: Vec<Link> = p
        .links
        .iter()
        .map(|l| Link {
            source: key(l.source),
            target: key(l.target),
        })
        .collect();
    links.sort();
    KeyedPrediction {
        entities: p
            .entities
            .iter()
            .map(|e| Entity {
                class: e.class,
                tokens: e.tokens.iter().map(|&t| key(t)).collect(),
            })
            .collect(),
        links,
    }
}

/// Copy every `prefix` tensor of `from` into `to` where names and shapes
/// agree. Returns the names of `to` that kept their fresh values.
pub fn load_prefix<T: Scalar>(to: &mut ParamStore<T>, from: &ParamStore<T>, prefix: &str) -> Result<Vec<String>> {
    let mut initialized = Vec::new();
    let names: Vec<String> = to.names().cloned().collect();
    for name in names {
        match from.get(&name) {
            Ok(src) if name.starts_with(prefix) => {
                let dst = to.get_mut(&name).expect("name listed");
                if dst.shape() != src.shape() {
                    return Err(Error::dim("load_prefix", dst.shape(), src.shape()));
                }
                *dst = src.clone();
            }
            _ => initialized.push(name),
        }
    }
    Ok(initialized)
}
