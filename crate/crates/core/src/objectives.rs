//! Token-masked and area-masked language modelling.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::vocab::{MASK, SPECIALS};
use crate::data::{BlockId, EncodedDocument};
use crate::encoder::{apply_linear, apply_norm, linear, norm, TokenInput};
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Scalar, Var};
use crate::spatial::QuadBox;

/// Smallest side, in page units, of an area grown from a degenerate box.
pub const MIN_AREA_EXTENT: f64 = 0.01;

static EMPTY_MASK_EVENTS: AtomicUsize = AtomicUsize::new(0);

/// Number of MLM losses evaluated on a plan with nothing masked.
pub fn empty_mask_events() -> usize {
    EMPTY_MASK_EVENTS.load(Ordering::Relaxed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AreaSamplerConfig {
    /// Success probability of the geometric span-length prior.
    pub p: f64,
    /// Expansion multiplier `c`: sides grow by `1 + e·c`.
    pub expansion: f64,
    pub target_fraction: f64,
}

impl Default for AreaSamplerConfig {
    fn default() -> Self {
        AreaSamplerConfig {
            p: 0.2,
            expansion: 1.0,
            target_fraction: 0.15,
        }
    }
}

impl AreaSamplerConfig {
    pub fn lambda(&self) -> f64 {
        -(1.0 - self.p).ln()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Config(format!("area sampler p = {} outside (0, 1)", self.p)));
        }
        if !(self.expansion >= 0.0 && self.expansion.is_finite()) {
            return Err(Error::Config(format!("expansion multiplier {} invalid", self.expansion)));
        }
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return Err(Error::Config(format!("target fraction {} outside (0, 1]", self.target_fraction)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskingConfig {
    pub area: AreaSamplerConfig,
    /// Share of the tokens left after area masking that are token-masked.
    pub token_rate: f64,
    pub mask_token_prob: f64,
    pub random_token_prob: f64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        MaskingConfig {
            area: AreaSamplerConfig::default(),
            token_rate: 0.15,
            mask_token_prob: 0.8,
            random_token_prob: 0.1,
        }
    }
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<()> {
        self.area.validate()?;
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.token_rate) || !unit(self.mask_token_prob) || !unit(self.random_token_prob) {
            return Err(Error::Config("masking rates must lie in [0, 1]".into()));
        }
        if self.mask_token_prob + self.random_token_prob > 1.0 {
            return Err(Error::Config("mask and random replacement probabilities exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaskSource {
    None,
    Tmlm,
    Amlm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaskAction {
    MaskToken,
    RandomToken(usize),
    Keep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub source: MaskSource,
    pub action: Option<MaskAction>,
    pub original: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskingPlan {
    pub entries: Vec<PlanEntry>,
    /// Blocks chosen by the area sampler.
    pub area_blocks: BTreeSet<BlockId>,
}

impl MaskingPlan {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn masked_positions(&self) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].source != MaskSource::None)
            .collect()
    }

    pub fn count(&self, source: MaskSource) -> usize {
        self.entries.iter().filter(|e| e.source == source).count()
    }

    /// Model input with replacements applied; boxes are left untouched.
    pub fn apply(&self, input: &TokenInput) -> Result<TokenInput> {
        if input.len() != self.entries.len() {
            return Err(Error::Contract(format!(
                "plan covers {} tokens, input has {}",
                self.entries.len(),
                input.len()
            )));
        }
        let mut out = input.clone();
        for (id, e) in out.ids.iter_mut().zip(&self.entries) {
            match e.action {
                Some(MaskAction::MaskToken) => *id = MASK,
                Some(MaskAction::RandomToken(r)) => *id = r,
                Some(MaskAction::Keep) | None => {}
            }
        }
        Ok(out)
    }

    /// Every token of a selected block is area-masked and no other token is.
    pub fn is_block_atomic(&self, doc: &EncodedDocument) -> bool {
        doc.block_positions.iter().all(|(b, pos)| {
            let want = self.area_blocks.contains(b);
            pos.iter()
                .all(|&p| (self.entries[p].source == MaskSource::Amlm) == want)
        }) && doc
            .token_blocks
            .iter()
            .zip(&self.entries)
            .all(|(b, e)| b.is_some() || e.source == MaskSource::None)
    }
}

/// Expansion ratio from an exponential law truncated to `[0, 1]`, drawn
/// by inverting its CDF.
pub fn sample_expansion<R: Rng + ?Sized>(rng: &mut R, config: &AreaSamplerConfig) -> f64 {
    let lambda = config.lambda();
    let u: f64 = rng.gen();
    let e = -(1.0 - u * (1.0 - (-lambda).exp())).ln() / lambda;
    e.clamp(0.0, 1.0)
}

/// CDF of the truncated exponential on `[0, 1]`.
pub fn expansion_cdf(x: f64, lambda: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        (1.0 - (-lambda * x).exp()) / (1.0 - (-lambda).exp())
    }
}

/// Axis-aligned area around the seed's center whose sides are the seed's
/// scaled by `1 + e·c`, clamped to the page.
pub fn expand_area(seed: &QuadBox, e: f64, c: f64) -> QuadBox {
    let (x0, y0, x1, y1) = seed.bounds();
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let grow = 1.0 + e * c;
    let w = if x1 > x0 { x1 - x0 } else { MIN_AREA_EXTENT };
    let h = if y1 > y0 { y1 - y0 } else { MIN_AREA_EXTENT };
    let (hw, hh) = (w * grow / 2.0, h * grow / 2.0);
    QuadBox::from_rect(
        (cx - hw).max(0.0),
        (cy - hh).max(0.0),
        (cx + hw).min(1.0),
        (cy + hh).min(1.0),
    )
}

/// Grow areas around random unselected seed blocks until the share of
/// area-masked tokens reaches the target. Blocks join when their center
/// lies in an area; the last area is kept whole.
pub fn select_area_masked_blocks<R: Rng + ?Sized>(
    doc: &EncodedDocument,
    rng: &mut R,
    config: &AreaSamplerConfig,
) -> BTreeSet<BlockId> {
    let blocks: Vec<(BlockId, QuadBox, usize)> = doc
        .block_positions
        .iter()
        .map(|(&b, pos)| (b, doc.input.boxes[pos[0]], pos.len()))
        .collect();
    let total: usize = blocks.iter().map(|b| b.2).sum();
    let goal = config.target_fraction * total as f64;
    let mut selected = BTreeSet::new();
    let mut masked = 0usize;
    while (masked as f64) < goal && selected.len() < blocks.len() {
        let free: Vec<usize> = (0..blocks.len())
            .filter(|&k| !selected.contains(&blocks[k].0))
            .collect();
        let seed = free[rng.gen_range(0..free.len())];
        let e = sample_expansion(rng, config);
        let area = expand_area(&blocks[seed].1, e, config.expansion);
        for &k in &free {
            if k == seed || area.contains(blocks[k].1.center()) {
                selected.insert(blocks[k].0);
                masked += blocks[k].2;
            }
        }
    }
    selected
}

/// Area masking, then token masking over the remaining block tokens, then
/// the replacement policy for every masked token.
pub fn build_masking_plan<R: Rng + ?Sized>(
    doc: &EncodedDocument,
    vocab_size: usize,
    rng: &mut R,
    config: &MaskingConfig,
) -> Result<MaskingPlan> {
    if vocab_size <= SPECIALS.len() {
        return Err(Error::Config(format!("vocabulary of {vocab_size} has no ordinary tokens")));
    }
    let area_blocks = select_area_masked_blocks(doc, rng, &config.area);
    let mut entries = Vec::with_capacity(doc.len());
    for (pos, block) in doc.token_blocks.iter().enumerate() {
        let source = match block {
            None => MaskSource::None,
            Some(b) if area_blocks.contains(b) => MaskSource::Amlm,
            Some(_) if rng.gen_bool(config.token_rate) => MaskSource::Tmlm,
            Some(_) => MaskSource::None,
        };
        let action = if source == MaskSource::None {
            None
        } else {
            let r: f64 = rng.gen();
            Some(if r < config.mask_token_prob {
                MaskAction::MaskToken
            } else if r < config.mask_token_prob + config.random_token_prob {
                MaskAction::RandomToken(rng.gen_range(SPECIALS.len()..vocab_size))
            } else {
                MaskAction::Keep
            })
        };
        entries.push(PlanEntry {
            source,
            action,
            original: doc.input.ids[pos],
        });
    }
    Ok(MaskingPlan { entries, area_blocks })
}

/// Parameters of the masked-token prediction head under `objectives.mlm.`:
/// a dense transform with GELU and layer norm, then a vocabulary decoder.
pub fn init_mlm_head<T: Scalar, R: Rng + ?Sized>(hidden: usize, vocab_size: usize, rng: &mut R) -> ParamStore<T> {
    let mut s = ParamStore::new();
    linear(&mut s, "objectives.mlm.transform", hidden, hidden, rng);
    norm(&mut s, "objectives.mlm.ln", hidden);
    linear(&mut s, "objectives.mlm.decoder", vocab_size, hidden, rng);
    s
}

/// Vocabulary logits `[M × V]` for hidden rows `[M × H]`.
pub fn mlm_head_logits<'a, T: Scalar>(g: &mut Graph<'a, T>, store: &'a ParamStore<T>, h: Var, eps: f64) -> Result<Var> {
    let x = apply_linear(g, store, "objectives.mlm.transform", h)?;
    let x = g.gelu(x);
    let x = apply_norm(g, store, "objectives.mlm.ln", x, eps)?;
    apply_linear(g, store, "objectives.mlm.decoder", x)
}

/// Mean cross-entropy of the prediction head over the masked rows of
/// `hidden` given `(position, original id)` targets; `None` when nothing
/// is masked.
pub fn mlm_objective<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    store: &'a ParamStore<T>,
    hidden: Var,
    targets: &[(usize, usize)],
    eps: f64,
) -> Result<Option<Var>> {
    if targets.is_empty() {
        EMPTY_MASK_EVENTS.fetch_add(1, Ordering::Relaxed);
        return Ok(None);
    }
    let rows: Vec<usize> = targets.iter().map(|t| t.0).collect();
    let h = g.gather_rows(hidden, &rows)?;
    let logits = mlm_head_logits(g, store, h, eps)?;
    let ids: Vec<Option<usize>> = targets.iter().map(|t| Some(t.1)).collect();
    Ok(Some(g.cross_entropy(logits, &ids, None)?))
}

/// `(position, original id)` of every masked token.
pub fn mlm_targets(plan: &MaskingPlan) -> Vec<(usize, usize)> {
    plan.entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.source != MaskSource::None)
        .map(|(i, e)| (i, e.original))
        .collect()
}

/// Mean cross-entropy over masked positions of `[N×V]` logits against the
/// original ids; zero when nothing is masked.
pub fn mlm_loss<T: Scalar>(g: &mut Graph<'_, T>, logits: Var, plan: &MaskingPlan) -> Result<Var> {
    let n = g.shape(logits)[0];
    if n != plan.len() {
        return Err(Error::Contract(format!("plan covers {} tokens, logits have {n} rows", plan.len())));
    }
    let targets: Vec<Option<usize>> = plan
        .entries
        .iter()
        .map(|e| (e.source != MaskSource::None).then_some(e.original))
        .collect();
    if targets.iter().all(Option::is_none) {
        EMPTY_MASK_EVENTS.fetch_add(1, Ordering::Relaxed);
    }
    g.cross_entropy(logits, &targets, None)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::{encode_document, generate, Document, GeneratorConfig, TextBlock, Vocab};
    use crate::numerics::Tensor;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn corpus(n: usize) -> (Vocab, Vec<EncodedDocument>) {
        let v = Vocab::standard();
        let docs = generate(&GeneratorConfig::default(), n).unwrap();
        let enc = docs.iter().map(|d| encode_document(d, &v, 128).unwrap()).collect();
        (v, enc)
    }

    #[test]
    fn lambda_matches_formula() {
        assert!((AreaSamplerConfig::default().lambda() - 0.223144).abs() < 1e-6);
    }

    #[test]
    fn samples_follow_truncated_exponential() {
        let cfg = AreaSamplerConfig::default();
        let mut r = rng(1);
        let mut xs: Vec<f64> = (0..100_000).map(|_| sample_expansion(&mut r, &cfg)).collect();
        assert!(xs.iter().all(|x| (0.0..=1.0).contains(x)));
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = expansion_cdf(x, cfg.lambda());
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS = {ks}");
    }

    #[test]
    fn zero_expansion_keeps_seed() {
        let b = QuadBox::from_rect(0.25, 0.5, 0.375, 0.625);
        assert_eq!(expand_area(&b, 0.0, 4.0), b);
    }

    #[test]
    fn full_expansion_grows_five_fold_and_clamps() {
        let b = QuadBox::from_rect(0.4, 0.45, 0.5, 0.5);
        let a = expand_area(&b, 1.0, 4.0);
        assert!((a.width() - 0.5).abs() < 1e-12);
        assert!((a.height() - 0.25).abs() < 1e-12);
        let edge = expand_area(&QuadBox::from_rect(0.0, 0.0, 0.1, 0.1), 1.0, 4.0);
        let (ex0, ey0, ex1, ey1) = edge.bounds();
        assert_eq!((ex0, ey0), (0.0, 0.0));
        assert!((ex1 - 0.3).abs() < 1e-12 && (ey1 - 0.3).abs() < 1e-12);
    }

    #[test]
    fn expansion_preserves_center() {
        let b = QuadBox::from_rect(0.25, 0.25, 0.75, 0.5);
        let a = expand_area(&b, 0.25, 1.0);
        assert_eq!(a.center(), b.center());
    }

    #[test]
    fn degenerate_seed_grows_from_center() {
        let b = QuadBox::from_rect(0.5, 0.5, 0.5, 0.5);
        let a = expand_area(&b, 0.0, 4.0);
        assert!((a.width() - MIN_AREA_EXTENT).abs() < 1e-12);
        assert!(a.contains(b.center()));
    }

    #[test]
    fn single_block_document_is_fully_selected() {
        let v = Vocab::standard();
        let mut d = Document::new(100.0, 100.0);
        d.blocks = vec![TextBlock::rect(0, "Total Cost", 10.0, 10.0, 60.0, 20.0)];
        d.order = vec![0];
        let enc = encode_document(&d, &v, 128).unwrap();
        let sel = select_area_masked_blocks(&enc, &mut rng(0), &AreaSamplerConfig::default());
        assert_eq!(sel.into_iter().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn plans_are_atomic_disjoint_and_reproducible() {
        let (v, docs) = corpus(200);
        let cfg = MaskingConfig::default();
        for (k, d) in docs.iter().enumerate() {
            let plan = build_masking_plan(d, v.len(), &mut rng(k as u64), &cfg).unwrap();
            assert!(plan.is_block_atomic(d));
            for e in &plan.entries {
                assert_eq!(e.action.is_some(), e.source != MaskSource::None);
            }
            assert_eq!(plan, build_masking_plan(d, v.len(), &mut rng(k as u64), &cfg).unwrap());
            let masked = plan.apply(&d.input).unwrap();
            assert_eq!(masked.boxes, d.input.boxes);
        }
    }

    #[test]
    fn replacement_policy_rates() {
        let (v, docs) = corpus(300);
        let cfg = MaskingConfig::default();
        let mut counts = [0usize; 3];
        for (k, d) in docs.iter().enumerate() {
            let plan = build_masking_plan(d, v.len(), &mut rng(1000 + k as u64), &cfg).unwrap();
            for e in plan.entries.iter().filter_map(|e| e.action) {
                match e {
                    MaskAction::MaskToken => counts[0] += 1,
                    MaskAction::RandomToken(r) => {
                        assert!(r >= SPECIALS.len() && r < v.len());
                        counts[1] += 1
                    }
                    MaskAction::Keep => counts[2] += 1,
                }
            }
        }
        let n: usize = counts.iter().sum();
        let f = |c: usize| c as f64 / n as f64;
        assert!((f(counts[0]) - 0.8).abs() < 0.03, "{counts:?}");
        assert!((f(counts[1]) - 0.1).abs() < 0.02, "{counts:?}");
    }

    fn graph_loss(logits: &Tensor<f64>, plan: &MaskingPlan) -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(logits.clone());
        let l = mlm_loss(&mut g, x, plan)?;
        g.value(l).item()
    }

    fn plan_with(sources: &[MaskSource], originals: &[usize]) -> MaskingPlan {
        MaskingPlan {
            entries: sources
                .iter()
                .zip(originals)
                .map(|(&source, &original)| PlanEntry {
                    source,
                    action: (source != MaskSource::None).then_some(MaskAction::MaskToken),
                    original,
                })
                .collect(),
            area_blocks: BTreeSet::new(),
        }
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let plan = plan_with(&[MaskSource::Amlm, MaskSource::None, MaskSource::Tmlm], &[5, 6, 7]);
        let loss = graph_loss(&Tensor::zeros(&[3, 10]), &plan).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_logits_give_near_zero() {
        let plan = plan_with(&[MaskSource::Amlm, MaskSource::Tmlm], &[1, 2]);
        let logits = Tensor::from_fn(&[2, 4], |i| if i == 1 || i == 6 { 50.0 } else { 0.0 });
        assert!(graph_loss(&logits, &plan).unwrap() < 1e-20);
    }

    #[test]
    fn empty_plan_loss_is_zero_and_counted() {
        let before = empty_mask_events();
        let plan = plan_with(&[MaskSource::None, MaskSource::None], &[1, 2]);
        assert_eq!(graph_loss(&Tensor::zeros(&[2, 4]), &plan).unwrap(), 0.0);
        assert!(empty_mask_events() > before);
    }

    #[test]
    fn unmasked_logits_do_not_matter() {
        let plan = plan_with(&[MaskSource::Amlm, MaskSource::None, MaskSource::Tmlm], &[0, 1, 2]);
        let mut r = rng(3);
        let a = Tensor::from_fn(&[3, 5], |_| r.gen_range(-2.0..2.0));
        let mut b = a.clone();
        for x in &mut b.data_mut()[5..10] {
            *x += 17.0;
        }
        assert_eq!(graph_loss(&a, &plan).unwrap().to_bits(), graph_loss(&b, &plan).unwrap().to_bits());
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        let plan = plan_with(&[MaskSource::Amlm], &[0]);
        assert!(matches!(graph_loss(&Tensor::zeros(&[2, 4]), &plan), Err(Error::Contract(_))));
    }

    #[test]
    fn mask_fractions_stay_in_band() {
        let (v, docs) = corpus(2000);
        let cfg = MaskingConfig::default();
        let (mut amlm, mut all) = (0.0, 0.0);
        for (k, d) in docs.iter().enumerate() {
            let plan = build_masking_plan(d, v.len(), &mut rng(k as u64), &cfg).unwrap();
            let total = d.block_positions.values().map(Vec::len).sum::<usize>() as f64;
            amlm += plan.count(MaskSource::Amlm) as f64 / total;
            all += (plan.count(MaskSource::Amlm) + plan.count(MaskSource::Tmlm)) as f64 / total;
        }
        let n = docs.len() as f64;
        assert!((0.15..=0.19).contains(&(amlm / n)), "area fraction {}", amlm / n);
        assert!((all / n - 0.2775).abs() <= 0.01, "combined fraction {}", all / n);
    }
}
