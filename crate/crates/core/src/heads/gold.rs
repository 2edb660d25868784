use std::collections::BTreeMap;

use super::decode::{Entity, Link};
use super::{stc_mask, HeadLogits};
use crate::data::{Document, EncodedDocument};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Scalar, Var};

/// Per-position supervision for every head, derived from one document.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGold {
    pub entities: Vec<Entity>,
    pub links: Vec<Link>,
    /// Class of each initial token; `C` for every other real token.
    pub itc: Vec<Option<usize>>,
    /// `0` = STOP, `j+1` = successor `j`.
    pub stc: Vec<Option<usize>>,
    /// Row-major `N × N` link indicator.
    pub rel: Vec<f64>,
    pub bio: Vec<Option<usize>>,
}

/// BIO tags of `entities` over `n` positions (`0 = O`, `1+2c = B-c`,
/// `2+2c = I-c`).
pub fn bio_tags(entities: &[Entity], n: usize) -> Vec<usize> {
    let mut tags = vec![0; n];
    for e in entities {
        tags[e.tokens[0]] = 1 + 2 * e.class;
        for &t in &e.tokens[1..] {
            tags[t] = 2 + 2 * e.class;
        }
    }
    tags
}

/// Gold targets in the positions of `enc`. Entities or links touching
/// truncated blocks are left out.
pub fn spade_gold(enc: &EncodedDocument, doc: &Document, classes: &[String]) -> Result<HeadGold> {
    let n = enc.len();
    let class_index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(k, c)| (c.as_str(), k)).collect();
    let c_none = classes.len();
    let mut entities = Vec::new();
    let mut head_pos = BTreeMap::new();
    for e in &doc.entities {
        let &class = class_index
            .get(e.class.as_str())
            .ok_or_else(|| Error::Config(format!("entity class `{}` not in the head's class list {classes:?}", e.class)))?;
        if let Some(tokens) = enc.positions_of(&e.block_ids) {
            head_pos.insert(e.block_ids[0], tokens[0]);
            entities.push(Entity { class, tokens });
        }
    }
    let mut links: Vec<Link> = doc
        .links
        .iter()
        .filter_map(|[a, b]| {
            Some(Link {
                source: *head_pos.get(a)?,
                target: *head_pos.get(b)?,
            })
        })
        .collect();
    links.sort();
    links.dedup();

    let real = |i: usize| enc.input.mask[i];
    let mut itc: Vec<Option<usize>> = (0..n).map(|i| real(i).then_some(c_none)).collect();
    let mut stc: Vec<Option<usize>> = (0..n).map(|i| real(i).then_some(0)).collect();
    for e in &entities {
        itc[e.tokens[0]] = Some(e.class);
        for w in e.tokens.windows(2) {
            stc[w[0]] = Some(w[1] + 1);
        }
    }
    let mut rel = vec![0.0; n * n];
    for l in &links {
        rel[l.source * n + l.target] = 1.0;
    }
    let tags = bio_tags(&entities, n);
    let bio = (0..n).map(|i| real(i).then_some(tags[i])).collect();
    Ok(HeadGold {
        entities,
        links,
        itc,
        stc,
        rel,
        bio,
    })
}

/// Sum of the losses of every head present in `logits`: mean
/// cross-entropy for itc, stc and bio; mean weighted binary
/// cross-entropy over ordered pairs of distinct real tokens for rel.
pub fn head_losses<T: Scalar>(
    g: &mut Graph<'_, T>,
    logits: &HeadLogits,
    gold: &HeadGold,
    mask: &[bool],
    rel_pos_weight: f64,
) -> Result<Var> {
    let n = mask.len();
    let check = |name: &str, len: usize, want: usize| {
        if len != want {
            Err(Error::Contract(format!("{name} gold covers {len} entries, expected {want}")))
        } else {
            Ok(())
        }
    };
    let mut parts = Vec::new();
    if let Some(l) = logits.itc {
        check("itc", gold.itc.len(), n)?;
        parts.push(g.cross_entropy(l, &gold.itc, None)?);
    }
    if let Some(l) = logits.stc {
        check("stc", gold.stc.len(), n)?;
        let valid = stc_mask(mask);
        parts.push(g.cross_entropy(l, &gold.stc, Some(&valid))?);
    }
    if let Some(l) = logits.rel {
        check("rel", gold.rel.len(), n * n)?;
        let valid: Vec<bool> = (0..n * n).map(|e| mask[e / n] && mask[e % n] && e / n != e % n).collect();
        let targets: Vec<T> = gold.rel.iter().map(|&x| T::lit(x)).collect();
        parts.push(g.bce_with_logits(l, &targets, &valid, T::lit(rel_pos_weight))?);
    }
    if let Some(l) = logits.bio {
        check("bio", gold.bio.len(), n)?;
        parts.push(g.cross_entropy(l, &gold.bio, None)?);
    }
    let mut total = *parts
        .first()
        .ok_or_else(|| Error::Contract("no head produced logits".into()))?;
    for &p in &parts[1..] {
        total = g.add(total, p)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{encode_document, generate, GeneratorConfig, Vocab};
    use crate::heads::decode_bio;
    use crate::numerics::Tensor;

    fn classes() -> Vec<String> {
        ["header", "question", "answer"].iter().map(|s| s.to_string()).collect()
    }

    fn gold_for(n_docs: usize) -> Vec<(EncodedDocument, HeadGold)> {
        let v = Vocab::standard();
        generate(&GeneratorConfig::default(), n_docs)
            .unwrap()
            .iter()
            .map(|d| {
                let enc = encode_document(d, &v, 128).unwrap();
                let gold = spade_gold(&enc, d, &classes()).unwrap();
                (enc, gold)
            })
            .collect()
    }

    #[test]
    fn gold_round_trips_through_bio() {
        for (enc, gold) in gold_for(20) {
            let tags = bio_tags(&gold.entities, enc.len());
            assert_eq!(decode_bio(&tags), gold.entities);
        }
    }

    #[test]
    fn gold_successors_rebuild_entities() {
        use crate::heads::decode_entities_spade;
        for (enc, gold) in gold_for(20) {
            let n = enc.len();
            let c = classes().len();
            let itc = Tensor::from_fn(&[n, c + 1], |e| if gold.itc[e / (c + 1)] == Some(e % (c + 1)) { 1.0 } else { 0.0 });
            let stc = Tensor::from_fn(&[n, n + 1], |e| if gold.stc[e / (n + 1)] == Some(e % (n + 1)) { 1.0 } else { 0.0 });
            assert_eq!(decode_entities_spade(&itc, &stc, &enc.input.mask), gold.entities);
        }
    }

    #[test]
    fn unknown_class_is_config_error() {
        let v = Vocab::standard();
        let d = &generate(&GeneratorConfig::default(), 1).unwrap()[0];
        let enc = encode_document(d, &v, 128).unwrap();
        assert!(matches!(spade_gold(&enc, d, &["header".to_string()]), Err(Error::Config(_))));
    }

    fn losses(logits: HeadLogits, gold: &HeadGold, mask: &[bool], g: &mut Graph<'_, f64>) -> f64 {
        let l = head_losses(g, &logits, gold, mask, 1.0).unwrap();
        g.value(l).item().unwrap()
    }

    fn tiny_gold() -> HeadGold {
        HeadGold {
            entities: vec![Entity { class: 0, tokens: vec![0, 1] }],
            links: vec![],
            itc: vec![Some(0), Some(1)],
            stc: vec![Some(2), Some(0)],
            rel: vec![0.0, 1.0, 0.0, 0.0],
            bio: vec![Some(1), Some(2)],
        }
    }

    #[test]
    fn uniform_itc_loss_is_log_classes() {
        let mut g = Graph::new();
        let itc = g.constant(Tensor::zeros(&[2, 2]));
        let l = losses(HeadLogits { itc: Some(itc), ..Default::default() }, &tiny_gold(), &[true; 2], &mut g);
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn neutral_rel_loss_is_log_two() {
        let mut g = Graph::new();
        let rel = g.constant(Tensor::zeros(&[2, 2]));
        let l = losses(HeadLogits { rel: Some(rel), ..Default::default() }, &tiny_gold(), &[true; 2], &mut g);
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_give_near_zero() {
        let mut g = Graph::new();
        let big = 40.0;
        let itc = g.constant(Tensor::from_rows(&[&[big, 0.0], &[0.0, big]]).unwrap());
        let stc = g.constant(Tensor::from_rows(&[&[0.0, 0.0, big], &[big, 0.0, 0.0]]).unwrap());
        let rel = g.constant(Tensor::from_rows(&[&[0.0, big], &[-big, 0.0]]).unwrap());
        let bio = g.constant(Tensor::from_rows(&[&[0.0, big, 0.0], &[0.0, 0.0, big]]).unwrap());
        let logits = HeadLogits {
            itc: Some(itc),
            stc: Some(stc),
            rel: Some(rel),
            bio: Some(bio),
        };
        assert!(losses(logits, &tiny_gold(), &[true; 2], &mut g) < 1e-15);
    }

    #[test]
    fn missing_gold_is_contract_error() {
        let mut g: Graph<'_, f64> = Graph::new();
        let itc = g.constant(Tensor::zeros(&[3, 2]));
        let logits = HeadLogits { itc: Some(itc), ..Default::default() };
        assert!(matches!(head_losses(&mut g, &logits, &tiny_gold(), &[true; 3], 1.0), Err(Error::Contract(_))));
        assert!(matches!(head_losses(&mut g, &HeadLogits::default(), &tiny_gold(), &[true; 3], 1.0), Err(Error::Contract(_))));
    }
}
