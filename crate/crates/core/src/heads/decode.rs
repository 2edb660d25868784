use serde::{Deserialize, Serialize};

use crate::numerics::{Scalar, Tensor};

/// A class-labelled sequence of token positions; `tokens[0]` is the
/// initial token.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entity {
    pub class: usize,
    pub tokens: Vec<usize>,
}

/// A directed link between two entity head tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Link {
    pub source: usize,
    pub target: usize,
}

/// Index of the first maximum.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Successor of each real token after conflict resolution: `None` is
/// STOP. A token claimed by several sources goes to the most confident
/// one (lower position on ties); the others stop.
pub fn resolve_successors<T: Scalar>(p_stc: &Tensor<T>, mask: &[bool]) -> Vec<Option<usize>> {
    let n = mask.len();
    let mut succ: Vec<Option<usize>> = vec![None; n];
    for i in (0..n).filter(|&i| mask[i]) {
        let row = p_stc.row(i);
        let mut best = 0;
        for j in (0..n).filter(|&j| mask[j] && j != i) {
            if row[j + 1] > row[best] {
                best = j + 1;
            }
        }
        succ[i] = best.checked_sub(1);
    }
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let Some(j) = succ[i] else { continue };
        match owner[j] {
            Some(o) if p_stc.row(o)[j + 1] >= p_stc.row(i)[j + 1] => succ[i] = None,
            Some(o) => {
                succ[o] = None;
                owner[j] = Some(i);
            }
            None => owner[j] = Some(i),
        }
    }
    succ
}

/// Entities read off the SPADE graph: initial tokens are those whose most
/// likely class is not "non-initial" (the last column); each chain
/// follows resolved successors until STOP, a token already in the chain,
/// another initial token, or `N` tokens.
pub fn decode_entities_spade<T: Scalar>(p_itc: &Tensor<T>, p_stc: &Tensor<T>, mask: &[bool]) -> Vec<Entity> {
    let n = mask.len();
    let none_class = p_itc.cols() - 1;
    let class: Vec<Option<usize>> = (0..n)
        .map(|i| {
            let c = argmax(p_itc.row(i));
            (mask[i] && c != none_class).then_some(c)
        })
        .collect();
    let succ = resolve_successors(p_stc, mask);
    let mut out = Vec::new();
    for start in 0..n {
        let Some(c) = class[start] else { continue };
        let mut tokens = vec![start];
        let mut cur = start;
        while tokens.len() < n {
            match succ[cur] {
                Some(next) if class[next].is_none() && !tokens.contains(&next) => {
                    tokens.push(next);
                    cur = next;
                }
                _ => break,
            }
        }
        out.push(Entity { class: c, tokens });
    }
    out
}

/// Links between distinct entity heads whose probability strictly exceeds
/// `threshold`.
pub fn decode_links<T: Scalar>(p_rel: &Tensor<T>, entities: &[Entity], threshold: f64) -> Vec<Link> {
    let heads: Vec<usize> = entities.iter().map(|e| e.tokens[0]).collect();
    let mut out = Vec::new();
    for &s in &heads {
        for &t in &heads {
            if s != t && p_rel.row(s)[t].as_f64() > threshold {
                out.push(Link { source: s, target: t });
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Entities from BIO tags (`0 = O`, `1+2c = B-c`, `2+2c = I-c`). An `I`
/// tag that does not continue an open entity of its class is dropped and
/// closes any open entity.
pub fn decode_bio(tags: &[usize]) -> Vec<Entity> {
    let mut out = Vec::new();
    let mut open: Option<Entity> = None;
    for (i, &tag) in tags.iter().enumerate() {
        if tag == 0 {
            out.extend(open.take());
            continue;
        }
        let c = (tag - 1) / 2;
        if tag % 2 == 1 {
            out.extend(open.take());
            open = Some(Entity { class: c, tokens: vec![i] });
        } else {
            match &mut open {
                Some(e) if e.class == c => e.tokens.push(i),
                _ => out.extend(open.take()),
            }
        }
    }
    out.extend(open);
    out
}
