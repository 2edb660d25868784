//! Downstream parsers over encoder outputs: the SPADE graph heads
//! (initial-token, subsequent-token and relation classifiers) and a BIO
//! tagger, with decoding and supervised losses.

mod decode;
mod gold;

pub use decode::{argmax, decode_bio, decode_entities_spade, decode_links, resolve_successors, Entity, Link};
pub use gold::{bio_tags, head_losses, spade_gold, HeadGold};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::linear;
use crate::error::{Error, Result};
use crate::numerics::{xavier_uniform, Graph, ParamStore, Scalar, Tensor, Var};

pub const PREFIX: &str = "heads";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Itc,
    Stc,
    Rel,
    Bio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    /// Entity classes; empty means "collect from the training split".
    pub classes: Vec<String>,
    pub stc_dim: usize,
    pub rel_dim: usize,
    /// Weight of positive pairs in the relation loss.
    pub rel_pos_weight: f64,
    pub link_threshold: f64,
    /// Link evaluation decodes from gold entity heads.
    pub el_gold_entities: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            classes: Vec::new(),
            stc_dim: 64,
            rel_dim: 64,
            rel_pos_weight: 1.0,
            link_threshold: 0.5,
            el_gold_entities: true,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stc_dim == 0 || self.rel_dim == 0 {
            return Err(Error::Config("head dimensions must be positive".into()));
        }
        if !(self.rel_pos_weight > 0.0) {
            return Err(Error::Config("rel_pos_weight must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.link_threshold) {
            return Err(Error::Config("link_threshold must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Fresh parameters for the requested heads, all under `heads.`.
///
/// * `heads.itc.{weight,bias}`: `[(C+1) × H]`, last class = non-initial
/// * `heads.stc.{source,target}.weight`: `[H_stc × H]`, `heads.stc.stop`: `[1 × H_stc]`
/// * `heads.rel.{source,target}.weight`: `[H_rel × H]`, `heads.rel.bias`: `[1]`
/// * `heads.bio.{weight,bias}`: `[(2C+1) × H]`
pub fn init_params<T: Scalar, R: Rng + ?Sized>(
    cfg: &HeadConfig,
    kinds: &[HeadKind],
    num_classes: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<ParamStore<T>> {
    cfg.validate()?;
    if num_classes == 0 {
        return Err(Error::Config("at least one entity class is required".into()));
    }
    let mut s = ParamStore::new();
    for kind in kinds {
        match kind {
            HeadKind::Itc => linear(&mut s, "heads.itc", num_classes + 1, hidden, rng),
            HeadKind::Stc => {
                s.insert("heads.stc.source.weight", xavier_uniform(cfg.stc_dim, hidden, rng));
                s.insert("heads.stc.target.weight", xavier_uniform(cfg.stc_dim, hidden, rng));
                s.insert("heads.stc.stop", xavier_uniform(1, cfg.stc_dim, rng));
            }
            HeadKind::Rel => {
                s.insert("heads.rel.source.weight", xavier_uniform(cfg.rel_dim, hidden, rng));
                s.insert("heads.rel.target.weight", xavier_uniform(cfg.rel_dim, hidden, rng));
                s.insert("heads.rel.bias", Tensor::zeros(&[1]));
            }
            HeadKind::Bio => linear(&mut s, "heads.bio", 2 * num_classes + 1, hidden, rng),
        }
    }
    Ok(s)
}

fn param<'a, T: Scalar>(g: &mut Graph<'a, T>, store: &'a ParamStore<T>, name: &str) -> Result<Var> {
    Ok(g.param(name, store.get(name)?))
}

/// `[N × (C+1)]` initial-token logits.
pub fn itc_logits<'a, T: Scalar>(g: &mut Graph<'a, T>, store: &'a ParamStore<T>, t: Var) -> Result<Var> {
    crate::encoder::apply_linear(g, store, "heads.itc", t)
}

/// `[N × (N+1)]` successor logits; column 0 scores STOP against the
/// learned stop vector, column `j+1` scores token `j`.
pub fn stc_logits<'a, T: Scalar>(g: &mut Graph<'a, T>, store: &'a ParamStore<T>, t: Var) -> Result<Var> {
    let ws = param(g, store, "heads.stc.source.weight")?;
    let wt = param(g, store, "heads.stc.target.weight")?;
    let stop = param(g, store, "heads.stc.stop")?;
    let s = g.matmul_nt(t, ws)?;
    let tt = g.matmul_nt(t, wt)?;
    let targets = g.concat_rows(&[stop, tt])?;
    g.matmul_nt(s, targets)
}

/// `[N × N]` relation logits `(W_s t_i)·(W_t t_j) + b`.
pub fn rel_logits<'a, T: Scalar>(g: &mut Graph<'a, T>, store: &'a ParamStore<T>, t: Var) -> Result<Var> {
    let ws = param(g, store, "heads.rel.source.weight")?;
    let wt = param(g, store, "heads.rel.target.weight")?;
    let s = g.matmul_nt(t, ws)?;
    let tt = g.matmul_nt(t, wt)?;
    let logits = g.matmul_nt(s, tt)?;
    let n = g.shape(logits)[0];
    let b = param(g, store, "heads.rel.bias")?;
    let idx = vec![0; n * n];
    let bias = g.gather_scalar(b, &idx, &[n, n])?;
    g.add(logits, bias)
}

/// `[N × (2C+1)]` BIO logits; tag 0 is `O`, `1+2c` is `B-c`, `2+2c` is `I-c`.
pub fn bio_logits<'a, T: Scalar>(g: &mut Graph<'a, T>, store: &'a ParamStore<T>, t: Var) -> Result<Var> {
    crate::encoder::apply_linear(g, store, "heads.bio", t)
}

/// Logit handles of whichever heads ran.
#[derive(Clone, Copy, Debug, Default)]
pub struct HeadLogits {
    pub itc: Option<Var>,
    pub stc: Option<Var>,
    pub rel: Option<Var>,
    pub bio: Option<Var>,
}

pub fn head_forward<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    store: &'a ParamStore<T>,
    t: Var,
    kinds: &[HeadKind],
) -> Result<HeadLogits> {
    let mut out = HeadLogits::default();
    for kind in kinds {
        match kind {
            HeadKind::Itc => out.itc = Some(itc_logits(g, store, t)?),
            HeadKind::Stc => out.stc = Some(stc_logits(g, store, t)?),
            HeadKind::Rel => out.rel = Some(rel_logits(g, store, t)?),
            HeadKind::Bio => out.bio = Some(bio_logits(g, store, t)?),
        }
    }
    Ok(out)
}

/// Valid successor options: STOP always, token `j` when it is real and
/// not the source itself.
pub fn stc_mask(mask: &[bool]) -> Vec<bool> {
    let n = mask.len();
    let mut out = Vec::with_capacity(n * (n + 1));
    for i in 0..n {
        out.push(true);
        out.extend((0..n).map(|j| mask[j] && j != i));
    }
    out
}

fn eval_graph<T: Scalar>(
    t: &Tensor<T>,
    store: &ParamStore<T>,
    f: impl for<'g> FnOnce(&mut Graph<'g, T>, &'g ParamStore<T>, Var) -> Result<Var>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.constant(t.clone());
    let out = f(&mut g, store, x)?;
    Ok(g.value(out).clone())
}

/// Row-stochastic `[N × (C+1)]` initial-token probabilities.
pub fn itc_probs<T: Scalar>(t: &Tensor<T>, store: &ParamStore<T>) -> Result<Tensor<T>> {
    eval_graph(t, store, |g, s, x| {
        let l = itc_logits(g, s, x)?;
        g.softmax(l, None)
    })
}

/// `[N × (N+1)]` successor distributions with STOP at column 0.
pub fn stc_probs<T: Scalar>(t: &Tensor<T>, store: &ParamStore<T>, mask: &[bool]) -> Result<Tensor<T>> {
    if mask.len() != t.rows() {
        return Err(Error::dim("stc_probs", t.shape(), &[mask.len()]));
    }
    let m = stc_mask(mask);
    eval_graph(t, store, |g, s, x| {
        let l = stc_logits(g, s, x)?;
        g.softmax(l, Some(&m))
    })
}

/// `[N × N]` independent link probabilities.
pub fn rel_probs<T: Scalar>(t: &Tensor<T>, store: &ParamStore<T>) -> Result<Tensor<T>> {
    eval_graph(t, store, |g, s, x| {
        let l = rel_logits(g, s, x)?;
        Ok(g.sigmoid(l))
    })
}

pub fn bio_probs<T: Scalar>(t: &Tensor<T>, store: &ParamStore<T>) -> Result<Tensor<T>> {
    eval_graph(t, store, |g, s, x| {
        let l = bio_logits(g, s, x)?;
        g.softmax(l, None)
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn store(c: usize, h: usize, seed: u64) -> ParamStore<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let cfg = HeadConfig {
            stc_dim: 3,
            rel_dim: 3,
            ..Default::default()
        };
        init_params(&cfg, &[HeadKind::Itc, HeadKind::Stc, HeadKind::Rel, HeadKind::Bio], c, h, &mut r).unwrap()
    }

    fn zeroed(mut s: ParamStore<f64>) -> ParamStore<f64> {
        for (_, t) in s.iter_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        s
    }

    fn hidden(n: usize, h: usize, seed: u64) -> Tensor<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[n, h], |_| r.gen_range(-1.0..1.0))
    }

    #[test]
    fn itc_rows_are_distributions() {
        let p = itc_probs(&hidden(5, 4, 1), &store(3, 4, 2)).unwrap();
        assert_eq!(p.shape(), &[5, 4]);
        for r in 0..5 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_itc_weights_are_uniform() {
        let p = itc_probs(&hidden(3, 4, 1), &zeroed(store(3, 4, 2))).unwrap();
        assert!(p.data().iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn zero_stc_weights_are_uniform_over_valid_options() {
        let mask = [true, true, true, false];
        let p = stc_probs(&hidden(4, 4, 1), &zeroed(store(2, 4, 2)), &mask).unwrap();
        // row 0: STOP, token 1, token 2
        let third = 1.0 / 3.0;
        let expect = [third, 0.0, third, third, 0.0];
        for (a, b) in p.row(0).iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_token_can_only_stop() {
        let p = stc_probs(&hidden(1, 4, 1), &store(2, 4, 2), &[true]).unwrap();
        assert_eq!(p.data(), &[1.0, 0.0]);
    }

    #[test]
    fn stc_matches_loop_oracle() {
        let s = store(2, 4, 5);
        let t = hidden(3, 4, 6);
        let p = stc_probs(&t, &s, &[true; 3]).unwrap();
        let ws = s.get("heads.stc.source.weight").unwrap();
        let wt = s.get("heads.stc.target.weight").unwrap();
        let stop = s.get("heads.stc.stop").unwrap();
        let proj = |w: &Tensor<f64>, i: usize| -> Vec<f64> {
            (0..w.rows()).map(|k| (0..4).map(|c| w.row(k)[c] * t.row(i)[c]).sum()).collect()
        };
        for i in 0..3 {
            let src = proj(ws, i);
            let mut logits = vec![src.iter().zip(stop.row(0)).map(|(a, b)| a * b).sum::<f64>()];
            for j in 0..3 {
                let tj = proj(wt, j);
                logits.push(if j == i { f64::NEG_INFINITY } else { src.iter().zip(&tj).map(|(a, b)| a * b).sum() });
            }
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for (k, l) in logits.iter().enumerate() {
                assert!((p.row(i)[k] - l.exp() / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_rel_weights_give_half() {
        let p = rel_probs(&hidden(3, 4, 1), &zeroed(store(2, 4, 2))).unwrap();
        assert!(p.data().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn rel_matches_scalar_sigmoid() {
        let s = store(2, 4, 8);
        let t = hidden(2, 4, 9);
        let p = rel_probs(&t, &s).unwrap();
        let ws = s.get("heads.rel.source.weight").unwrap();
        let wt = s.get("heads.rel.target.weight").unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut dot = 0.0;
                for k in 0..3 {
                    let a: f64 = (0..4).map(|c| ws.row(k)[c] * t.row(i)[c]).sum();
                    let b: f64 = (0..4).map(|c| wt.row(k)[c] * t.row(j)[c]).sum();
                    dot += a * b;
                }
                let want = 1.0 / (1.0 + (-dot).exp());
                assert!((p.row(i)[j] - want).abs() < 1e-12);
                assert!(p.row(i)[j] > 0.0 && p.row(i)[j] < 1.0);
            }
        }
    }

    #[test]
    fn three_classes_give_four_itc_columns() {
        assert_eq!(store(3, 4, 0).get("heads.itc.weight").unwrap().shape(), &[4, 4]);
    }
}
