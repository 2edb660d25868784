//! BERT-shaped encoder whose attention logits add a relative spatial term.
//!
//! For head `h` the logit between tokens `i` and `j` is
//! `(q_i · k_j + q_i · bb_ij) / sqrt(H/A)`, where `bb_ij` is the pair
//! embedding computed once per input and shared by every head and layer.

mod ablation;
mod config;

pub use ablation::{abs_bucket, absolute_embedding, axis_bias, axis_bucket};
pub use config::{EncoderConfig, SpatialMode, TokenInput};

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::numerics::{xavier_uniform, Graph, ParamStore, Scalar, Tensor, Var};
use crate::spatial::{pair_embedding_graph, pair_features, VERTEX_NAMES};

pub const PREFIX: &str = "encoder";

pub(crate) fn linear<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, out: usize, inp: usize, rng: &mut R) {
    store.insert(format!("{name}.weight"), xavier_uniform(out, inp, rng));
    store.insert(format!("{name}.bias"), Tensor::zeros(&[out]));
}

pub(crate) fn norm<T: Scalar>(store: &mut ParamStore<T>, name: &str, h: usize) {
    store.insert(format!("{name}.gamma"), Tensor::ones(&[h]));
    store.insert(format!("{name}.beta"), Tensor::zeros(&[h]));
}

/// Fresh encoder parameters for `cfg`, all under `encoder.`.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let h = cfg.hidden;
    let mut s = ParamStore::new();
    s.insert("encoder.embeddings.token", xavier_uniform(cfg.vocab_size, h, rng));
    if cfg.use_1d_positions {
        s.insert("encoder.embeddings.position", xavier_uniform(cfg.max_tokens, h, rng));
    }
    match cfg.spatial_mode {
        SpatialMode::Relative => {
            for v in VERTEX_NAMES {
                s.insert(
                    format!("encoder.spatial.{v}"),
                    xavier_uniform(cfg.head_dim(), 2 * cfg.sinusoid_dim, rng),
                );
            }
        }
        SpatialMode::Absolute => {
            s.insert("encoder.embeddings.abs_x", xavier_uniform(cfg.abs_grid, h, rng));
            s.insert("encoder.embeddings.abs_y", xavier_uniform(cfg.abs_grid, h, rng));
        }
        SpatialMode::AxisBias => {
            s.insert("encoder.axis_bias.x", Tensor::zeros(&[cfg.axis_bias_buckets]));
            s.insert("encoder.axis_bias.y", Tensor::zeros(&[cfg.axis_bias_buckets]));
        }
        SpatialMode::None => {}
    }
    norm(&mut s, "encoder.embeddings.ln", h);
    for l in 0..cfg.num_layers {
        let p = format!("encoder.layer.{l}");
        for part in ["query", "value", "output"] {
            linear(&mut s, &format!("{p}.attn.{part}"), h, h, rng);
        }
        // softmax is invariant to a per-row shift, so a key bias has no effect
        s.insert(format!("{p}.attn.key.weight"), xavier_uniform(h, h, rng));
        norm(&mut s, &format!("{p}.attn_ln"), h);
        linear(&mut s, &format!("{p}.ffn.up"), cfg.ffn, h, rng);
        linear(&mut s, &format!("{p}.ffn.down"), h, cfg.ffn, rng);
        norm(&mut s, &format!("{p}.ffn_ln"), h);
    }
    Ok(s)
}

/// Graph handles produced by one forward pass.
pub struct EncoderOutput {
    /// Final-layer token representations `[N × H]`.
    pub hidden: Var,
    /// Pair embedding table `[N² × H/A]` in relative mode.
    pub pair: Option<Var>,
    /// The pair handle each `(layer, head)` consumed, row-major.
    pub head_pairs: Vec<Option<Var>>,
    /// Attention weights per `(layer, head)`.
    pub attention: Vec<Var>,
}

/// `x · Wᵀ + b` for a `{name}.weight` / `{name}.bias` pair.
pub fn apply_linear<'a, T: Scalar>(g: &mut Graph<'a, T>, store: &'a ParamStore<T>, name: &str, x: Var) -> Result<Var> {
    let w = g.param(&format!("{name}.weight"), store.get(&format!("{name}.weight"))?);
    let y = g.matmul_nt(x, w)?;
    let bias_name = format!("{name}.bias");
    if store.contains(&bias_name) {
        let b = g.param(&bias_name, store.get(&bias_name)?);
        g.add_bias(y, b)
    } else {
        Ok(y)
    }
}

pub fn apply_norm<'a, T: Scalar>(g: &mut Graph<'a, T>, store: &'a ParamStore<T>, name: &str, x: Var, eps: f64) -> Result<Var> {
    let gamma = g.param(&format!("{name}.gamma"), store.get(&format!("{name}.gamma"))?);
    let beta = g.param(&format!("{name}.beta"), store.get(&format!("{name}.beta"))?);
    g.layer_norm(x, gamma, beta, eps)
}

fn maybe_dropout<T: Scalar>(g: &mut Graph<'_, T>, x: Var, p: f64, rng: &mut Option<&mut dyn RngCore>) -> Result<Var> {
    match rng {
        Some(r) if p > 0.0 => g.dropout(x, p, &mut **r),
        _ => Ok(x),
    }
}

/// Scaled logits of one head from its query/key slices.
///
/// `pair` adds `q_i · bb_ij` before scaling; `bias` is added after.
pub fn head_logits<T: Scalar>(
    g: &mut Graph<'_, T>,
    q: Var,
    k: Var,
    pair: Option<Var>,
    bias: Option<Var>,
) -> Result<Var> {
    let d = g.shape(q)[1];
    let mut logits = g.matmul_nt(q, k)?;
    if let Some(p) = pair {
        let spatial = g.pair_dot(q, p)?;
        logits = g.add(logits, spatial)?;
    }
    let mut logits = g.scale(logits, T::lit(1.0 / (d as f64).sqrt()));
    if let Some(b) = bias {
        logits = g.add(logits, b)?;
    }
    Ok(logits)
}

/// Logits of head `head` in layer `layer` for representations `t [N×H]`.
pub fn attention_logits<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    store: &'a ParamStore<T>,
    cfg: &EncoderConfig,
    layer: usize,
    head: usize,
    t: Var,
    pair: Option<Var>,
) -> Result<Var> {
    if cfg.spatial_mode == SpatialMode::Relative && pair.is_none() {
        return Err(Error::Contract("relative attention needs a pair embedding".into()));
    }
    let d = cfg.head_dim();
    let p = format!("encoder.layer.{layer}.attn");
    let q = apply_linear(g, store, &format!("{p}.query"), t)?;
    let k = apply_linear(g, store, &format!("{p}.key"), t)?;
    let qh = g.slice_cols(q, head * d, d)?;
    let kh = g.slice_cols(k, head * d, d)?;
    head_logits(g, qh, kh, pair, None)
}

/// Record a full forward pass. Dropout is active only when `rng` is given.
pub fn encode_graph<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    store: &'a ParamStore<T>,
    cfg: &EncoderConfig,
    input: &TokenInput,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<EncoderOutput> {
    cfg.validate()?;
    input.validate(cfg)?;
    let n = input.len();
    let eps = cfg.layer_norm_eps;

    let table = g.param("encoder.embeddings.token", store.get("encoder.embeddings.token")?);
    let mut x = g.gather_rows(table, &input.ids)?;
    if cfg.use_1d_positions {
        let pos = g.param("encoder.embeddings.position", store.get("encoder.embeddings.position")?);
        let idx: Vec<usize> = (0..n).collect();
        let p = g.gather_rows(pos, &idx)?;
        x = g.add(x, p)?;
    }
    if cfg.spatial_mode == SpatialMode::Absolute {
        let tx = g.param("encoder.embeddings.abs_x", store.get("encoder.embeddings.abs_x")?);
        let ty = g.param("encoder.embeddings.abs_y", store.get("encoder.embeddings.abs_y")?);
        let ix: Vec<usize> = input.boxes.iter().map(|b| abs_bucket(b.tl.x, cfg.abs_grid)).collect();
        let iy: Vec<usize> = input.boxes.iter().map(|b| abs_bucket(b.tl.y, cfg.abs_grid)).collect();
        let ex = g.gather_rows(tx, &ix)?;
        let ey = g.gather_rows(ty, &iy)?;
        x = g.add(x, ex)?;
        x = g.add(x, ey)?;
    }
    x = apply_norm(g, store, "encoder.embeddings.ln", x, eps)?;
    x = maybe_dropout(g, x, cfg.dropout, &mut rng)?;

    let pair = match cfg.spatial_mode {
        SpatialMode::Relative => {
            let feats = pair_features(&input.boxes, cfg.sinusoid_dim, cfg.sinusoid_scale)?;
            let w = VERTEX_NAMES
                .iter()
                .map(|v| {
                    let name = format!("encoder.spatial.{v}");
                    Ok(g.param(&name, store.get(&name)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(pair_embedding_graph(g, feats, [w[0], w[1], w[2], w[3]])?)
        }
        _ => None,
    };
    let bias = match cfg.spatial_mode {
        SpatialMode::AxisBias => {
            let tx = g.param("encoder.axis_bias.x", store.get("encoder.axis_bias.x")?);
            let ty = g.param("encoder.axis_bias.y", store.get("encoder.axis_bias.y")?);
            let mut ix = Vec::with_capacity(n * n);
            let mut iy = Vec::with_capacity(n * n);
            for bi in &input.boxes {
                for bj in &input.boxes {
                    ix.push(axis_bucket(bi.tl.x - bj.tl.x, cfg.axis_bias_buckets));
                    iy.push(axis_bucket(bi.tl.y - bj.tl.y, cfg.axis_bias_buckets));
                }
            }
            let bx = g.gather_scalar(tx, &ix, &[n, n])?;
            let by = g.gather_scalar(ty, &iy, &[n, n])?;
            Some(g.add(bx, by)?)
        }
        _ => None,
    };

    let col_mask: Vec<bool> = (0..n * n).map(|e| input.mask[e % n]).collect();
    let d = cfg.head_dim();
    let mut head_pairs = Vec::with_capacity(cfg.num_layers * cfg.heads);
    let mut attention = Vec::with_capacity(cfg.num_layers * cfg.heads);
    for l in 0..cfg.num_layers {
        let p = format!("encoder.layer.{l}");
        let q = apply_linear(g, store, &format!("{p}.attn.query"), x)?;
        let k = apply_linear(g, store, &format!("{p}.attn.key"), x)?;
        let v = apply_linear(g, store, &format!("{p}.attn.value"), x)?;
        let mut contexts = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let qh = g.slice_cols(q, h * d, d)?;
            let kh = g.slice_cols(k, h * d, d)?;
            let vh = g.slice_cols(v, h * d, d)?;
            let logits = head_logits(g, qh, kh, pair, bias)?;
            let probs = g.softmax(logits, Some(&col_mask))?;
            head_pairs.push(pair);
            attention.push(probs);
            contexts.push(g.matmul(probs, vh)?);
        }
        let ctx = if contexts.len() == 1 {
            contexts[0]
        } else {
            g.concat_cols(&contexts)?
        };
        let mut a = apply_linear(g, store, &format!("{p}.attn.output"), ctx)?;
        a = maybe_dropout(g, a, cfg.dropout, &mut rng)?;
        let res = g.add(x, a)?;
        x = apply_norm(g, store, &format!("{p}.attn_ln"), res, eps)?;

        let up = apply_linear(g, store, &format!("{p}.ffn.up"), x)?;
        let act = g.gelu(up);
        let mut down = apply_linear(g, store, &format!("{p}.ffn.down"), act)?;
        down = maybe_dropout(g, down, cfg.dropout, &mut rng)?;
        let res = g.add(x, down)?;
        x = apply_norm(g, store, &format!("{p}.ffn_ln"), res, eps)?;
    }
    Ok(EncoderOutput {
        hidden: x,
        pair,
        head_pairs,
        attention,
    })
}

/// Evaluation-mode forward pass returning `[N × H]` representations.
pub fn encode<T: Scalar>(input: &TokenInput, cfg: &EncoderConfig, store: &ParamStore<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let out = encode_graph(&mut g, store, cfg, input, None)?;
    Ok(g.value(out.hidden).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use crate::spatial::QuadBox;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(mode: SpatialMode, pos: bool) -> EncoderConfig {
        EncoderConfig {
            num_layers: 2,
            hidden: 16,
            heads: 4,
            ffn: 32,
            vocab_size: 30,
            max_tokens: 16,
            sinusoid_dim: 4,
            spatial_mode: mode,
            use_1d_positions: pos,
            dropout: 0.0,
            ..EncoderConfig::default()
        }
    }

    fn random_input(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> TokenInput {
        let ids = (0..n).map(|_| rng.gen_range(0..vocab)).collect();
        let boxes = (0..n)
            .map(|_| {
                let x = rng.gen_range(0.0..0.8);
                let y = rng.gen_range(0.0..0.9);
                QuadBox::from_rect(x, y, x + rng.gen_range(0.01..0.2), y + 0.02)
            })
            .collect();
        TokenInput::new(ids, boxes)
    }

    #[test]
    fn zero_pair_embedding_reduces_to_dot_product_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = Tensor::<f64>::from_fn(&[3, 4], |_| rng.gen_range(-1.0..1.0));
        let k = Tensor::<f64>::from_fn(&[3, 4], |_| rng.gen_range(-1.0..1.0));
        let mut g = Graph::new();
        let qv = g.constant(q.clone());
        let kv = g.constant(k.clone());
        let zero = g.constant(Tensor::zeros(&[9, 4]));
        let with = head_logits(&mut g, qv, kv, Some(zero), None).unwrap();
        let without = head_logits(&mut g, qv, kv, None, None).unwrap();
        assert_eq!(g.value(with), g.value(without));
    }

    #[test]
    fn spatial_term_matches_explicit_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = Tensor::<f64>::from_fn(&[3, 4], |_| rng.gen_range(-1.0..1.0));
        let k = Tensor::<f64>::from_fn(&[3, 4], |_| rng.gen_range(-1.0..1.0));
        let bb = Tensor::<f64>::from_fn(&[9, 4], |_| rng.gen_range(-1.0..1.0));
        let mut g = Graph::new();
        let (qv, kv, pv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(bb.clone()));
        let logits = head_logits(&mut g, qv, kv, Some(pv), None).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut sem = 0.0;
                let mut spa = 0.0;
                for c in 0..4 {
                    sem += q.at(i, c) * k.at(j, c);
                    spa += q.at(i, c) * bb.at(i * 3 + j, c);
                }
                let expect = (sem + spa) / 2.0;
                assert!((g.value(logits).at(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_token_attends_to_itself() {
        let c = cfg(SpatialMode::Relative, false);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let store = init_params::<f64, _>(&c, &mut rng).unwrap();
        let input = random_input(&mut rng, 1, c.vocab_size);
        let mut g = Graph::new();
        let out = encode_graph(&mut g, &store, &c, &input, None).unwrap();
        for &a in &out.attention {
            assert_eq!(g.value(a).data(), &[1.0]);
        }
    }

    #[test]
    fn missing_pair_is_contract_error() {
        let c = cfg(SpatialMode::Relative, false);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let store = init_params::<f64, _>(&c, &mut rng).unwrap();
        let mut g = Graph::new();
        let t = g.constant(Tensor::zeros(&[2, 16]));
        assert!(matches!(
            attention_logits(&mut g, &store, &c, 0, 0, t, None),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn heads_share_one_pair_embedding() {
        let c = cfg(SpatialMode::Relative, false);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let store = init_params::<f32, _>(&c, &mut rng).unwrap();
        let input = random_input(&mut rng, 5, c.vocab_size);
        let mut g = Graph::new();
        let out = encode_graph(&mut g, &store, &c, &input, None).unwrap();
        assert_eq!(out.head_pairs.len(), c.num_layers * c.heads);
        assert!(out.head_pairs.iter().all(|p| *p == out.pair && p.is_some()));
        assert_eq!(g.shape(out.pair.unwrap()), &[25, c.head_dim()]);
    }

    #[test]
    fn permutation_equivariance_relative_mode() {
        let c = cfg(SpatialMode::Relative, false);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let store = init_params::<f64, _>(&c, &mut rng).unwrap();
        let input = random_input(&mut rng, 7, c.vocab_size);
        let base = encode(&input, &c, &store).unwrap();
        let mut perm: Vec<usize> = (0..7).collect();
        perm.shuffle(&mut rng);
        let permuted = TokenInput {
            ids: perm.iter().map(|&p| input.ids[p]).collect(),
            boxes: perm.iter().map(|&p| input.boxes[p]).collect(),
            mask: perm.iter().map(|&p| input.mask[p]).collect(),
        };
        let out = encode(&permuted, &c, &store).unwrap();
        for (r, &p) in perm.iter().enumerate() {
            for (a, b) in out.row(r).iter().zip(base.row(p)) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn padding_is_opaque_and_masked() {
        let c = cfg(SpatialMode::Relative, false);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let store = init_params::<f64, _>(&c, &mut rng).unwrap();
        let mut a = random_input(&mut rng, 4, c.vocab_size);
        a.pad_to(7, 0);
        let mut b = a.clone();
        for i in 4..7 {
            b.ids[i] = rng.gen_range(0..c.vocab_size);
            b.boxes[i] = QuadBox::from_rect(0.3, 0.3, 0.5, 0.4);
        }
        let mut g = Graph::new();
        let oa = encode_graph(&mut g, &store, &c, &a, None).unwrap();
        for &att in &oa.attention {
            let w = g.value(att);
            for i in 0..7 {
                for j in 4..7 {
                    assert!(w.at(i, j).abs() <= 1e-7);
                }
            }
        }
        let ha = g.value(oa.hidden).clone();
        let hb = encode(&b, &c, &store).unwrap();
        for r in 0..4 {
            assert_eq!(ha.row(r), hb.row(r));
        }
    }

    #[test]
    fn all_padding_is_defined() {
        let c = cfg(SpatialMode::Relative, false);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let store = init_params::<f32, _>(&c, &mut rng).unwrap();
        let mut input = TokenInput::new(vec![], vec![]);
        input.pad_to(3, 0);
        let out = encode(&input, &c, &store).unwrap();
        assert!(out.is_finite());
        assert!(input.mask.iter().all(|m| !m));
    }

    #[test]
    fn zeroed_spatial_matches_plain_encoder() {
        let plain = cfg(SpatialMode::None, true);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base = init_params::<f64, _>(&plain, &mut rng).unwrap();
        let input = random_input(&mut rng, 6, plain.vocab_size);
        let expect = encode(&input, &plain, &base).unwrap();

        let rel = cfg(SpatialMode::Relative, true);
        let mut store = base.clone();
        for v in VERTEX_NAMES {
            store.insert(format!("encoder.spatial.{v}"), Tensor::zeros(&[rel.head_dim(), 8]));
        }
        let got = encode(&input, &rel, &store).unwrap();
        assert!(got.max_abs_diff(&expect).unwrap() < 1e-12);

        let abs = cfg(SpatialMode::Absolute, true);
        let mut store = base.clone();
        store.insert("encoder.embeddings.abs_x", Tensor::zeros(&[abs.abs_grid, 16]));
        store.insert("encoder.embeddings.abs_y", Tensor::zeros(&[abs.abs_grid, 16]));
        let got = encode(&input, &abs, &store).unwrap();
        assert!(got.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn absolute_embedding_properties() {
        let c = cfg(SpatialMode::Absolute, false);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let store = init_params::<f64, _>(&c, &mut rng).unwrap();
        let a = QuadBox::from_rect(0.2, 0.3, 0.4, 0.35);
        let e1 = absolute_embedding(&a, &store, c.abs_grid).unwrap();
        let e2 = absolute_embedding(&a, &store, c.abs_grid).unwrap();
        assert_eq!(e1, e2);
        let shifted = QuadBox::from_rect(0.3, 0.4, 0.5, 0.45);
        let e3 = absolute_embedding(&shifted, &store, c.abs_grid).unwrap();
        assert_ne!(e1, e3);
    }

    #[test]
    fn axis_bias_is_content_free() {
        let c = cfg(SpatialMode::AxisBias, false);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut store = init_params::<f64, _>(&c, &mut rng).unwrap();
        *store.get_mut("encoder.axis_bias.x").unwrap() = Tensor::from_fn(&[65], |k| k as f64);
        *store.get_mut("encoder.axis_bias.y").unwrap() = Tensor::from_fn(&[65], |k| 100.0 * k as f64);
        let a = QuadBox::from_rect(0.2, 0.3, 0.4, 0.35);
        assert_eq!(axis_bias(&a, &a, &store, 65).unwrap(), 32.0 + 3200.0);
    }

    #[test]
    fn out_of_range_token_is_data_error() {
        let c = cfg(SpatialMode::Relative, false);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let store = init_params::<f32, _>(&c, &mut rng).unwrap();
        let input = TokenInput::new(vec![0, 30], vec![QuadBox::ZERO; 2]);
        assert!(matches!(encode(&input, &c, &store), Err(Error::Data(_))));
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        for (seed, mode) in [
            (20, SpatialMode::Relative),
            (21, SpatialMode::Absolute),
            (22, SpatialMode::AxisBias),
        ] {
            let mut c = cfg(mode, seed % 2 == 0);
            c.num_layers = 1;
            c.hidden = 8;
            c.heads = 2;
            c.ffn = 12;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = init_params::<f64, _>(&c, &mut rng).unwrap();
            if mode == SpatialMode::AxisBias {
                for name in ["encoder.axis_bias.x", "encoder.axis_bias.y"] {
                    *store.get_mut(name).unwrap() = Tensor::from_fn(&[65], |_| rng.gen_range(-0.5..0.5));
                }
            }
            let input = random_input(&mut rng, 4, c.vocab_size);
            let target = Tensor::<f64>::from_fn(&[4, 8], |_| rng.gen_range(-1.0..1.0));
            let err = grad_check(&store, 1e-3, 6, &mut rng, |g, p| {
                let out = encode_graph(g, p, &c, &input, None)?;
                let t = g.constant(target.clone());
                let prod = g.mul(out.hidden, t)?;
                Ok(g.sum(prod))
            })
            .unwrap();
            assert!(err < 1e-4, "{mode:?}: {err}");
        }
    }
}
