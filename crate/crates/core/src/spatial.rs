//! Box normalization and the relative four-vertex spatial encoding.
//!
//! For a token pair `(i, j)` every vertex `v ∈ {tl, tr, br, bl}` contributes
//! `[sin/cos(x_i - x_j); sin/cos(y_i - y_j)]`, and the pair embedding is
//! `Σ_v W_v · feature_v`, a vector of size `H / A` that every attention head
//! consumes unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Scalar, Tensor, Var};

/// Relative offsets are snapped to this grid before encoding so that
/// translating every box by the same amount reproduces the encoding
/// bit for bit.
const OFFSET_GRID: f64 = (1u64 << 24) as f64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Four-vertex box in normalized page units.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuadBox {
    pub tl: Point,
    pub tr: Point,
    pub br: Point,
    pub bl: Point,
}

impl QuadBox {
    /// The box carried by special tokens.
    pub const ZERO: QuadBox = QuadBox {
        tl: Point { x: 0.0, y: 0.0 },
        tr: Point { x: 0.0, y: 0.0 },
        br: Point { x: 0.0, y: 0.0 },
        bl: Point { x: 0.0, y: 0.0 },
    };

    pub fn from_rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        QuadBox {
            tl: Point::new(x0, y0),
            tr: Point::new(x1, y0),
            br: Point::new(x1, y1),
            bl: Point::new(x0, y1),
        }
    }

    /// Vertices in `tl, tr, br, bl` order.
    pub fn vertices(&self) -> [Point; 4] {
        [self.tl, self.tr, self.br, self.bl]
    }

    pub fn center(&self) -> Point {
        let v = self.vertices();
        Point::new(
            v.iter().map(|p| p.x).sum::<f64>() / 4.0,
            v.iter().map(|p| p.y).sum::<f64>() / 4.0,
        )
    }

    /// Axis-aligned bounds `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let v = self.vertices();
        let fold = |f: fn(&Point) -> f64, init: f64, pick: fn(f64, f64) -> f64| v.iter().map(f).fold(init, pick);
        (
            fold(|p| p.x, f64::INFINITY, f64::min),
            fold(|p| p.y, f64::INFINITY, f64::min),
            fold(|p| p.x, f64::NEG_INFINITY, f64::max),
            fold(|p| p.y, f64::NEG_INFINITY, f64::max),
        )
    }

    pub fn width(&self) -> f64 {
        let (x0, _, x1, _) = self.bounds();
        x1 - x0
    }

    pub fn height(&self) -> f64 {
        let (_, y0, _, y1) = self.bounds();
        y1 - y0
    }

    pub fn contains(&self, p: Point) -> bool {
        let (x0, y0, x1, y1) = self.bounds();
        p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1
    }
}

/// Divide pixel coordinates `[x1, y1, …, x4, y4]` (tl, tr, br, bl) by the
/// page size and clamp into `[0, 1]`.
pub fn normalize_box(raw: &[f64; 8], page_width: f64, page_height: f64) -> Result<QuadBox> {
    if !(page_width > 0.0 && page_height > 0.0) {
        return Err(Error::Config(format!(
            "page size must be positive, got {page_width}×{page_height}"
        )));
    }
    let p = |k: usize| {
        Point::new(
            (raw[2 * k] / page_width).clamp(0.0, 1.0),
            (raw[2 * k + 1] / page_height).clamp(0.0, 1.0),
        )
    };
    Ok(QuadBox {
        tl: p(0),
        tr: p(1),
        br: p(2),
        bl: p(3),
    })
}

fn inverse_frequencies(dim: usize) -> Vec<f64> {
    (0..dim / 2)
        .map(|k| 1.0 / 10000f64.powf(2.0 * k as f64 / dim as f64))
        .collect()
}

fn write_sinusoid<T: Scalar>(d: f64, scale: f64, inv_freq: &[f64], out: &mut [T]) {
    for (k, &f) in inv_freq.iter().enumerate() {
        let (s, c) = (scale * d * f).sin_cos();
        out[2 * k] = T::lit(s);
        out[2 * k + 1] = T::lit(c);
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Config(format!("sinusoid dimension must be even and positive, got {dim}")));
    }
    Ok(())
}

/// Interleaved sin/cos encoding of a scalar offset.
pub fn sinusoid<T: Scalar>(d: f64, dim: usize, scale: f64) -> Result<Tensor<T>> {
    check_dim(dim)?;
    let mut out = vec![T::zero(); dim];
    write_sinusoid(d, scale, &inverse_frequencies(dim), &mut out);
    Tensor::new(vec![dim], out)
}

fn offset(a: f64, b: f64) -> f64 {
    ((a - b) * OFFSET_GRID).round() / OFFSET_GRID
}

/// Per-vertex relative features of box `j` seen from box `i`, each of
/// length `2·dim`.
pub fn relative_vertex_features<T: Scalar>(
    box_i: &QuadBox,
    box_j: &QuadBox,
    dim: usize,
    scale: f64,
) -> Result<[Tensor<T>; 4]> {
    check_dim(dim)?;
    let inv = inverse_frequencies(dim);
    let (vi, vj) = (box_i.vertices(), box_j.vertices());
    let one = |v: usize| {
        let mut buf = vec![T::zero(); 2 * dim];
        write_sinusoid(offset(vi[v].x, vj[v].x), scale, &inv, &mut buf[..dim]);
        write_sinusoid(offset(vi[v].y, vj[v].y), scale, &inv, &mut buf[dim..]);
        Tensor::new(vec![2 * dim], buf)
    };
    Ok([one(0)?, one(1)?, one(2)?, one(3)?])
}

/// The four vertex projections `W_tl, W_tr, W_br, W_bl`, each
/// `[(H/A) × 2·dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialParams<T: Scalar> {
    pub weights: [Tensor<T>; 4],
    pub sinusoid_dim: usize,
    pub sinusoid_scale: f64,
}

pub const VERTEX_NAMES: [&str; 4] = ["w_tl", "w_tr", "w_br", "w_bl"];

impl<T: Scalar> SpatialParams<T> {
    pub fn new(weights: [Tensor<T>; 4], sinusoid_dim: usize, sinusoid_scale: f64) -> Result<Self> {
        check_dim(sinusoid_dim)?;
        let shape = weights[0].shape().to_vec();
        for w in &weights {
            if w.ndim() != 2 || w.shape() != shape.as_slice() || w.shape()[1] != 2 * sinusoid_dim {
                return Err(Error::dim("spatial params", &shape, w.shape()));
            }
        }
        Ok(SpatialParams {
            weights,
            sinusoid_dim,
            sinusoid_scale,
        })
    }

    /// Read `{prefix}.w_tl` … `{prefix}.w_bl` from a parameter store.
    pub fn from_store(store: &ParamStore<T>, prefix: &str, sinusoid_dim: usize, sinusoid_scale: f64) -> Result<Self> {
        let get = |k: usize| store.get(&format!("{prefix}.{}", VERTEX_NAMES[k])).cloned();
        Self::new([get(0)?, get(1)?, get(2)?, get(3)?], sinusoid_dim, sinusoid_scale)
    }

    pub fn head_dim(&self) -> usize {
        self.weights[0].shape()[0]
    }
}

/// `W_tl·f_tl + W_tr·f_tr + W_br·f_br + W_bl·f_bl`.
pub fn combine_relative<T: Scalar>(features: &[Tensor<T>; 4], params: &SpatialParams<T>) -> Result<Tensor<T>> {
    let d = params.head_dim();
    let mut out = vec![T::zero(); d];
    for (w, f) in params.weights.iter().zip(features) {
        if f.numel() != w.shape()[1] {
            return Err(Error::dim("combine_relative", w.shape(), f.shape()));
        }
        for (r, o) in out.iter_mut().enumerate() {
            *o += w.row(r).iter().zip(f.data()).map(|(&a, &b)| a * b).sum::<T>();
        }
    }
    Tensor::new(vec![d], out)
}

/// Shared table of pair embeddings, entry `(i, j)` of length `H / A`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairEmbedding<T: Scalar> {
    n: usize,
    table: Tensor<T>,
}

impl<T: Scalar> PairEmbedding<T> {
    pub fn from_table(n: usize, table: Tensor<T>) -> Result<Self> {
        if table.ndim() != 2 || table.shape()[0] != n * n {
            return Err(Error::dim("pair embedding", &[n * n], table.shape()));
        }
        Ok(PairEmbedding { n, table })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> &[T] {
        self.table.row(i * self.n + j)
    }

    /// `[N² × dim]`, row `i·N + j`.
    pub fn table(&self) -> &Tensor<T> {
        &self.table
    }
}

/// Sinusoid features for all ordered pairs, one `[N² × 2·dim]` matrix per
/// vertex. These carry no parameters and are computed once per input.
#[derive(Clone, Debug)]
pub struct PairFeatures<T: Scalar> {
    pub n: usize,
    pub per_vertex: [Tensor<T>; 4],
}

pub fn pair_features<T: Scalar>(boxes: &[QuadBox], dim: usize, scale: f64) -> Result<PairFeatures<T>> {
    check_dim(dim)?;
    let n = boxes.len();
    let inv = inverse_frequencies(dim);
    let width = 2 * dim;
    let mut bufs: [Vec<T>; 4] = std::array::from_fn(|_| vec![T::zero(); n * n * width]);
    let verts: Vec<[Point; 4]> = boxes.iter().map(QuadBox::vertices).collect();
    for i in 0..n {
        for j in 0..n {
            let row = (i * n + j) * width;
            for (v, buf) in bufs.iter_mut().enumerate() {
                let dst = &mut buf[row..row + width];
                write_sinusoid(offset(verts[i][v].x, verts[j][v].x), scale, &inv, &mut dst[..dim]);
                write_sinusoid(offset(verts[i][v].y, verts[j][v].y), scale, &inv, &mut dst[dim..]);
            }
        }
    }
    let [a, b, c, d] = bufs;
    let shape = vec![n * n, width];
    Ok(PairFeatures {
        n,
        per_vertex: [
            Tensor::new(shape.clone(), a)?,
            Tensor::new(shape.clone(), b)?,
            Tensor::new(shape.clone(), c)?,
            Tensor::new(shape, d)?,
        ],
    })
}

/// Record the pair-embedding table `[N² × (H/A)]` on a graph, given the
/// four vertex weight handles.
pub fn pair_embedding_graph<T: Scalar>(g: &mut Graph<'_, T>, features: PairFeatures<T>, weights: [Var; 4]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (f, w) in features.per_vertex.into_iter().zip(weights) {
        let fv = g.constant(f);
        let term = g.matmul_nt(fv, w)?;
        acc = Some(match acc {
            None => term,
            Some(prev) => g.add(prev, term)?,
        });
    }
    Ok(acc.expect("four vertices"))
}

/// Compute the pair-embedding table for a set of boxes.
pub fn pairwise_embeddings<T: Scalar>(boxes: &[QuadBox], params: &SpatialParams<T>) -> Result<PairEmbedding<T>> {
    if boxes.is_empty() {
        return Err(Error::Contract("pairwise_embeddings needs at least one box".into()));
    }
    let features = pair_features(boxes, params.sinusoid_dim, params.sinusoid_scale)?;
    let mut g = Graph::new();
    let w = std::array::from_fn(|k| g.constant(params.weights[k].clone()));
    let table = pair_embedding_graph(&mut g, features, w)?;
    PairEmbedding::from_table(boxes.len(), g.value(table).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng, d: usize, dim: usize) -> SpatialParams<f64> {
        let w = std::array::from_fn(|_| Tensor::from_fn(&[d, 2 * dim], |_| rng.gen_range(-1.0..1.0)));
        SpatialParams::new(w, dim, 100.0).unwrap()
    }

    #[test]
    fn normalize_divides_by_page() {
        let raw = [10.0, 20.0, 30.0, 20.0, 30.0, 40.0, 10.0, 40.0];
        let b = normalize_box(&raw, 100.0, 200.0).unwrap();
        assert_eq!(b.tl, Point::new(0.1, 0.1));
        assert_eq!(b.br, Point::new(0.3, 0.2));
    }

    #[test]
    fn normalize_full_page_and_point_box() {
        let raw = [0.0, 0.0, 640.0, 0.0, 640.0, 480.0, 0.0, 480.0];
        let b = normalize_box(&raw, 640.0, 480.0).unwrap();
        assert_eq!(b.tl, Point::new(0.0, 0.0));
        assert_eq!(b.br, Point::new(1.0, 1.0));

        let raw = [5.0; 8];
        let b = normalize_box(&raw, 10.0, 20.0).unwrap();
        assert!(b.vertices().iter().all(|p| *p == b.tl));
        assert!((0.0..=1.0).contains(&b.tl.x) && (0.0..=1.0).contains(&b.tl.y));
    }

    #[test]
    fn normalize_rejects_bad_page() {
        assert!(matches!(normalize_box(&[0.0; 8], 0.0, 10.0), Err(Error::Config(_))));
        assert!(matches!(normalize_box(&[0.0; 8], 10.0, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn sinusoid_at_zero_and_parity() {
        let z = sinusoid::<f64>(0.0, 6, 100.0).unwrap();
        assert_eq!(z.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);

        let pos = sinusoid::<f64>(0.37, 8, 100.0).unwrap();
        let neg = sinusoid::<f64>(-0.37, 8, 100.0).unwrap();
        for k in 0..4 {
            assert_eq!(neg.data()[2 * k], -pos.data()[2 * k]);
            assert_eq!(neg.data()[2 * k + 1], pos.data()[2 * k + 1]);
        }
    }

    #[test]
    fn sinusoid_scalar_value() {
        let s = sinusoid::<f64>(0.5, 4, 100.0).unwrap();
        assert!((s.data()[0] - 50f64.sin()).abs() < 1e-15);
        assert!((s.data()[0] - (-0.2624)).abs() < 1e-4);
        // second frequency: 50 / 10000^(2/4) = 0.5
        assert!((s.data()[2] - 0.5f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn sinusoid_rejects_odd_dim() {
        assert!(sinusoid::<f64>(0.1, 5, 1.0).is_err());
    }

    #[test]
    fn vertex_features_identity_and_axis_split() {
        let a = QuadBox::from_rect(0.1, 0.2, 0.3, 0.25);
        let zero = sinusoid::<f64>(0.0, 4, 100.0).unwrap();
        for f in relative_vertex_features::<f64>(&a, &a, 4, 100.0).unwrap() {
            assert_eq!(&f.data()[..4], zero.data());
            assert_eq!(&f.data()[4..], zero.data());
        }
        let b = QuadBox::from_rect(0.5, 0.2, 0.7, 0.25);
        for f in relative_vertex_features::<f64>(&a, &b, 4, 100.0).unwrap() {
            assert_eq!(&f.data()[4..], zero.data());
            assert_ne!(&f.data()[..4], zero.data());
        }
    }

    #[test]
    fn vertex_features_reverse_direction_follows_parity() {
        let a = QuadBox::from_rect(0.1, 0.2, 0.3, 0.25);
        let b = QuadBox::from_rect(0.45, 0.6, 0.5, 0.7);
        let ab = relative_vertex_features::<f64>(&a, &b, 4, 100.0).unwrap();
        let ba = relative_vertex_features::<f64>(&b, &a, 4, 100.0).unwrap();
        for (x, y) in ab.iter().zip(&ba) {
            for k in 0..x.numel() {
                let expect = if k % 2 == 0 { -y.data()[k] } else { y.data()[k] };
                assert!((x.data()[k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn combine_zero_weights_and_single_term() {
        let f = relative_vertex_features::<f64>(
            &QuadBox::from_rect(0.1, 0.1, 0.2, 0.2),
            &QuadBox::from_rect(0.4, 0.3, 0.5, 0.35),
            2,
            100.0,
        )
        .unwrap();
        let zeros = SpatialParams::new(std::array::from_fn(|_| Tensor::zeros(&[4, 4])), 2, 100.0).unwrap();
        assert!(combine_relative(&f, &zeros).unwrap().data().iter().all(|&v| v == 0.0));

        let mut w: [Tensor<f64>; 4] = std::array::from_fn(|_| Tensor::zeros(&[4, 4]));
        w[0] = Tensor::from_fn(&[4, 4], |k| if k / 4 == k % 4 { 1.0 } else { 0.0 });
        let lift = SpatialParams::new(w, 2, 100.0).unwrap();
        assert_eq!(combine_relative(&f, &lift).unwrap().data(), f[0].data());
    }

    #[test]
    fn combine_matches_four_separate_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = random_params(&mut rng, 5, 4);
        let f = relative_vertex_features::<f64>(
            &QuadBox::from_rect(0.11, 0.52, 0.3, 0.55),
            &QuadBox::from_rect(0.7, 0.1, 0.72, 0.2),
            4,
            100.0,
        )
        .unwrap();
        let got = combine_relative(&f, &params).unwrap();
        let mut expect = [0.0; 5];
        for v in 0..4 {
            let col = f[v].clone().reshape(&[8, 1]).unwrap();
            let term = params.weights[v].matmul(&col).unwrap();
            for r in 0..5 {
                expect[r] += term.data()[r];
            }
        }
        for r in 0..5 {
            assert!((got.data()[r] - expect[r]).abs() < 1e-12);
        }
    }

    #[test]
    fn combine_rejects_shape_mismatch() {
        let f: [Tensor<f64>; 4] = std::array::from_fn(|_| Tensor::zeros(&[6]));
        let params = SpatialParams::new(std::array::from_fn(|_| Tensor::zeros(&[3, 4])), 2, 1.0).unwrap();
        assert!(matches!(combine_relative(&f, &params), Err(Error::Dimension { .. })));
    }

    #[test]
    fn pairwise_single_box_and_entry_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = random_params(&mut rng, 4, 4);
        let one = [QuadBox::from_rect(0.2, 0.2, 0.4, 0.3)];
        let pe = pairwise_embeddings(&one, &params).unwrap();
        assert_eq!(pe.len(), 1);
        let f = relative_vertex_features::<f64>(&one[0], &one[0], 4, 100.0).unwrap();
        let expect = combine_relative(&f, &params).unwrap();
        for (a, b) in pe.get(0, 0).iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }

        let boxes = [
            QuadBox::from_rect(0.1, 0.1, 0.2, 0.15),
            QuadBox::from_rect(0.5, 0.1, 0.6, 0.15),
            QuadBox::from_rect(0.1, 0.4, 0.3, 0.45),
        ];
        let pe = pairwise_embeddings(&boxes, &params).unwrap();
        assert_eq!(pe.dim(), 4);
        for i in 0..3 {
            for j in 0..3 {
                let f = relative_vertex_features::<f64>(&boxes[i], &boxes[j], 4, 100.0).unwrap();
                let e = combine_relative(&f, &params).unwrap();
                for (a, b) in pe.get(i, j).iter().zip(e.data()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pairwise_translation_invariant_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = random_params(&mut rng, 4, 4);
        let (w, h) = (800.0, 1000.0);
        let rects: Vec<[f64; 4]> = (0..6)
            .map(|_| {
                let x = rng.gen_range(0..600) as f64;
                let y = rng.gen_range(0..800) as f64;
                [x, y, x + rng.gen_range(10..80) as f64, y + 14.0]
            })
            .collect();
        let boxes = |dx: f64, dy: f64| -> Vec<QuadBox> {
            rects
                .iter()
                .map(|r| {
                    let raw = [
                        r[0] + dx,
                        r[1] + dy,
                        r[2] + dx,
                        r[1] + dy,
                        r[2] + dx,
                        r[3] + dy,
                        r[0] + dx,
                        r[3] + dy,
                    ];
                    normalize_box(&raw, w, h).unwrap()
                })
                .collect()
        };
        let base = pairwise_embeddings(&boxes(0.0, 0.0), &params).unwrap();
        let moved = pairwise_embeddings(&boxes(37.0, 61.0), &params).unwrap();
        assert_eq!(base, moved);
    }
}
