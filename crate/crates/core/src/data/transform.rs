use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::document::Document;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMode {
    #[default]
    Identity,
    Permute,
    Xy,
    Yx,
}

/// Replace the block order; everything else is untouched.
pub fn transform_order(doc: &Document, mode: OrderMode, seed: u64) -> Document {
    let mut out = doc.clone();
    match mode {
        OrderMode::Identity => {}
        OrderMode::Permute => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            out.order.shuffle(&mut rng);
        }
        OrderMode::Xy | OrderMode::Yx => {
            let tl = |id: &u32| {
                let q = doc.block(*id).map(|b| b.quad).unwrap_or([0.0; 8]);
                (q[0], q[1])
            };
            out.order.sort_by(|a, b| {
                let (ax, ay) = tl(a);
                let (bx, by) = tl(b);
                let primary = if mode == OrderMode::Xy {
                    ax.total_cmp(&bx).then(ay.total_cmp(&by))
                } else {
                    ay.total_cmp(&by).then(ax.total_cmp(&bx))
                };
                primary.then(a.cmp(b))
            });
        }
    }
    out
}

/// Rotate every vertex about the page center, grow the page around the
/// same center until it contains every box, then re-serialize top to
/// bottom.
pub fn rotate(doc: &Document, angle_deg: f64) -> Result<Document> {
    if !(angle_deg > -45.0 && angle_deg < 45.0) {
        return Err(Error::Config(format!("rotation angle {angle_deg} outside (-45, 45)")));
    }
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (cx, cy) = (doc.page.w / 2.0, doc.page.h / 2.0);
    let mut out = doc.clone();
    let mut half_w = cx;
    let mut half_h = cy;
    for b in &mut out.blocks {
        for k in 0..4 {
            let (dx, dy) = (b.quad[2 * k] - cx, b.quad[2 * k + 1] - cy);
            let (rx, ry) = (dx * c - dy * s, dx * s + dy * c);
            half_w = half_w.max(rx.abs());
            half_h = half_h.max(ry.abs());
            b.quad[2 * k] = rx;
            b.quad[2 * k + 1] = ry;
        }
    }
    for b in &mut out.blocks {
        for k in 0..4 {
            b.quad[2 * k] += half_w;
            b.quad[2 * k + 1] += half_h;
        }
    }
    out.page.w = 2.0 * half_w;
    out.page.h = 2.0 * half_h;
    Ok(transform_order(&out, OrderMode::Yx, 0))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::data::generator::{generate, GeneratorConfig};

    fn docs() -> Vec<Document> {
        generate(&GeneratorConfig::default(), 8).unwrap()
    }

    fn centered(doc: &Document) -> Vec<[f64; 8]> {
        let (cx, cy) = (doc.page.w / 2.0, doc.page.h / 2.0);
        doc.blocks
            .iter()
            .map(|b| std::array::from_fn(|k| b.quad[k] - if k % 2 == 0 { cx } else { cy }))
            .collect()
    }

    #[test]
    fn identity_is_noop() {
        for d in docs() {
            assert_eq!(transform_order(&d, OrderMode::Identity, 1), d);
        }
    }

    #[test]
    fn sorts_are_idempotent() {
        for d in docs() {
            for m in [OrderMode::Xy, OrderMode::Yx] {
                let once = transform_order(&d, m, 0);
                assert_eq!(transform_order(&once, m, 0), once);
            }
        }
    }

    #[test]
    fn permute_is_reproducible_bijection() {
        for d in docs() {
            let a = transform_order(&d, OrderMode::Permute, 5);
            assert_eq!(a, transform_order(&d, OrderMode::Permute, 5));
            let ids: BTreeSet<_> = d.order.iter().collect();
            assert_eq!(a.order.iter().collect::<BTreeSet<_>>(), ids);
            assert_eq!(a.order.len(), d.order.len());
            assert_eq!(a.content_hash(), d.content_hash());
        }
    }

    #[test]
    fn zero_rotation_only_reorders() {
        for d in docs() {
            let r = rotate(&d, 0.0).unwrap();
            assert_eq!(r.blocks, d.blocks);
            assert_eq!(r.order, transform_order(&d, OrderMode::Yx, 0).order);
        }
    }

    #[test]
    fn inverse_rotation_restores_vertices() {
        for d in docs() {
            let back = rotate(&rotate(&d, 17.0).unwrap(), -17.0).unwrap();
            for (a, b) in centered(&d).iter().zip(centered(&back).iter()) {
                for k in 0..8 {
                    assert!((a[k] - b[k]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn rotation_preserves_distances() {
        let dist = |a: &[f64; 8], b: &[f64; 8], i: usize, j: usize| {
            ((a[2 * i] - b[2 * j]).powi(2) + (a[2 * i + 1] - b[2 * j + 1]).powi(2)).sqrt()
        };
        for d in docs() {
            let r = rotate(&d, -30.0).unwrap();
            for x in 0..d.blocks.len().min(6) {
                for y in 0..d.blocks.len().min(6) {
                    for i in 0..4 {
                        for j in 0..4 {
                            let before = dist(&d.blocks[x].quad, &d.blocks[y].quad, i, j);
                            let after = dist(&r.blocks[x].quad, &r.blocks[y].quad, i, j);
                            assert!((before - after).abs() < 1e-9);
                        }
                    }
                }
            }
            for b in &r.blocks {
                for k in 0..4 {
                    assert!(b.quad[2 * k] >= 0.0 && b.quad[2 * k] <= r.page.w);
                    assert!(b.quad[2 * k + 1] >= 0.0 && b.quad[2 * k + 1] <= r.page.h);
                }
            }
        }
    }

    #[test]
    fn rotation_angle_is_bounded() {
        assert!(rotate(&docs()[0], 45.0).is_err());
    }
}
