//! Baseline layout encodings used for comparison with the relative mode.

use crate::error::Result;
use crate::numerics::{ParamStore, Scalar, Tensor};
use crate::spatial::QuadBox;

/// Offsets are measured in thousandths of the page for bucketing.
const AXIS_RANGE: f64 = 1000.0;

/// Grid cell of a normalized coordinate; `1.0` lands in the last cell.
pub fn abs_bucket(coord: f64, grid: usize) -> usize {
    let b = (coord.clamp(0.0, 1.0) * grid as f64).floor() as usize;
    b.min(grid - 1)
}

/// Signed log-scale bucket of a normalized offset over `buckets` bins
/// (odd); zero maps to the center bin and `-d` mirrors `d`.
pub fn axis_bucket(d: f64, buckets: usize) -> usize {
    let half = (buckets - 1) / 2;
    let u = d.abs() * AXIS_RANGE;
    let k = if u == 0.0 {
        0
    } else {
        let scaled = (half as f64 * u.ln_1p() / AXIS_RANGE.ln_1p()).ceil() as usize;
        scaled.clamp(1, half)
    };
    if d < 0.0 {
        half - k
    } else {
        half + k
    }
}

/// Sum of the x- and y-table rows selected by the top-left vertex.
pub fn absolute_embedding<T: Scalar>(bx: &QuadBox, store: &ParamStore<T>, grid: usize) -> Result<Tensor<T>> {
    let tx = store.get("encoder.embeddings.abs_x")?;
    let ty = store.get("encoder.embeddings.abs_y")?;
    let rx = tx.row(abs_bucket(bx.tl.x, grid));
    let ry = ty.row(abs_bucket(bx.tl.y, grid));
    Tensor::new(vec![rx.len()], rx.iter().zip(ry).map(|(&a, &b)| a + b).collect())
}

/// Scalar logit bias between two boxes from the learned axis tables.
pub fn axis_bias<T: Scalar>(box_i: &QuadBox, box_j: &QuadBox, store: &ParamStore<T>, buckets: usize) -> Result<T> {
    let tx = store.get("encoder.axis_bias.x")?;
    let ty = store.get("encoder.axis_bias.y")?;
    Ok(tx.data()[axis_bucket(box_i.tl.x - box_j.tl.x, buckets)] + ty.data()[axis_bucket(box_i.tl.y - box_j.tl.y, buckets)])
}
