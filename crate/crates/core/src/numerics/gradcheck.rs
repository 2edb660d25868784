use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Var};

/// Compare reverse-mode gradients against the five-point central
/// difference `(f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h`.
///
/// `f` records a scalar loss over the given parameters. Up to
/// `coords_per_param` coordinates of every parameter are probed (all of
/// them when the tensor is smaller). The result is the maximum over probed
/// coordinates of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F, R>(params: &ParamStore<f64>, step: f64, coords_per_param: usize, rng: &mut R, f: F) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g, f64>, &'g ParamStore<f64>) -> Result<Var>,
    R: Rng + ?Sized,
{
    let eval = |p: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let loss = f(&mut g, p)?;
        let v = g.value(loss).item()?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite objective {v}")));
        }
        Ok(v)
    };

    let analytic = {
        let mut g = Graph::new();
        let loss = f(&mut g, params)?;
        if !g.value(loss).item()?.is_finite() {
            return Err(Error::Numeric("non-finite objective".into()));
        }
        g.backward(loss)?
    };

    let mut worst = 0.0f64;
    let mut probe = params.clone();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let n = params.get(&name)?.numel();
        let coords: Vec<usize> = if n <= coords_per_param {
            (0..n).collect()
        } else {
            sample(rng, n, coords_per_param).into_vec()
        };
        for c in coords {
            let orig = params.get(&name)?.data()[c];
            let mut at = |offset: f64| -> Result<f64> {
                probe.get_mut(&name).expect("cloned store").data_mut()[c] = orig + offset;
                eval(&probe)
            };
            let (p1, m1, p2, m2) = (at(step)?, at(-step)?, at(2.0 * step)?, at(-2.0 * step)?);
            probe.get_mut(&name).expect("cloned store").data_mut()[c] = orig;

            let numeric = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * step);
            let a = analytic.get(&name).map_or(0.0, |t| t.data()[c]);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
