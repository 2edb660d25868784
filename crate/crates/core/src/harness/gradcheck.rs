use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::Serialize;

use crate::encoder::{self, EncoderConfig, SpatialMode, TokenInput};
use crate::error::Result;
use crate::heads::{self, head_forward, head_losses, HeadConfig, HeadGold, HeadKind};
use crate::numerics::{grad_check, Graph, ParamStore};
use crate::objectives::{init_mlm_head, mlm_objective};
use crate::spatial::QuadBox;

/// Loss attached to the encoder in one trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Mlm,
    Spade,
    Rel,
    Bio,
}

const OBJECTIVES: [Objective; 4] = [Objective::Mlm, Objective::Spade, Objective::Rel, Objective::Bio];
const MODES: [SpatialMode; 4] = [SpatialMode::Relative, SpatialMode::Absolute, SpatialMode::AxisBias, SpatialMode::None];

#[derive(Clone, Debug, Serialize)]
pub struct TrialResult {
    pub trial: usize,
    pub objective: Objective,
    pub spatial_mode: SpatialMode,
    pub use_1d_positions: bool,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub tokens: usize,
    pub max_rel_error: f64,
}

fn random_box<R: Rng>(rng: &mut R) -> QuadBox {
    let x0 = rng.gen_range(0.0..0.8);
    let y0 = rng.gen_range(0.0..0.9);
    QuadBox::from_rect(x0, y0, x0 + rng.gen_range(0.01..0.2), y0 + rng.gen_range(0.01..0.1))
}

/// One random architecture, input, head and gold; returns the worst
/// relative error between analytic and central-difference gradients.
pub fn run_trial(trial: usize, seed: u64) -> Result<TrialResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    let objective = OBJECTIVES[trial % 4];
    let mode = MODES[(trial + trial / 4) % 4];
    let heads_n = [1, 2][rng.gen_range(0..2)];
    let head_dim = [4, 6][rng.gen_range(0..2)];
    let vocab = 12;
    let cfg = EncoderConfig {
        num_layers: rng.gen_range(1..=2),
        hidden: heads_n * head_dim,
        heads: heads_n,
        ffn: [8, 12][rng.gen_range(0..2)],
        vocab_size: vocab,
        max_tokens: 8,
        sinusoid_dim: [2, 4][rng.gen_range(0..2)],
        spatial_mode: mode,
        use_1d_positions: rng.gen_bool(0.5),
        dropout: 0.0,
        abs_grid: 8,
        axis_bias_buckets: 9,
        layer_norm_eps: 1e-5,
        ..EncoderConfig::default()
    };
    let n = rng.gen_range(3..=6);
    let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..vocab)).collect();
    let boxes: Vec<QuadBox> = (0..n).map(|_| random_box(&mut rng)).collect();
    let mut input = TokenInput::new(ids, boxes);
    if n > 3 && rng.gen_bool(0.5) {
        input.mask[n - 1] = false;
    }
    let mask = input.mask.clone();

    let mut params: ParamStore<f64> = encoder::init_params(&cfg, &mut rng)?;
    let classes = 2;
    let head_cfg = HeadConfig {
        stc_dim: 3,
        rel_dim: 3,
        rel_pos_weight: 2.0,
        ..HeadConfig::default()
    };
    let kinds: &[HeadKind] = match objective {
        Objective::Mlm => &[],
        Objective::Spade => &[HeadKind::Itc, HeadKind::Stc],
        Objective::Rel => &[HeadKind::Rel],
        Objective::Bio => &[HeadKind::Bio],
    };
    if objective == Objective::Mlm {
        params.extend(init_mlm_head(cfg.hidden, vocab, &mut rng));
    } else {
        params.extend(heads::init_params(&head_cfg, kinds, classes, cfg.hidden, &mut rng)?);
    }
    // Layout tables start at zero; perturb them so their gradients are
    // exercised away from the origin.
    for (name, t) in params.iter_mut() {
        if name.contains("abs_") || name.contains("axis_bias") || name.ends_with("bias") || name.ends_with("beta") {
            t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
        }
    }

    let real = |i: usize| mask[i];
    let gold = HeadGold {
        entities: Vec::new(),
        links: Vec::new(),
        itc: (0..n).map(|i| real(i).then(|| rng.gen_range(0..=classes))).collect(),
        stc: (0..n)
            .map(|i| {
                let options: Vec<usize> = std::iter::once(0).chain((0..n).filter(|&j| j != i && real(j)).map(|j| j + 1)).collect();
                real(i).then(|| options[rng.gen_range(0..options.len())])
            })
            .collect(),
        rel: (0..n * n).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect(),
        bio: (0..n).map(|i| real(i).then(|| rng.gen_range(0..2 * classes + 1))).collect(),
    };
    let mut masked = Vec::new();
    for i in (0..n).filter(|&i| real(i)) {
        if rng.gen_bool(0.5) {
            masked.push((i, rng.gen_range(0..vocab)));
        }
    }
    let targets = if masked.is_empty() { vec![(0, 1)] } else { masked };

    let err = grad_check(&params, 1e-3, 6, &mut rng, |g: &mut Graph<'_, f64>, p| {
        let out = encoder::encode_graph(g, p, &cfg, &input, None)?;
        if objective == Objective::Mlm {
            Ok(mlm_objective(g, p, out.hidden, &targets, cfg.layer_norm_eps)?.expect("targets are non-empty"))
        } else {
            let logits = head_forward(g, p, out.hidden, kinds)?;
            head_losses(g, &logits, &gold, &mask, head_cfg.rel_pos_weight)
        }
    })?;
    Ok(TrialResult {
        trial,
        objective,
        spatial_mode: mode,
        use_1d_positions: cfg.use_1d_positions,
        layers: cfg.num_layers,
        hidden: cfg.hidden,
        heads: cfg.heads,
        tokens: n,
        max_rel_error: err,
    })
}

pub fn run_trials(trials: usize, seed: u64) -> Result<Vec<TrialResult>> {
    (0..trials).map(|t| run_trial(t, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_objective_and_mode_checks_out() {
        for r in run_trials(40, 11).unwrap() {
            assert!(r.max_rel_error <= 1e-4, "{r:?}");
        }
    }
}
