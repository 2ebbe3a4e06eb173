use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    derive_seed, importance_data, keep_count, layer_targets, report, retrain, PruneConfig,
    PruneOutcome,
};
use crate::data::GroupedDataset;
use crate::error::{Error, Result};
use crate::network::{MaskedLayer, Model};
use crate::tensor::Tensor;

/// Keeps the `keep` best candidates under `better`, which orders indices best first.
fn top_k_by<F: Fn(usize, usize) -> Ordering>(
    candidates: &[bool],
    keep: usize,
    better: F,
) -> Result<Vec<u8>> {
    let mut idx: Vec<usize> = (0..candidates.len()).filter(|&i| candidates[i]).collect();
    if keep > idx.len() {
        return Err(Error::Contract(format!(
            "cannot keep {keep} of {} unpruned weights",
            idx.len()
        )));
    }
    idx.sort_by(|&a, &b| better(a, b).then(a.cmp(&b)));
    let mut mask = vec![0u8; candidates.len()];
    for &i in &idx[..keep] {
        mask[i] = 1;
    }
    Ok(mask)
}

/// Highest `scores` among candidates; ties go to the lowest index.
pub fn top_k_layer(scores: &[f64], candidates: &[bool], keep: usize) -> Result<Vec<u8>> {
    top_k_by(candidates, keep, |a, b| scores[b].total_cmp(&scores[a]))
}

/// Like [`top_k_layer`] over all layers at once, with an optional secondary key.
pub fn top_k_global(
    scores: &[f64],
    secondary: Option<&[f64]>,
    candidates: &[bool],
    keep: usize,
) -> Result<Vec<u8>> {
    top_k_by(candidates, keep, |a, b| {
        let first = scores[b].total_cmp(&scores[a]);
        match secondary {
            Some(s) => first.then(s[b].total_cmp(&s[a])),
            None => first,
        }
    })
}

/// Largest `|w|` among the layer's unpruned weights.
pub fn magnitude_select(layer: &MaskedLayer, keep: usize) -> Result<Vec<u8>> {
    let mags: Vec<f64> = layer.weights().data().iter().map(|w| w.abs()).collect();
    let candidates: Vec<bool> = layer.mask().iter().map(|&m| m == 1).collect();
    top_k_layer(&mags, &candidates, keep)
}

fn iterative_magnitude(
    model: &Model,
    data: &GroupedDataset,
    config: &PruneConfig,
    reset: bool,
) -> Result<PruneOutcome> {
    config.validate()?;
    if reset && !model.has_snapshot() {
        return Err(Error::Contract(
            "lottery pruning needs an initial snapshot".into(),
        ));
    }
    let iters = config.iterations()?;
    let sizes: Vec<usize> = model.layers().iter().map(|l| l.len()).collect();
    let targets = layer_targets(&sizes, config.target_keep);
    let mut current = model.clone();
    let mut reports = Vec::with_capacity(iters);
    let mut snapshots = Vec::with_capacity(iters);
    for it in 0..iters {
        for l in 0..sizes.len() {
            let keep = keep_count(
                current.layers()[l].kept(),
                targets[l],
                config.step_prune_fraction,
                it,
                iters,
            );
            let mask = magnitude_select(&current.layers()[l], keep)?;
            current.layer_mut(l).set_mask(mask)?;
        }
        if reset {
            current.reset_to_snapshot()?;
        }
        let losses = retrain(
            &mut current,
            data,
            &config.retrain(it, config.retrain_epochs),
        )?;
        reports.push(report(&current, it, losses, Vec::new()));
        snapshots.push(current.clone());
    }
    Ok(PruneOutcome {
        model: current,
        traces: Vec::new(),
        reports,
        iteration_models: snapshots,
    })
}

/// Layer-wise iterative magnitude pruning on the shared schedule.
pub fn magnitude_prune(
    model: &Model,
    data: &GroupedDataset,
    config: &PruneConfig,
) -> Result<PruneOutcome> {
    iterative_magnitude(model, data, config, false)
}

/// Iterative magnitude pruning that rewinds survivors to the initial snapshot.
pub fn lottery_prune(
    model: &Model,
    data: &GroupedDataset,
    config: &PruneConfig,
) -> Result<PruneOutcome> {
    iterative_magnitude(model, data, config, true)
}

/// One seeded mini-batch from the rows importance is computed on.
fn score_batch(
    model: &Model,
    data: &GroupedDataset,
    config: &PruneConfig,
) -> Result<(Tensor, Vec<usize>)> {
    let pool = importance_data(model, data, config)?;
    let n = pool.len().min(config.batch_size);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 4, 0));
    let rows = sample(&mut rng, pool.len(), n).into_vec();
    pool.batch(&rows)
}

fn flat_weight_grads(model: &Model, batch: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    let (_, g) = model.loss_and_gradients(batch, labels)?;
    Ok(g.weights.into_iter().flatten().collect())
}

/// Connection sensitivity `|g·w|` over all weights, flattened layer by layer.
pub fn snip_scores(model: &Model, batch: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    let g = flat_weight_grads(model, batch, labels)?;
    Ok(g.iter()
        .zip(model.flat_weights())
        .zip(model.flat_masks())
        .map(|((g, w), m)| if m == 1 { (g * w).abs() } else { 0.0 })
        .collect())
}

/// `H·g` by a forward difference of gradients along `ĝ = g/‖g‖`, with step
/// `1e-4·max(1, ‖θ‖)`. Returns zeros when `g = 0`.
pub fn hessian_gradient_product<F>(mut grad: F, theta: &[f64], g: &[f64]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if theta.len() != g.len() {
        return Err(Error::dim(
            "hessian_gradient_product",
            &[theta.len()],
            &[g.len()],
        ));
    }
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(vec![0.0; g.len()]);
    }
    let theta_norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
    let eps = 1e-4 * theta_norm.max(1.0);
    let shifted: Vec<f64> = theta
        .iter()
        .zip(g)
        .map(|(t, gi)| t + eps * gi / norm)
        .collect();
    let g2 = grad(&shifted)?;
    if g2.len() != g.len() {
        return Err(Error::dim(
            "hessian_gradient_product",
            &[g.len()],
            &[g2.len()],
        ));
    }
    Ok(g2
        .iter()
        .zip(g)
        .map(|(b, a)| norm * (b - a) / eps)
        .collect())
}

/// The same product along the unit direction, `H·ĝ`.
pub fn hessian_direction_product<F>(grad: F, theta: &[f64], g: &[f64]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let hg = hessian_gradient_product(grad, theta, g)?;
    Ok(if norm == 0.0 {
        hg
    } else {
        hg.into_iter().map(|v| v / norm).collect()
    })
}

/// Gradient-flow scores `-w·(Hg)_w`; pruned weights score 0.
pub fn grasp_scores(model: &Model, batch: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    let masks = model.flat_masks();
    let theta = model.flat_weights();
    let g: Vec<f64> = flat_weight_grads(model, batch, labels)?
        .into_iter()
        .zip(&masks)
        .map(|(v, &m)| if m == 1 { v } else { 0.0 })
        .collect();
    let mut probe = model.clone();
    let hg = hessian_gradient_product(
        |t| {
            probe.set_flat_weights(t)?;
            flat_weight_grads(&probe, batch, labels)
        },
        &theta,
        &g,
    )?;
    Ok(theta
        .iter()
        .zip(&hg)
        .zip(&masks)
        .map(|((w, h), &m)| if m == 1 { -w * h } else { 0.0 })
        .collect())
}

fn single_shot(
    model: &Model,
    data: &GroupedDataset,
    config: &PruneConfig,
    scores: Vec<f64>,
    secondary: Option<Vec<f64>>,
) -> Result<PruneOutcome> {
    let iters = config.iterations()?;
    let sizes: Vec<usize> = model.layers().iter().map(|l| l.len()).collect();
    let total: usize = layer_targets(&sizes, config.target_keep).iter().sum();
    let candidates: Vec<bool> = model.flat_masks().iter().map(|&m| m == 1).collect();
    let keep = total.min(candidates.iter().filter(|&&c| c).count());
    let mask = top_k_global(&scores, secondary.as_deref(), &candidates, keep)?;
    let mut current = model.clone();
    current.set_flat_masks(&mask)?;
    // same total retraining budget as the iterative methods
    let losses = retrain(
        &mut current,
        data,
        &config.retrain(0, config.retrain_epochs * iters),
    )?;
    Ok(PruneOutcome {
        reports: vec![report(&current, 0, losses, Vec::new())],
        iteration_models: vec![current.clone()],
        model: current,
        traces: Vec::new(),
    })
}

/// Single-shot global pruning by connection sensitivity on one mini-batch.
pub fn snip_prune(
    model: &Model,
    data: &GroupedDataset,
    config: &PruneConfig,
) -> Result<PruneOutcome> {
    config.validate()?;
    let (x, y) = score_batch(model, data, config)?;
    let scores = snip_scores(model, &x, &y)?;
    single_shot(model, data, config, scores, None)
}

/// Single-shot global pruning that keeps the highest gradient-flow scores;
/// ties (including the all-zero case) fall back to magnitude.
pub fn grasp_prune(
    model: &Model,
    data: &GroupedDataset,
    config: &PruneConfig,
) -> Result<PruneOutcome> {
    config.validate()?;
    let (x, y) = score_batch(model, data, config)?;
    let scores = grasp_scores(model, &x, &y)?;
    let mags = model.flat_weights().iter().map(|w| w.abs()).collect();
    single_shot(model, data, config, scores, Some(mags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Architecture, LayerKind};
    use rand::Rng;

    fn dense(weights: &[f64]) -> MaskedLayer {
        MaskedLayer::new(
            0,
            LayerKind::Dense,
            Tensor::matrix(1, weights.len(), weights.to_vec()).unwrap(),
            Tensor::vector(vec![0.0; weights.len()]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn magnitude_examples() {
        assert_eq!(
            magnitude_select(&dense(&[3.0, -4.0, 1.0, 2.0]), 2).unwrap(),
            vec![1, 1, 0, 0]
        );
        assert_eq!(
            magnitude_select(&dense(&[1.0, -1.0, 1.0, 1.0]), 2).unwrap(),
            vec![1, 1, 0, 0]
        );
        assert_eq!(
            magnitude_select(&dense(&[1.0, 2.0]), 2).unwrap(),
            vec![1, 1]
        );
        assert!(magnitude_select(&dense(&[1.0]), 2).is_err());
    }

    #[test]
    fn global_secondary_key_breaks_ties() {
        let mask = top_k_global(&[0.0, 0.0, 0.0], Some(&[1.0, 3.0, 2.0]), &[true; 3], 2).unwrap();
        assert_eq!(mask, vec![0, 1, 1]);
        let mask = top_k_global(&[0.0, 0.0, 0.0], None, &[true; 3], 2).unwrap();
        assert_eq!(mask, vec![1, 1, 0]);
    }

    fn quadratic(a: &[Vec<f64>]) -> impl FnMut(&[f64]) -> Result<Vec<f64>> + '_ {
        move |t: &[f64]| {
            Ok(a.iter()
                .map(|row| row.iter().zip(t).map(|(x, y)| x * y).sum())
                .collect())
        }
    }

    #[test]
    fn hvp_on_quadratic_matches_a_g() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let n = 6;
            let b: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            // symmetric A = B + Bᵀ
            let a: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..n).map(|j| b[i][j] + b[j][i]).collect())
                .collect();
            let theta: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g = quadratic(&a)(&theta).unwrap();
            let hg = hessian_gradient_product(quadratic(&a), &theta, &g).unwrap();
            let want = quadratic(&a)(&g).unwrap();
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let err: Vec<f64> = hg.iter().zip(&want).map(|(x, y)| x - y).collect();
            assert!(norm(&err) <= 1e-3 * norm(&want));
            let hd = hessian_direction_product(quadratic(&a), &theta, &g).unwrap();
            for (x, y) in hd.iter().zip(&want) {
                assert!((x - y / norm(&g)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_gradient_gives_zero_product() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let hg = hessian_gradient_product(quadratic(&a), &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(hg, vec![0.0, 0.0]);
    }

    fn tiny() -> (Model, Tensor, Vec<usize>) {
        let arch = Architecture::Mlp {
            input: 3,
            hidden: vec![4],
            classes: 2,
        };
        let m = Model::new(&arch, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x =
            Tensor::matrix(8, 3, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        (m, x, vec![0, 1, 1, 0, 1, 0, 0, 1])
    }

    #[test]
    fn snip_matches_sort_oracle_and_batch_duplication() {
        let (m, x, y) = tiny();
        let s = snip_scores(&m, &x, &y).unwrap();
        let mut doubled = x.data().to_vec();
        doubled.extend_from_slice(x.data());
        let x2 = Tensor::matrix(16, 3, doubled).unwrap();
        let y2: Vec<usize> = y.iter().chain(&y).copied().collect();
        let s2 = snip_scores(&m, &x2, &y2).unwrap();
        let cand = vec![true; s.len()];
        assert_eq!(
            top_k_global(&s, None, &cand, 9).unwrap(),
            top_k_global(&s2, None, &cand, 9).unwrap()
        );
        // brute-force oracle: keep i iff fewer than k entries beat it
        let mask = top_k_global(&s, None, &cand, 9).unwrap();
        for i in 0..s.len() {
            let better = (0..s.len())
                .filter(|&j| s[j] > s[i] || (s[j] == s[i] && j < i))
                .count();
            assert_eq!(mask[i] == 1, better < 9);
        }
    }

    #[test]
    fn grasp_matches_two_pass_oracle() {
        let (m, x, y) = tiny();
        let s = grasp_scores(&m, &x, &y).unwrap();
        // independent: plain FD of gradients at θ and θ + εĝ
        let theta = m.flat_weights();
        let (_, g) = m.loss_and_gradients(&x, &y).unwrap();
        let g: Vec<f64> = g.weights.concat();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let eps = 1e-4 * theta.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        let mut probe = m.clone();
        probe
            .set_flat_weights(
                &theta
                    .iter()
                    .zip(&g)
                    .map(|(t, v)| t + eps * v / norm)
                    .collect::<Vec<_>>(),
            )
            .unwrap();
        let (_, g2) = probe.loss_and_gradients(&x, &y).unwrap();
        let g2: Vec<f64> = g2.weights.concat();
        for i in 0..s.len() {
            let want = -theta[i] * norm * (g2[i] - g[i]) / eps;
            assert!((s[i] - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
    }

    #[test]
    fn pruned_weights_score_zero() {
        let (mut m, x, y) = tiny();
        let mut mask = vec![1u8; 12];
        mask[0] = 0;
        m.layer_mut(0).set_mask(mask).unwrap();
        assert_eq!(snip_scores(&m, &x, &y).unwrap()[0], 0.0);
        assert_eq!(grasp_scores(&m, &x, &y).unwrap()[0], 0.0);
    }
}
