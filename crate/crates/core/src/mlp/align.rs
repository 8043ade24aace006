//! Hidden-unit permutations and weight matching.

use std::collections::BTreeSet;

use crate::error::{MarketError, Result};
use crate::mlp::assignment::linear_assignment;
use crate::mlp::net::{Layer, MlpParams};
use crate::scalar::Scalar;

/// One permutation per hidden layer. After applying, hidden unit `i` of
/// layer `l` is the old unit `perms[l][i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPermutations {
    pub perms: Vec<Vec<usize>>,
}

impl LayerPermutations {
    pub fn identity<T: Scalar>(params: &MlpParams<T>) -> Self {
        Self {
            perms: hidden_widths(params).iter().map(|&w| (0..w).collect()).collect(),
        }
    }

    pub fn new(perms: Vec<Vec<usize>>) -> Result<Self> {
        for p in &perms {
            let mut seen = vec![false; p.len()];
            for &j in p {
                if j >= p.len() || std::mem::replace(&mut seen[j], true) {
                    return Err(MarketError::domain(format!("{p:?} is not a permutation")));
                }
            }
        }
        Ok(Self { perms })
    }

    pub fn inverse(&self) -> Self {
        Self {
            perms: self
                .perms
                .iter()
                .map(|p| {
                    let mut inv = vec![0; p.len()];
                    for (i, &j) in p.iter().enumerate() {
                        inv[j] = i;
                    }
                    inv
                })
                .collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.perms
            .iter()
            .all(|p| p.iter().enumerate().all(|(i, &j)| i == j))
    }
}

fn hidden_widths<T: Scalar>(params: &MlpParams<T>) -> Vec<usize> {
    let w = params.widths();
    w[1..w.len() - 1].to_vec()
}

fn check_perms<T: Scalar>(params: &MlpParams<T>, perms: &LayerPermutations) -> Result<()> {
    let widths = hidden_widths(params);
    if perms.perms.len() != widths.len()
        || perms.perms.iter().zip(&widths).any(|(p, &w)| p.len() != w)
    {
        return Err(MarketError::Architecture(format!(
            "permutation widths {:?} do not match hidden widths {widths:?}",
            perms.perms.iter().map(Vec::len).collect::<Vec<_>>()
        )));
    }
    Ok(())
}

/// Re-indexes hidden units; the network computes the same function.
pub fn apply_permutation<T: Scalar>(
    params: &MlpParams<T>,
    perms: &LayerPermutations,
) -> Result<MlpParams<T>> {
    check_perms(params, perms)?;
    let layers = params.layers();
    let out = layers
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let rows: Option<&Vec<usize>> = perms.perms.get(k);
            let cols: Option<&Vec<usize>> = k.checked_sub(1).map(|j| &perms.perms[j]);
            let row_of = |i: usize| rows.map_or(i, |p| p[i]);
            let col_of = |j: usize| cols.map_or(j, |p| p[j]);
            let weights = (0..l.outputs)
                .flat_map(|i| (0..l.inputs).map(move |j| (i, j)))
                .map(|(i, j)| l.w(row_of(i), col_of(j)))
                .collect();
            let bias = (0..l.outputs).map(|i| l.bias[row_of(i)]).collect();
            Layer::new(l.inputs, l.outputs, weights, bias)
        })
        .collect::<Result<_>>()?;
    MlpParams::new(out)
}

/// `Σ_l ⟨W_l, W'_l⟩ + ⟨b_l, b'_l⟩`.
pub fn matching_objective<T: Scalar>(a: &MlpParams<T>, b: &MlpParams<T>) -> T {
    a.layers()
        .iter()
        .zip(b.layers())
        .map(|(x, y)| {
            let w: T = x.weights.iter().zip(&y.weights).map(|(&p, &q)| p * q).sum();
            let c: T = x.bias.iter().zip(&y.bias).map(|(&p, &q)| p * q).sum();
            w + c
        })
        .sum()
}

/// Similarity between reference unit `i` and candidate unit `j` of hidden
/// layer `h`, other layers' permutations held fixed.
fn similarity<T: Scalar>(
    reference: &MlpParams<T>,
    candidate: &MlpParams<T>,
    perms: &LayerPermutations,
    h: usize,
    outgoing: bool,
) -> Vec<Vec<T>> {
    let (r_in, c_in) = (&reference.layers()[h], &candidate.layers()[h]);
    let (r_out, c_out) = (&reference.layers()[h + 1], &candidate.layers()[h + 1]);
    let prev = h.checked_sub(1).map(|k| &perms.perms[k]);
    let next = perms.perms.get(h + 1);
    let width = r_in.outputs;
    (0..width)
        .map(|i| {
            (0..width)
                .map(|j| {
                    let mut s = r_in.bias[i] * c_in.bias[j];
                    for k in 0..r_in.inputs {
                        s += r_in.w(i, k) * c_in.w(j, prev.map_or(k, |p| p[k]));
                    }
                    if outgoing {
                        for k in 0..r_out.outputs {
                            s += r_out.w(k, i) * c_out.w(next.map_or(k, |p| p[k]), j);
                        }
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// Maximizes `sim` over permutations.
fn maximize<T: Scalar>(sim: Vec<Vec<T>>) -> Vec<usize> {
    let cost: Vec<Vec<T>> = sim
        .into_iter()
        .map(|r| r.into_iter().map(|s| -s).collect())
        .collect();
    linear_assignment(&cost).expect("square finite similarity")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment<T> {
    pub perms: LayerPermutations,
    /// Objective after each accepted update of the winning start, starting
    /// from its initial value.
    pub trace: Vec<T>,
    pub sweeps: usize,
}

/// Coordinate ascent over hidden layers from a fixed start.
fn coordinate_ascent<T: Scalar>(
    reference: &MlpParams<T>,
    candidate: &MlpParams<T>,
    mut perms: LayerPermutations,
    max_sweeps: usize,
) -> Result<Alignment<T>> {
    let hidden = perms.perms.len();
    let mut current = matching_objective(reference, &apply_permutation(candidate, &perms)?);
    let mut trace = vec![current];
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut changed = false;
        for h in 0..hidden {
            let p = maximize(similarity(reference, candidate, &perms, h, true));
            if p == perms.perms[h] {
                continue;
            }
            let mut trial = perms.clone();
            trial.perms[h] = p;
            let value = matching_objective(reference, &apply_permutation(candidate, &trial)?);
            // Accept only genuine improvements so the trace cannot decrease
            // through rounding.
            if value > current {
                perms = trial;
                current = value;
                trace.push(current);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(Alignment {
        perms,
        trace,
        sweeps,
    })
}

/// Start that matches each hidden layer on its incoming weights only, layer
/// by layer from the input side.
fn forward_start<T: Scalar>(reference: &MlpParams<T>, candidate: &MlpParams<T>) -> LayerPermutations {
    let mut perms = LayerPermutations::identity(reference);
    for h in 0..perms.perms.len() {
        perms.perms[h] = maximize(similarity(reference, candidate, &perms, h, false));
    }
    perms
}

/// Permutations of `candidate`'s hidden units that maximize its weight
/// inner product with `reference`. Runs coordinate ascent from the identity
/// and from a forward layer-by-layer matching and keeps the better result
/// (the identity start on ties).
pub fn weight_matching_alignment_traced<T: Scalar>(
    reference: &MlpParams<T>,
    candidate: &MlpParams<T>,
    sweeps: usize,
) -> Result<Alignment<T>> {
    reference.same_architecture(candidate)?;
    if sweeps == 0 {
        return Err(MarketError::domain("sweeps must be positive"));
    }
    let a = coordinate_ascent(reference, candidate, LayerPermutations::identity(reference), sweeps)?;
    let b = coordinate_ascent(reference, candidate, forward_start(reference, candidate), sweeps)?;
    let last = |x: &Alignment<T>| *x.trace.last().expect("non-empty trace");
    Ok(if last(&b) > last(&a) { b } else { a })
}

pub fn weight_matching_alignment<T: Scalar>(
    reference: &MlpParams<T>,
    candidate: &MlpParams<T>,
    sweeps: usize,
) -> Result<LayerPermutations> {
    Ok(weight_matching_alignment_traced(reference, candidate, sweeps)?.perms)
}

/// Aligns `candidate` to `reference` and returns the permuted network.
pub fn align_to<T: Scalar>(
    reference: &MlpParams<T>,
    candidate: &MlpParams<T>,
    sweeps: usize,
) -> Result<MlpParams<T>> {
    let perms = weight_matching_alignment(reference, candidate, sweeps)?;
    apply_permutation(candidate, &perms)
}

/// Merges the layers in `layer_set` (weights and biases together) with
/// seller share `weight`; the rest stay the buyer's.
pub fn subset_merge<T: Scalar>(
    buyer: &MlpParams<T>,
    seller_aligned: &MlpParams<T>,
    layer_set: &BTreeSet<usize>,
    weight: T,
) -> Result<MlpParams<T>> {
    buyer.same_architecture(seller_aligned)?;
    if layer_set.is_empty() {
        return Err(MarketError::domain("layer set is empty"));
    }
    if let Some(&bad) = layer_set.iter().find(|&&l| l >= buyer.num_layers()) {
        return Err(MarketError::domain(format!(
            "layer {bad} out of range (network has {})",
            buyer.num_layers()
        )));
    }
    if !(weight > T::zero() && weight <= T::one()) {
        return Err(MarketError::domain(format!("merge weight must lie in (0, 1], got {weight}")));
    }
    let keep = T::one() - weight;
    let mix = |a: &[T], b: &[T]| -> Vec<T> { a.iter().zip(b).map(|(&x, &y)| keep * x + weight * y).collect() };
    let layers = buyer
        .layers()
        .iter()
        .zip(seller_aligned.layers())
        .enumerate()
        .map(|(k, (b, s))| {
            if layer_set.contains(&k) {
                Layer::new(b.inputs, b.outputs, mix(&b.weights, &s.weights), mix(&b.bias, &s.bias))
            } else {
                Ok(b.clone())
            }
        })
        .collect::<Result<_>>()?;
    MlpParams::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::moons::two_moons;
    use crate::mlp::net::{mlp_forward_loss, MlpTaskKind};
    use crate::params::merge;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_perms(params: &MlpParams<f64>, r: &mut ChaCha8Rng) -> LayerPermutations {
        let mut p = LayerPermutations::identity(params);
        p.perms.iter_mut().for_each(|v| v.shuffle(r));
        p
    }

    fn max_output_gap(a: &MlpParams<f64>, b: &MlpParams<f64>, r: &mut ChaCha8Rng) -> f64 {
        let d = a.widths()[0];
        (0..100)
            .map(|_| {
                let x: Vec<f64> = (0..d).map(|_| 3.0 * r.sample::<f64, _>(StandardNormal)).collect();
                a.forward(&x)
                    .iter()
                    .zip(b.forward(&x))
                    .map(|(p, q)| (p - q).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_leaves_params_unchanged() {
        let p = MlpParams::<f64>::random(&[2, 5, 4, 2], &mut rng(1)).unwrap();
        let id = LayerPermutations::identity(&p);
        assert!(id.is_identity());
        assert_eq!(apply_permutation(&p, &id).unwrap(), p);
    }

    #[test]
    fn permutation_validation() {
        assert!(LayerPermutations::new(vec![vec![0, 0]]).is_err());
        assert!(LayerPermutations::new(vec![vec![1, 2]]).is_err());
        let p = MlpParams::<f64>::random(&[2, 3, 2], &mut rng(1)).unwrap();
        let wrong = LayerPermutations::new(vec![vec![1, 0]]).unwrap();
        assert!(apply_permutation(&p, &wrong).is_err());
    }

    #[test]
    fn planted_permutation_in_one_layer_is_recovered() {
        let p = MlpParams::<f64>::random(&[2, 4, 2], &mut rng(2)).unwrap();
        let planted = LayerPermutations::new(vec![vec![2, 0, 3, 1]]).unwrap();
        let clone = apply_permutation(&p, &planted).unwrap();
        let found = weight_matching_alignment(&p, &clone, 10).unwrap();
        assert_eq!(found, planted.inverse());
        assert_eq!(apply_permutation(&clone, &found).unwrap(), p);
    }

    #[test]
    fn clone_alignment_merges_losslessly() {
        let data = two_moons::<f64, _>(80, 0.1, &mut rng(3)).unwrap();
        for seed in 0..5 {
            let mut r = rng(100 + seed);
            let p = MlpParams::<f64>::random(&[2, 16, 16, 16, 2], &mut r).unwrap();
            let clone = apply_permutation(&p, &random_perms(&p, &mut r)).unwrap();
            let aligned = align_to(&p, &clone, 10).unwrap();
            assert_eq!(aligned, p);
            let half = MlpParams::unflatten(
                &p.widths(),
                &merge(&p.flatten(), &aligned.flatten(), 0.5).unwrap(),
            )
            .unwrap();
            let a = mlp_forward_loss(&p, &data, MlpTaskKind::Classification).unwrap();
            let b = mlp_forward_loss(&half, &data, MlpTaskKind::Classification).unwrap();
            assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn alignment_never_lowers_the_objective() {
        for seed in 0..10 {
            let mut r = rng(200 + seed);
            let a = MlpParams::<f64>::random(&[3, 8, 8, 2], &mut r).unwrap();
            let b = MlpParams::<f64>::random(&[3, 8, 8, 2], &mut r).unwrap();
            let al = weight_matching_alignment_traced(&a, &b, 10).unwrap();
            assert!(al.trace.windows(2).all(|w| w[1] >= w[0]));
            let start = matching_objective(&a, &b);
            let end = matching_objective(&a, &apply_permutation(&b, &al.perms).unwrap());
            assert!(end >= start);
            assert_eq!(end, *al.trace.last().unwrap());
        }
    }

    #[test]
    fn subset_merge_cases() {
        let mut r = rng(4);
        let a = MlpParams::<f64>::random(&[2, 4, 3, 2], &mut r).unwrap();
        let b = MlpParams::<f64>::random(&[2, 4, 3, 2], &mut r).unwrap();
        let all: BTreeSet<usize> = (0..3).collect();
        let full = merge(&a.flatten(), &b.flatten(), 0.3).unwrap();
        assert_eq!(subset_merge(&a, &b, &all, 0.3).unwrap().flatten(), full);

        let first = subset_merge(&a, &b, &BTreeSet::from([0]), 1.0).unwrap();
        assert_eq!(first.layers()[0], b.layers()[0]);
        assert_eq!(&first.layers()[1..], &a.layers()[1..]);

        let step = subset_merge(&a, &b, &BTreeSet::from([0]), 0.4).unwrap();
        let step = subset_merge(&step, &b, &BTreeSet::from([1]), 0.4).unwrap();
        assert_eq!(step, subset_merge(&a, &b, &BTreeSet::from([0, 1]), 0.4).unwrap());

        assert!(subset_merge(&a, &b, &BTreeSet::from([3]), 0.5).is_err());
        assert!(subset_merge(&a, &b, &BTreeSet::new(), 0.5).is_err());
        assert!(subset_merge(&a, &b, &all, 0.0).is_err());
    }

    #[test]
    fn architecture_mismatch_is_rejected() {
        let a = MlpParams::<f64>::random(&[2, 4, 2], &mut rng(5)).unwrap();
        let b = MlpParams::<f64>::random(&[2, 5, 2], &mut rng(6)).unwrap();
        assert!(matches!(
            weight_matching_alignment(&a, &b, 3),
            Err(MarketError::Architecture(_))
        ));
    }

    #[test]
    fn works_in_single_precision() {
        let mut r = rng(7);
        let p = MlpParams::<f32>::random(&[2, 6, 6, 2], &mut r).unwrap();
        let mut planted = LayerPermutations::identity(&p);
        planted.perms.iter_mut().for_each(|v| v.shuffle(&mut r));
        let clone = apply_permutation(&p, &planted).unwrap();
        assert_eq!(align_to(&p, &clone, 10).unwrap(), p);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn permutations_preserve_the_function(seed in any::<u64>()) {
            let mut r = rng(seed);
            let widths = [3, 1 + (seed % 7) as usize, 5, 2];
            let p = MlpParams::<f64>::random(&widths, &mut r).unwrap();
            let perms = random_perms(&p, &mut r);
            let q = apply_permutation(&p, &perms).unwrap();
            prop_assert!(max_output_gap(&p, &q, &mut r) <= 1e-10);
            prop_assert_eq!(apply_permutation(&q, &perms.inverse()).unwrap(), p);
        }

        #[test]
        fn planted_permutations_are_recovered(seed in any::<u64>()) {
            let mut r = rng(seed);
            let p = MlpParams::<f64>::random(&[2, 8, 8, 8, 2], &mut r).unwrap();
            let planted = random_perms(&p, &mut r);
            let clone = apply_permutation(&p, &planted).unwrap();
            let found = weight_matching_alignment(&p, &clone, 10).unwrap();
            prop_assert_eq!(&found, &planted.inverse());
        }
    }
}
