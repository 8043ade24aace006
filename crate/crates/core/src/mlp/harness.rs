//! Layer-subset trading and the permuted-clone demonstration.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::engine::model::MarketModel;
use crate::engine::output::fmt_f64;
use crate::error::Result;
use crate::mlp::align::{apply_permutation, weight_matching_alignment, LayerPermutations};
use crate::mlp::market::{MlpMarket, MlpMarketSpec};
use crate::mlp::moons::two_moons;
use crate::mlp::net::{accuracy, mlp_forward_loss, train, MlpParams, MlpTaskKind};
use crate::params::merge;
use crate::Params;

/// Layer sets compared by [`layer_subset_experiment`]; the last one is the
/// whole network of the default 3×16 architecture.
pub const SUBSET_LAYER_SETS: [&[usize]; 5] = [&[2, 3], &[1, 2, 3], &[0, 1, 2], &[0, 1], &[0, 1, 2, 3]];

pub const SUBSET_HEADER: &str =
    "seed,layers,aligned,merge_weight,broker_loss_before,broker_loss_after,improvement,test_accuracy";

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetRow {
    pub seed: u64,
    pub layers: BTreeSet<usize>,
    pub aligned: bool,
    pub merge_weight: f64,
    pub broker_loss_before: f64,
    pub broker_loss_after: f64,
    /// `1 - after/before` on the broker's validation loss.
    pub improvement: f64,
    pub test_accuracy: f64,
}

impl SubsetRow {
    pub fn label(&self) -> String {
        let ids: Vec<String> = self.layers.iter().map(usize::to_string).collect();
        format!("{{{}}}", ids.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetExperiment {
    pub spec: MlpMarketSpec,
    pub train_steps: usize,
    /// Buyer and seller after independent training.
    pub buyer: Params,
    pub seller: Params,
    pub rows: Vec<SubsetRow>,
}

impl SubsetExperiment {
    /// Rows for the aligned layer sets of [`SUBSET_LAYER_SETS`].
    pub fn subset_rows(&self) -> impl Iterator<Item = &SubsetRow> {
        self.rows.iter().filter(|r| r.aligned)
    }

    /// Whether merging every layer gives the largest improvement.
    pub fn full_set_is_best(&self) -> bool {
        let layers = self.spec.widths.len() - 1;
        let best = self
            .subset_rows()
            .map(|r| r.improvement)
            .fold(f64::NEG_INFINITY, f64::max);
        self.subset_rows()
            .any(|r| r.layers.len() == layers && r.improvement >= best)
    }
}

/// Trains a data-poor buyer and a data-rich seller independently, then
/// merges the aligned seller into the buyer over each layer set, plus the
/// full set without alignment.
pub fn layer_subset_experiment(spec: MlpMarketSpec, train_steps: usize) -> Result<SubsetExperiment> {
    let market = MlpMarket::build(spec.clone())?;
    let kind = MlpTaskKind::Classification;
    let trained = (0..2)
        .map(|u| {
            let start = market.net(&market.initial_params(u))?;
            let data = market.agent_data(u);
            Ok(train(&start, data, kind, spec.step_size, train_steps)?.flatten())
        })
        .collect::<Result<Vec<Params>>>()?;
    let (buyer, seller) = (trained[0].clone(), trained[1].clone());
    let aligned = market.align(&buyer, &seller)?;
    let layers = spec.widths.len() - 1;

    let mut sets: Vec<(BTreeSet<usize>, bool)> = SUBSET_LAYER_SETS
        .iter()
        .filter(|s| s.iter().all(|&l| l < layers))
        .map(|s| (s.iter().copied().collect(), true))
        .collect();
    sets.push(((0..layers).collect(), false));

    let rows = sets
        .into_iter()
        .map(|(set, is_aligned)| {
            let from = if is_aligned { &aligned } else { &seller };
            let p = market.propose_subset(&buyer, from, &set, &[])?;
            let net = market.net(&p.merged)?;
            Ok(SubsetRow {
                seed: spec.seed,
                layers: set,
                aligned: is_aligned,
                merge_weight: p.weight,
                broker_loss_before: p.broker_loss_before,
                broker_loss_after: p.broker_loss_after,
                improvement: 1.0 - p.broker_loss_after / p.broker_loss_before,
                test_accuracy: accuracy(&net, market.test_data()),
            })
        })
        .collect::<Result<_>>()?;
    Ok(SubsetExperiment {
        spec,
        train_steps,
        buyer,
        seller,
        rows,
    })
}

pub fn subset_csv(experiments: &[SubsetExperiment]) -> String {
    let mut out = format!("{SUBSET_HEADER}\n");
    for r in experiments.iter().flat_map(|e| &e.rows) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.seed,
            r.label(),
            r.aligned,
            fmt_f64(r.merge_weight),
            fmt_f64(r.broker_loss_before),
            fmt_f64(r.broker_loss_after),
            fmt_f64(r.improvement),
            fmt_f64(r.test_accuracy),
        );
    }
    out
}

pub const ALIGN_CURVE_HEADER: &str = "alpha,naive_loss,aligned_loss";

#[derive(Debug, Clone, PartialEq)]
pub struct AlignDemo {
    pub seed: u64,
    pub clones: usize,
    /// Clones whose planted permutation was recovered exactly.
    pub recovered: usize,
    /// Largest output change caused by a planted permutation.
    pub max_function_gap: f64,
    /// Largest `|loss(original) - loss(half merge with aligned clone)|`.
    pub max_clone_merge_gap: f64,
    /// Loss along `merge(a, b, alpha)` for two independently trained
    /// networks, with and without aligning `b` first.
    pub curve: Vec<(f64, f64, f64)>,
}

impl AlignDemo {
    pub fn all_recovered(&self) -> bool {
        self.recovered == self.clones
    }

    pub fn curve_csv(&self) -> String {
        let mut out = format!("{ALIGN_CURVE_HEADER}\n");
        for &(a, naive, aligned) in &self.curve {
            let _ = writeln!(out, "{},{},{}", fmt_f64(a), fmt_f64(naive), fmt_f64(aligned));
        }
        out
    }
}

/// Plants random hidden-unit permutations in `clones` random networks and
/// checks that weight matching undoes them, then traces the interpolation
/// loss between two independently trained networks.
pub fn align_demo(seed: u64, clones: usize, widths: &[usize]) -> Result<AlignDemo> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = two_moons::<f64, _>(300, 0.2, &mut rng)?;
    let kind = MlpTaskKind::Classification;
    let mut demo = AlignDemo {
        seed,
        clones,
        recovered: 0,
        max_function_gap: 0.0,
        max_clone_merge_gap: 0.0,
        curve: Vec::new(),
    };
    for _ in 0..clones {
        let net = MlpParams::<f64>::random(widths, &mut rng)?;
        let mut planted = LayerPermutations::identity(&net);
        planted.perms.iter_mut().for_each(|p| p.shuffle(&mut rng));
        let clone = apply_permutation(&net, &planted)?;
        for _ in 0..100 {
            let x: Vec<f64> = (0..widths[0]).map(|_| 3.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
            let gap = net
                .forward(&x)
                .iter()
                .zip(clone.forward(&x))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            demo.max_function_gap = demo.max_function_gap.max(gap);
        }
        let found = weight_matching_alignment(&net, &clone, 10)?;
        if found == planted.inverse() {
            demo.recovered += 1;
        }
        let aligned = apply_permutation(&clone, &found)?;
        let half = MlpParams::unflatten(widths, &merge(&net.flatten(), &aligned.flatten(), 0.5)?)?;
        let gap = (mlp_forward_loss(&net, &data, kind)? - mlp_forward_loss(&half, &data, kind)?).abs();
        demo.max_clone_merge_gap = demo.max_clone_merge_gap.max(gap);
    }

    let a = train(&MlpParams::random(widths, &mut rng)?, &data, kind, 0.1, 300)?;
    let b = train(&MlpParams::random(widths, &mut rng)?, &data, kind, 0.1, 300)?;
    let b_aligned = apply_permutation(&b, &weight_matching_alignment(&a, &b, 10)?)?;
    let (fa, fb, fba) = (a.flatten(), b.flatten(), b_aligned.flatten());
    let loss_at = |other: &Params, alpha: f64| -> Result<f64> {
        let p = if alpha == 0.0 { fa.clone() } else { merge(&fa, other, alpha)? };
        mlp_forward_loss(&MlpParams::unflatten(widths, &p)?, &data, kind)
    };
    for k in 0..=10 {
        let alpha = k as f64 / 10.0;
        demo.curve.push((alpha, loss_at(&fb, alpha)?, loss_at(&fba, alpha)?));
    }
    Ok(demo)
}
