//! Small ReLU networks, permutation alignment and layer-subset trading.

pub mod align;
pub mod assignment;
pub mod harness;
pub mod market;
pub mod moons;
pub mod net;

pub use align::{
    apply_permutation, subset_merge, weight_matching_alignment, weight_matching_alignment_traced,
    LayerPermutations,
};
pub use assignment::linear_assignment;
pub use market::{MlpMarket, MlpMarketSpec};
pub use net::{mlp_forward_loss, MlpParams, MlpTaskKind};
