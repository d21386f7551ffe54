//! Provisioning of collision-free virtual identities on the embedding
//! hypersphere, with the geometry, PCA, statistics and metrics around it.

pub mod allocator;
pub mod capacity;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod pca;
pub mod rng;
pub mod special;
pub mod store;
pub mod synth;

pub use allocator::{
    hard_check, make_candidate, monitoring_zone_check, neighbor_weights, perturb_direction, provision,
    provision_with, repulsion_direction, revocation_check, AllocConfig, AlphaSpec, CheckOutcome, Flag,
    PartialProvision, ProvisionOptions, ProvisionStats, RejectCause,
};
pub use capacity::{
    acceptance_probability_model, count_collisions, exact_poisson_ci, expected_collisions, open_world_stress,
    poisson_mle, poisson_pmf, zero_collision_bound, CollisionStats, OpenWorldCurve,
};
pub use error::{Error, Result};
pub use geometry::{
    alpha_star, alpha_star_derivative_wrt_tau, cap_volume, capacity_table, displaced_cosine, gaussian_cap_approx,
    gv_bound, safety_buffer_analysis, BufferReport, CapVolume, CapacityReport,
};
pub use metrics::{
    bip_metrics, calibrate_threshold, evaluate_pairs, inter_sep_rate, non_collision_rate, BipMetrics, Pair,
    PairList, Protocol, ProtocolReport, ThresholdMode,
};
pub use pca::{fit_pca, fit_pca_with, EffectiveRankKind, PcaModel, PcaOptions, Spectrum};
pub use store::{
    compute_centroid, load_embeddings, max_cosine_against, save_embeddings, EmbeddingMatrix, Gallery,
    GalleryManifest, LoadOptions, VirtualRecord, VirtualSet,
};
pub use synth::{
    bisection_alpha_star, mc_cap_volume, plant_collisions, sample_uniform_sphere, sample_vmf_mixture, Planted,
    SynthGalleryConfig,
};
