//! Geometry-conditioned multi-view PBR generator: per-view fusion and
//! cross-view transformer stacks, an illumination-context branch trained
//! first, and albedo / metallic-roughness branches that attend to its frozen
//! shaded features. Trained with flow matching on patch latents.

pub mod config;
pub mod error;
pub mod flow;
pub mod net;
pub mod tokens;
pub mod train;

pub use config::{NetConfig, TrainConfig};
pub use error::{MvpbrError, Result};
pub use flow::{euler, flow_match_loss, velocity_from_x1, ContextValues, FlowDraw, Generated, T_EPS};
pub use net::{
    illum_attention, material_cross_attention, mm_forward, mv_forward, phi_index, shaded_kv, spatial_rope, Branch, BranchKind,
    BranchOut, Condition, CrossLayer, IllumAttention, Model, ShadedContext, SHADED_PREFIX,
};
pub use tokens::{
    encode_geo_tokens, encode_img_tokens, geo_patches, grid_info, image_patches, images_to_latent, latent_to_images, patchify,
    unpatchify, GeoEncoder, ImageEncoder, Tag, TokenInfo, TokenSet,
};
pub use train::{model_from_checkpoint, probe_loss, read_log_csv, train_two_stage, write_log_csv, LogRow, Sample, TrainOutput, Trainer};
