//! Sampling, neighborhood search and the set-abstraction backbone.

mod backbone;
mod search;

pub use backbone::{
    coords_tensor, encode_backbone, fit_input_stats, Backbone, BackboneConfig, CloudVar, FeatCloud,
    MIN_FRAME_POINTS, STATS_RCS, STATS_RRV,
};
pub use search::{
    ball_query, ball_query_batch, fps, fps_from, knn, knn_one, lexicographic_seed, BallQuery,
};
