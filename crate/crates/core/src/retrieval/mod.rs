//! Offline retrieval: embedding export, approximate nearest neighbors, and
//! user-based collaborative filtering.
//!
//! [`stages`] turns a trained model into per-user embedding files in three
//! independently runnable steps; [`store`] defines the file formats;
//! [`simhash`] indexes the vectors for sublinear similarity search; and
//! [`cf`] produces "similar users" and "recommended items" answers from the
//! index plus the event log.

pub mod cf;
pub mod simhash;
pub mod stages;
pub mod store;

pub use cf::{replay_hit_rate, top_similar_users, user_cf_recommend};
pub use simhash::{hamming, SimHashIndex};
pub use stages::{
    direct_embeddings, run_pipeline, stage_personal, stage_social, stage_subgraphs,
    SubgraphCache,
};
pub use store::{EmbeddingStore, StoreManifest};
