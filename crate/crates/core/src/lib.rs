//! Two-view contrastive retrieval.
//!
//! Queries (e.g. street-level views) and references (e.g. aerial tiles) are
//! embedded by a shared or per-view encoder and trained with a symmetric
//! InfoNCE objective. Training batches are filled with hard negatives,
//! first from geographic neighbours, then from visual nearest neighbours
//! in the current embedding space.
//!
//! | module | contents |
//! |---|---|
//! | [`datasets`] | manifests, EMB1 embedding files, synthetic two-view data |
//! | [`geo`] | haversine / planar distance, geographic top-K |
//! | [`simsearch`] | normalisation, cosine similarity, visual top-K |
//! | [`losses`] | symmetric InfoNCE, triplet baselines |
//! | [`sampler`] | epoch batch planning |
//! | [`trainer`] | MLP encoder, AdamW, training loop, gradient check |
//! | [`eval`] | Recall@k, Recall@1%, hit rate, AP |
//! | [`config`] | flat `key=value` configuration |
//! | [`ablate`] | sampling-strategy ablation |

pub mod ablate;
pub mod config;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod geo;
pub mod losses;
pub mod sampler;
pub mod simsearch;
pub mod trainer;

pub use error::{Error, Result};
