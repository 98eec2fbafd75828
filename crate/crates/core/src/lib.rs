#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

//! Normalization kernels for transformer token vectors and the tools to
//! measure what they do to attention.
//!
//! - [`tensor`]: token batches, axis statistics, seeded sampling, softmax
//! - [`norm`]: BatchNorm, LayerNorm (theory and practice), RMSNorm, UnitNorm
//! - [`attention`]: self-attention scores and attention-shift metrics
//! - [`signflip`]: dot-product sign flips under standardization
//! - [`elb`]: entropy lower bound of UnitNorm attention and the `k50` solver
//! - [`gradcheck`]: UnitNorm Jacobian and gradient scaling identities
//! - [`embedding`]: embedding-file ingestion
//! - [`study`]: multi-set attention-shift studies

pub mod attention;
pub mod elb;
pub mod embedding;
pub mod error;
pub mod gradcheck;
pub mod norm;
pub mod signflip;
pub mod study;
pub mod summary;
pub mod tensor;

pub use attention::{attention_scores, shift_report, AttentionScores, MetricReport, MetricRow};
pub use error::{Error, Result};
pub use norm::{normalize, token_l2_norms, Affine, NormConfig, NormMethod, ZeroNormPolicy};
pub use signflip::{GaussianTokenModel, SignFlipEstimate, Standardization};
pub use study::{run_shift_study, StudyConfig, StudySource, StudySummary};
pub use embedding::{ingest, EmbeddingFile, EmbeddingFormat};
pub use tensor::{axis_stats, gaussian_batch, softmax_row, Axis, RngSeed, TokenBatch};
