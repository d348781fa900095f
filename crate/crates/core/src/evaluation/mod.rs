//! Scoring, similarity analysis, restrictions, and paired statistics.

pub mod restrict;
pub mod retrieval;
pub mod rsa;
pub mod stats;

pub use restrict::{apply_band, apply_region, apply_window, Band, BandSpec, RegionChoice, WindowMode, WindowSpec};
pub use retrieval::{cosine_matrix, rank_candidates, text_retrieval, zero_shot_retrieval, RetrievalResult};
pub use rsa::{concept_means, rsa_matrix, CategoryContrast, RsaReport};
pub use stats::{holm_adjust, rank_biserial, signed_rank, wilcoxon, wilcoxon_holm, Comparison, StatReport};
