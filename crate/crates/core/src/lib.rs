//! Training-free embedding enhancement for causal language models.
//!
//! The input sequence is repeated `k` times and run through the model once.
//! Every per-layer, per-head attention matrix is symmetrized and max-fused
//! ([`fusion`]); each original token's embedding then becomes a weighted sum
//! of its own and all later token states, weighted by the fused attention
//! ([`embed`]). Echo and Classical baselines are provided alongside, together
//! with a bundle container ([`tensor_io`]), a deterministic toy transformer
//! ([`toy`]) and an evaluation harness ([`eval`]).

pub mod cli;
pub mod embed;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod tensor_io;
pub mod toy;
pub mod vector_file;

pub use embed::{
    classical_embedding, echo_embedding, embed, embed_with_fused, reba_sentence_embedding, reba_word_embedding,
    repeat_tokens, EchoMeanMode, EmbedOptions, EmbedRequest, EmbeddingVector, Method, Pool, PoolingCost, Weighting,
};
pub use error::{RebaError, Result};
pub use eval::{
    accuracy, cosine_similarity, euclidean, four_choice_answer, pearson, recall_at_k, run_four_choice_eval, Distance,
    EvalConfig, EvalQuestion, EvalReport,
};
pub use fusion::{column_weight_sums, fuse, symmetrize, FusedAttention, FusionStrategy};
pub use tensor_io::{
    read_bundle, read_bundle_file, validate_bundle, write_bundle, write_bundle_file, AttentionStack, BundleHeader,
    HiddenStates, TensorBundle, Violation,
};
pub use toy::{init_model, ToyModel, ToyModelSpec};
