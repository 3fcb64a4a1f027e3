pub mod check;
pub mod forward;
pub mod params;
pub mod question_type;

pub use check::{
    gradcheck_seeds, TinyInstance, GRADCHECK_EPS, GRADCHECK_TOLERANCE, TINY_EMBED, TINY_HIDDEN,
    TINY_VOCAB,
};
pub use forward::{
    attention_match, candidate_loss, co_match, document_aggregate, encode_sequence,
    flat_aggregate_forward, forward, match_branch, predict, score_candidates, sentence_aggregate,
    single_match_forward, CandidateAttention, CoMatchResult, Embedder, Forward,
};
pub use params::{
    init_params, parameter_names, BiLstmParams, BoundParams, Dims, LstmParams, ModelParams,
    Variant, PARAM_TENSORS,
};
pub use question_type::{bucket_by_question_type, QuestionType};
