mod icr;
mod misconfidence;

pub use icr::{
    cap_pool, full_misconfidence_select, icr_init, icr_refine, icr_select, IcrConfig, IcrOutcome, InitMode,
    IterationTrace, ScoreSummary, ScoringContext,
};
pub use misconfidence::{misconfidence, rank_candidates, score_pool, MisconfidenceScore, RankedCandidate, ScoredPool};
