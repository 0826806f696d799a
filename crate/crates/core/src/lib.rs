//! Text mining for opioid-use community corpora: ingestion, normalization,
//! word co-occurrence and phi correlation, lexicon emotion scoring, LDA topics,
//! a two-stage author classifier, and relapse cohort statistics.

pub mod classify;
pub mod cli;
pub mod cooccur;
pub mod corpus;
pub mod emotion;
pub mod preprocess;
pub mod relapse;
pub mod synth;
pub mod topics;
pub mod vocab;
