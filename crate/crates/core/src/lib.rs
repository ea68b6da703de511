pub mod artifact;
pub mod config;
pub mod corpus;
pub mod detection;
pub mod gateway;
pub mod knowledge;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod retrieval;

// Run the guide's examples as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/corpus.md")]
    struct Corpus;
    #[doc = include_str!("../../../book/src/knowledge.md")]
    struct Knowledge;
    #[doc = include_str!("../../../book/src/retrieval.md")]
    struct Retrieval;
    #[doc = include_str!("../../../book/src/detection.md")]
    struct Detection;
    #[doc = include_str!("../../../book/src/replay.md")]
    struct Replay;
    #[doc = include_str!("../../../book/src/metrics.md")]
    struct Metrics;
    #[doc = include_str!("../../../book/src/configuration.md")]
    struct Configuration;
}
