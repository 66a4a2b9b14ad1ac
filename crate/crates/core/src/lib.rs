//! Retrieval-augmented question answering and reasoning probes for
//! telecom language models.
//!
//! The crate covers the whole evaluation loop: a document corpus is chunked
//! ([`corpus`]), embedded ([`embed`]) and indexed ([`vstore`]); multiple-choice
//! questions are answered with or without retrieved context ([`rag`],
//! [`modelclient`]) and scored per category ([`evalharness`]). Two use cases
//! sit on top: base-station energy model fitting ([`energymodel`]) and a user
//! association reasoning probe ([`userassoc`]).

pub mod corpus;
pub mod embed;
pub mod energymodel;
pub mod evalharness;
pub mod modelclient;
pub mod pipeline;
pub mod rag;
pub mod userassoc;
pub mod vstore;

// The guide's snippets run as doc-tests, one module per chapter.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/embeddings.md")]
    mod embeddings {}
    #[doc = include_str!("../../../book/src/rag.md")]
    mod rag {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/model-clients.md")]
    mod model_clients {}
    #[doc = include_str!("../../../book/src/energy.md")]
    mod energy {}
    #[doc = include_str!("../../../book/src/user-association.md")]
    mod user_association {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
