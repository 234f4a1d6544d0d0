//! Holistic sequential recommendation over user-item-attribute graphs.
//!
//! The model scores a user's next items by combining three parts:
//!
//! * enclosing-subgraph extraction around the user and her session items on a
//!   time-windowed tripartite interaction graph ([`graph`], [`subgraph`]),
//! * relational attentive message passing over the subgraph ([`ragnn`])
//!   followed by causal self-attention over session item embeddings ([`ssa`]),
//! * fusion of long- and short-term embeddings into a ranking score trained
//!   with a pairwise BPR objective ([`recommender`]).
//!
//! Because all learnable weights attach to edge relations rather than to
//! nodes, a trained parameter set scores unseen users without retraining and
//! transfers zero-shot across catalogs. [`harness`] drives training and the
//! conventional / inductive / transferable evaluation protocols; [`ingest`]
//! loads and prepares the datasets.

pub mod graph;
pub mod harness;
pub mod ingest;
pub mod numkernel;
pub mod par;
pub mod ragnn;
pub mod recommender;
pub mod ssa;
pub mod subgraph;
