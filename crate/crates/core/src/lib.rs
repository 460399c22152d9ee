//! Equality saturation guided by pairwise preferences.
//!
//! Terms are saturated in an e-graph, a bigram model over parent/child
//! operator pairs is refined by comparing sampled candidates, and the chosen
//! checkpoint term seeds the next phase. Every step is backed by a rewrite
//! chain that can be checked independently.

pub mod bigram;
pub mod driver;
pub mod egraph;
pub mod extract;
pub mod lang;
pub mod oracle;
pub mod rewrite;
pub mod tasks;
