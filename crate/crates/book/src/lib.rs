//! The guide's chapters as doc modules, so `cargo test` runs every snippet.
//! Keep this list in step with `book/src/SUMMARY.md`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/operators.md")]
pub mod operators {}
#[doc = include_str!("../../../book/src/filtering.md")]
pub mod filtering {}
#[doc = include_str!("../../../book/src/smoothing.md")]
pub mod smoothing {}
#[doc = include_str!("../../../book/src/oracle.md")]
pub mod oracle {}
#[doc = include_str!("../../../book/src/convergence.md")]
pub mod convergence {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
