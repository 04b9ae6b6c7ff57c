//! The narrative guide, embedded chapter by chapter.
//!
//! The `book/` directory at the repository root is an mdbook; each module
//! below carries one chapter as its documentation, so every fenced Rust
//! block in the book runs under `cargo test --doc` and stays in sync with
//! the library.

#[doc = include_str!("../../../book/src/index.md")]
pub mod overview {}

#[doc = include_str!("../../../book/src/channel-model.md")]
pub mod channel_model {}

#[doc = include_str!("../../../book/src/power-allocation.md")]
pub mod power_allocation {}

#[doc = include_str!("../../../book/src/dual-solver.md")]
pub mod dual_loop {}

#[doc = include_str!("../../../book/src/two-rrh-analytics.md")]
pub mod two_rrh_analytics {}

#[doc = include_str!("../../../book/src/extreme-cases.md")]
pub mod extreme_cases {}

#[doc = include_str!("../../../book/src/multiuser.md")]
pub mod multiuser {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod command_line {}
