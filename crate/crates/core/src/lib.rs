//! Desk-scale RLHF stabilization lab.
//!
//! A synthetic preference world with a planted ground-truth utility, a
//! reward model and an advantage model sharing one small feed-forward
//! scorer, a softmax policy trained by SFT, rejection sampling and
//! clipped PPO (optionally with selective rehearsal), and the metrics used
//! to compare them.
//!
//! The crate is `no_std` and only needs `alloc`; all file formats, the
//! command line and the canned experiments live in the `rlstab` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod env;
pub mod error;
pub mod eval;
pub mod numkernel;
pub mod policy;
pub mod rehearsal;
pub mod scoremodel;

pub use error::{Error, Result};
