//! Compiles and runs the code samples in the guide under `book/` as
//! doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/tasks.md")]
pub mod tasks {}

#[doc = include_str!("../../../book/src/output-format.md")]
pub mod output_format {}

#[doc = include_str!("../../../book/src/rewards.md")]
pub mod rewards {}

#[doc = include_str!("../../../book/src/policy.md")]
pub mod policy {}

#[doc = include_str!("../../../book/src/sft.md")]
pub mod sft {}

#[doc = include_str!("../../../book/src/grpo.md")]
pub mod grpo {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
