pub mod grammar;
pub mod grpo;
pub mod harness;
pub mod judge;
pub mod policy;
pub mod reward;
pub mod sft;
pub mod tasks;
