#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod consensus;
pub mod envs;
pub mod error;
pub mod estimation;
pub mod numerics;
pub mod optim;
pub mod policy;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
