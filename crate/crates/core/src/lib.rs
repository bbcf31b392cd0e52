//! Dual-branch attention: a block-local branch computed with a tiled online
//! softmax, and a global linear branch that streams a `D x D` content matrix.
//! Both are checked against brute-force oracles, can be run in single
//! precision or simulated fixed point, and come with a cost model and a
//! latency sweep harness.
//!
//! Start with [`layer::uniformer_attention`]; the branch kernels live in
//! [`local`] and [`global`], their oracles in [`reference`].

pub mod bench;
pub mod error;
pub mod fixture;
pub mod global;
pub mod layer;
pub mod local;
pub mod quantsim;
pub mod real;
pub mod reference;
pub mod tensor;
pub mod verify;

pub use error::{Branch, Error, Result};
pub use layer::{uniformer_attention, AttentionConfig, HeadTensor, Mode, Precision};
pub use quantsim::FixedPointFormat;
pub use tensor::{Matrix, Tensor3};
