//! Multi-rank HPC Challenge style benchmarks over pluggable message-passing
//! transports.
//!
//! The suite reimplements the communication-centric HPC Challenge kernels --
//! effective bandwidth (b_eff), distributed matrix transpose (PTRANS),
//! blocked LU decomposition (HPL), RandomAccess and embarrassingly parallel
//! STREAM/GEMM -- against a small [`transport::Communicator`] abstraction
//! with three interchangeable backends: in-process threads, a deterministic
//! discrete-event virtual-time engine and multi-process TCP sockets. The
//! virtual-time backend reproduces the analytical channel and staged-path
//! models in [`netmodel`], so model agreement can be asserted exactly.
//!
//! See the guide under `book/` for a walk-through of the concepts; its code
//! snippets compile and run as doctests of this crate.

pub mod error;

pub mod bench;
pub mod blockmat;
pub mod harness;
pub mod netmodel;
pub mod transport;

pub use error::{MeshError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/transports.md")]
    mod transports {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/beff.md")]
    mod beff {}
    #[doc = include_str!("../../../book/src/ptrans.md")]
    mod ptrans {}
    #[doc = include_str!("../../../book/src/hpl.md")]
    mod hpl {}
    #[doc = include_str!("../../../book/src/randomaccess.md")]
    mod randomaccess {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
