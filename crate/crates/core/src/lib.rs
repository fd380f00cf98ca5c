//! Solver library for generalized transport problems (optimal transport,
//! Birkhoff projection, partial optimal transport).
//!
//! The pipeline: an inexact primal-dual outer loop drives a semismooth
//! Newton inner solver; each Newton system is reduced exactly to independent
//! nearly-singular bipartite graph Laplacian systems, which a kernel-aware
//! algebraic multigrid W-cycle (or a direct factorization, for small
//! components) solves.

pub mod amg;
pub mod ipd;
pub mod problem;
pub mod reduction;
pub mod sparsela;
pub mod ssn;

pub use problem::{
    build_birkhoff_projection, build_optimal_transport, build_partial_transport,
    GeneralizedTransportProblem,
};
