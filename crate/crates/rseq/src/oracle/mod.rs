//! Independent reference implementations for testing the solver.
//!
//! Everything in this module is deliberately brute force and single threaded:
//! explicit route enumeration, an exhaustive basis scan for the matching
//! program, a fixed-point reference solver by successive averaging, and a
//! residual checker that evaluates every equilibrium condition from an
//! exported [`Solution`](crate::hypernet::Solution). None of the bush or
//! assignment machinery is reused here; only the data model is shared.

mod lp;
mod paths;
mod reference;
mod seqenum;
mod util;
mod verify;

pub use lp::{solve_packing_lp, LpResult};
pub use paths::{enumerate_paths, path_cost};
pub use reference::{brute_force_equilibrium, MsaOptions, ReferenceOutcome};
pub use seqenum::{canonicalize_pool, enumerate_pool, CanonicalSeq};
pub use verify::{verify_solution, FamilyResult, VerifyReport};

use thiserror::Error;

use crate::matchgen::OdPair;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("route enumeration for {od} exceeded {limit} simple paths (at least {found} exist)")]
    PathExplosion { od: OdPair, limit: usize, found: usize },
    #[error("no route from {0} to {1}")]
    NoRoute(crate::netio::NodeId, crate::netio::NodeId),
    #[error("instance outside the reference solver domain: {0}")]
    DomainExceeded(String),
    #[error("matching program too large for basis enumeration: {bases} bases")]
    LpTooLarge { bases: u128 },
    #[error("matching program is infeasible")]
    LpInfeasible,
}
