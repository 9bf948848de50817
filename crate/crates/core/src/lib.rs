//! MAP inference for pairwise Markov random fields through a sparse
//! semidefinite relaxation.
//!
//! Build a [`mrf::PairwiseMrf`], relax it with [`sdr::build_sdr`], solve with
//! [`admm::SolverKind::solve`] and round with [`refine::round_solution`], or do
//! all of it at once with [`report::run`].

pub mod admm;
pub mod eigsolve;
pub mod error;
pub mod mrf;
pub mod probgen;
pub mod refine;
pub mod report;
pub mod sdr;
pub mod sparse;
pub mod theory;
pub mod uai;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
pub mod book_introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/models.md")]
pub mod book_models {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/relaxation.md")]
pub mod book_relaxation {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/solvers.md")]
pub mod book_solvers {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/rounding.md")]
pub mod book_rounding {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/guarantees.md")]
pub mod book_guarantees {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/planted.md")]
pub mod book_planted {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/files.md")]
pub mod book_files {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
pub mod book_cli {}
