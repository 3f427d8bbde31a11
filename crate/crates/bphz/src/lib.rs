//! Decorated rooted trees, rule grammars and the negative renormalisation
//! group for a class of singular SPDEs with quenched (solution-shifted)
//! noise, together with numeric evaluation of the renormalisation constants
//! and desk-scale finite-difference simulations of the renormalised
//! equations.
//!
//! The crate is organized along the pipeline
//!
//! ```text
//! rules ──▶ trees ──▶ hopf ──▶ coherence ──▶ constants ──▶ spde
//! ```
//!
//! * [`trees`] — decorated rooted trees with exact degree arithmetic,
//!   canonical forms, symmetry factors and the flattening operator.
//! * [`rules`] — rule grammars (which node types may follow which edge),
//!   structural checks and exhaustive enumeration below a degree bound.
//! * [`hopf`] — extraction–contraction coproduct, negative twisted antipode,
//!   characters and renormalisation maps.
//! * [`poly`] — the symbolic nonlinearity algebra with formal function
//!   symbols and exact rational coefficients.
//! * [`coherence`] — elementary-differential recursion, Faà di Bruno,
//!   coherence checking and counterterm assembly.
//! * [`constants`] — vanishing classification, Wick expansion into kernel
//!   integrals, quadrature / Monte-Carlo evaluation, the drift constant and
//!   scaling-rate fits.
//! * [`spde`] — semi-implicit solvers for the renormalised quenched
//!   equations driven by mollified periodic noise.

pub mod coherence;
pub mod constants;
pub mod degree;
pub mod hopf;
pub mod poly;
pub mod rules;
pub mod scaling;
pub mod spde;
pub mod trees;
