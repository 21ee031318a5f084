//! Exact arithmetic for p-adic systems: p-fibred maps on the p-adic integers,
//! their digit expansions and block property, suitability and avoidance tests,
//! generalized Hensel lifting, closed forms for linear systems, and the
//! permutations and cycle trees those systems induce.
//!
//! Everything is exact: residues carry an explicit precision exponent, orbits
//! run on arbitrary-precision rationals, and no floating point is involved.

pub mod arith;
pub mod hensel;
pub mod linear;
pub mod perms;
pub mod seq;
pub mod suitability;
pub mod systems;
