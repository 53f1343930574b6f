//! Second-order supersymmetric (Darboux) partner potentials for radial
//! Schrödinger operators, with closed forms for the Coulomb problem.

pub mod numerics;
pub mod specfun;
pub mod susy;
pub mod coulomb;
pub mod cli;
