//! Constructions and checks for 3-query locally correctable codes.
//!
//! The crate builds Reed–Muller design LCCs, chain derivations over their
//! decoding matchings, Kikuchi graphs and matrices, chain XOR instances
//! compiled from adaptive decoders, and spectral refutation certificates.
//! Everything that is an identity is checked in exact arithmetic.

pub mod certify;
pub mod chain_xor;
pub mod chains;
pub mod config;
pub mod decoder;
pub mod design;
pub mod design_kikuchi;
pub mod error;
pub mod gf2;
pub mod gf4;
pub mod kikuchi;
pub mod par;
pub mod pipeline;
pub mod rational;
pub mod spectral;
pub mod subsets;

pub use error::{Error, Result};
