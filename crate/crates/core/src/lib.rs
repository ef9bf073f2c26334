//! Workbench for étale bundles of finite first-order structures.
//!
//! The crate models finite topological spaces, multi-sorted first-order
//! syntax, finite structures, étale structures over finite bases, their
//! isomorphism groupoids, imaginary sorts, axiom emission and verification,
//! parametrized instance generators, and reconstruction of abstract open
//! groupoids from their canonical coset structures.

pub mod axiom;
pub mod etale;
pub mod finspace;
pub mod finstruct;
pub mod imaginary;
pub mod isogpd;
pub mod logic;
pub mod paramgen;
pub mod reconstruct;
pub mod selftest;

use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum Error {
    #[error("space: {0}")]
    Space(String),
    #[error("syntax error at {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("sort error: {0}")]
    Sort(String),
    #[error("signature: {0}")]
    Signature(String),
    #[error("structure: {0}")]
    Structure(String),
    #[error("etale structure: {0}")]
    Etale(String),
    #[error("groupoid: {0}")]
    Groupoid(String),
    #[error("imaginary: {0}")]
    Imaginary(String),
    #[error("fragment: {0}")]
    Fragment(String),
    #[error("budget exhausted: {0}")]
    Budget(String),
    #[error("missing witness: {0}")]
    MissingWitness(String),
    #[error("io: {0}")]
    Io(String),
    #[error("json: {0}")]
    Json(String),
}

pub type Result<T> = std::result::Result<T, Error>;
