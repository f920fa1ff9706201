//! Finite permutation models of countable groups, microstates, and exact
//! Kantorovich comparisons of their empirical distributions with
//! shift-invariant target measures.

pub mod error;
pub mod group;
pub mod microstate;
pub mod model;
pub mod oracle;
pub mod schema;
pub mod transport;

pub use error::{Error, Result};
pub use group::{Element, Group};
pub use microstate::{Bound, Closeness, Microstate};
pub use model::{FiniteModel, Permutation, SoficApproximationSeq};
pub use oracle::{Alphabet, BlockCode, CylinderOracle, ObservableTower, Pattern, Symbol, SymbolMap, WindowDistribution};
pub use transport::{kantorovich, DistanceCertificate};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
