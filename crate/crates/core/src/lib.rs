//! Open-loop Nash equilibria of multi-issue opinion games on networks.

pub mod closedform;
pub mod error;
pub mod fixtures;
pub mod game;
pub mod matfun;
pub mod multistage;
pub mod oracle;
pub mod weights;

pub use error::{Error, Result};
pub use game::{assemble, GameSpec, NashSolution, QAssembly};
pub use matfun::SquareMatrix;
