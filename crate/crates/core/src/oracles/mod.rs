//! Reference implementations that tests compare the production code
//! against. Written from the definitions alone and sharing no code with the
//! modules they check.

pub mod formulas;
pub mod token_game;
pub mod fuzz;
