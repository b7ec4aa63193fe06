//! Brute-force reference implementations used only by tests.
//!
//! Everything here works on plain vectors, favours the most literal
//! formulation over speed, and shares no code with the crates under test.

pub mod fixtures;
pub mod hdbscan;
pub mod numeric;
pub mod stats;
