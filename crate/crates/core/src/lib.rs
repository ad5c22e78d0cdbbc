//! Betting-tax laboratory: odds algebra under tax shrouding, closed-form
//! incidence theory, a Bertrand shrouding game, a seeded synthetic odds-panel
//! generator, and a fixed-effects difference-in-differences engine that
//! recovers the injected pass-through in a closed loop.

pub mod datagen;
pub mod econometrics;
pub mod equilibrium;
pub mod error;
pub mod odds;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
