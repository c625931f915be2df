//! Finite-horizon Dec-POMDP planning with convex final rewards on the joint
//! state estimate, turned into individual prediction actions.

pub mod apas;
pub mod beliefs;
pub mod benchmarks;
pub mod conversion;
pub mod error;
pub mod io;
pub mod model;
pub mod planner;
pub mod rewards;
pub mod verify;

pub use error::{Error, Result};
