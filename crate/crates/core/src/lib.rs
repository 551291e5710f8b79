//! Critical quantum metrology of a single driven bosonic mode: squeezing
//! dynamics under bounded controls, Fisher information, optimal on-off
//! protocols and their scaling bounds.

pub mod bounds;
mod driver;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod fock;
pub mod ode;
pub mod onoff;
pub mod open_system;
pub mod qfi;
pub mod roots;
pub mod schedules;

pub use dynamics::{integrate, IntegratorConfig, PhaseState, SystemParams, Trajectory};
pub use error::{Error, Result};
pub use onoff::OnOffSolution;
pub use schedules::Schedule;
