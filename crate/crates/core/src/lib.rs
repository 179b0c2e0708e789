//! Privacy-aware home energy management by model-distribution predictive
//! control: a receding-horizon controller that trades energy cost against an
//! estimate of the mutual information between consumer load and the load
//! seen by the grid.

pub mod model;
pub mod stats;
pub mod formulation;
pub mod problem;
pub mod solver;
pub mod io;
pub mod sim;
pub mod verify;
