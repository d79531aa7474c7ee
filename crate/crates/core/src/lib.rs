pub mod linalg;
pub mod lp;
pub mod model;
pub mod zonotope;
pub mod analysis;
pub mod rpi;
pub mod estimator;
pub mod network;
pub mod pnp;
pub mod synthesis;
pub mod bench;
pub mod plant_file;
pub mod cli;
