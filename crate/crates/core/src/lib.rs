pub mod categorical;
pub mod checkpoint;
pub mod ddpm;
pub mod gaussian;
pub mod grid;
pub mod metrics;
pub mod neon;
pub mod param;
pub mod rng;
pub mod table;
