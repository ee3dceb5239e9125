pub mod gf2poly;
pub mod mpolka;
pub mod netmodel;
pub mod telemetry;
pub mod simcore;
pub mod strategies;
pub mod cli;
