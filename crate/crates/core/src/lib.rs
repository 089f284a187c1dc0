pub mod calib;
pub mod cli;
pub mod data;
pub mod numlin;
pub mod outcome;
mod wire_real;
pub mod dac;
pub mod fedproto;
pub mod simlab;
pub mod brdac;
