pub mod autodiff;
pub mod bspline;
pub mod data;
pub mod fft;
pub mod gml;
pub mod kan;
pub mod model;
pub mod nn;
pub mod seed;
pub mod skds;
pub mod spectral;
pub mod tensor;
pub mod train;
pub mod metrics;
pub mod verify;
pub mod config;
pub mod plot;
pub mod cli;
