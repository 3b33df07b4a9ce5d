pub mod fdtd;
pub mod geometry;
pub mod farfield;
pub mod collection;
pub mod nvmodel;
pub mod fitkit;
pub mod spectra;
pub mod rng;
pub mod tcspc;
pub mod scansim;
