pub mod case_io;
pub mod network;
pub mod conic;
pub mod chordal;
pub mod relaxations;
pub mod recovery;
pub mod acopf;
pub mod pipeline;
