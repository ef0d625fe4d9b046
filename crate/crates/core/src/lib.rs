pub mod arff;
pub mod cache;
pub mod entities;
pub mod extension;
pub mod protocol;
pub mod report;
pub mod runner;
