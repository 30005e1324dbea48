pub mod boolmat;
pub mod error;
pub mod sysmodel;
pub mod commgraph;
pub mod qispace;
pub mod firmath;
pub mod solvers;
pub mod codesign;
pub mod report;
