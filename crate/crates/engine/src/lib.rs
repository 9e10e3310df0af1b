//! Outer shell for the lifecycle engine: journal files, scenarios, the HTTP
//! gateway and the `engine` command line.

pub mod gateway;
pub mod io;
pub mod scenario;
