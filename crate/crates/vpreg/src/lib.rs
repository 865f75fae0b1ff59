//! File formats, reports and the command-line front end of the VPreg
//! registration toolkit. The numerical work lives in `vpreg-core`.

pub mod cli;
pub mod demo;
pub mod io;
