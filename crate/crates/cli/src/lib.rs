//! Command-line workflows for covgroup: model fitting, single-subject
//! testing, likelihood scoring and simulation studies.

pub mod commands;
pub mod io;
