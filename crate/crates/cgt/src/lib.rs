//! File formats, wall-clock replay, and the command implementations behind
//! the `cgt` binary.

pub mod corpus;
pub mod formats;
pub mod meta;
pub mod run;
pub mod timing;
