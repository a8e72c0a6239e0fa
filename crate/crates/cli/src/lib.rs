//! Command-line front end for the smoothness-regularized MIL engine:
//! strict JSON run configs plus the gen-synth / train / ablate / eval /
//! export-maps subcommands.

pub mod config;
pub mod run;
