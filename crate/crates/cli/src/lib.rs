//! Library surface of the `dest` command-line tool: run configuration and
//! the train / eval / count / bench commands.

pub mod commands;
pub mod config;

pub use commands::{cmd_bench, cmd_count, cmd_eval, cmd_eval_oracle, cmd_train, eval_depthnet};
pub use config::RunConfig;

/// Process exit code for an error: 3 for numerical failures, 2 for
/// usage/config/data problems.
pub fn exit_code_for(e: &dest_core::Error) -> u8 {
    match e {
        dest_core::Error::NonFinite(_) => 3,
        _ => 2,
    }
}
