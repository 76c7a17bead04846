//! Experiment orchestration behind the `evidseg` command line.

mod commands;
mod config;
mod selfcheck;

pub use commands::{
    cmd_eval, cmd_generate, cmd_sweep, cmd_train, degrade, evaluate_checkpoint, load_split, noise_seed,
    read_manifest, thread_limit, whole_tumor_dice, EpochLog, EvalOutcome, Layout, ManifestEntry, Sample, Split,
    SweepResult, TrainOutcome, SWEEP_PLOTS, THREADS_ENV,
};
pub use config::ExperimentConfig;
pub use selfcheck::{run_selfcheck, CheckOutcome, SelfCheckHooks, SelfCheckReport};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Domain(_) | Error::Format(_) | Error::NotFound(_) | Error::Io { .. } => EXIT_DATA,
        Error::CheckFailed(_) => EXIT_CHECK,
    }
}
