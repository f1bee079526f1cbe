//! Library backing the `ergosde` binary: config schema, pipeline
//! orchestration, and SVG report rendering.
//!
//! The binary in `main.rs` is a thin argument-parsing shell over these
//! modules, so every operation — parsing, each pipeline stage, plotting
//! — is callable and testable without spawning a process.

pub mod config;
pub mod pipeline;
pub mod plot;

pub use config::{parse_config, ExperimentConfig};
pub use pipeline::{run_report, run_task, RunManifest, RunOptions, StageError, Task};

/// Maps an error to the process exit code: 2 for configuration and
/// argument problems, 3 for numeric failures and divergence, 1 for
/// everything environmental (I/O, serialization).
pub fn exit_code(err: &ergosde::Error) -> i32 {
    use ergosde::Error::*;
    match err {
        Configuration(_) | InvalidArgument(_) | DimensionMismatch { .. } | UnsupportedKernel(_) => {
            2
        }
        Divergence { .. } | Numeric(_) | RankDeficient { .. } | Degenerate(_)
        | InconclusiveScaling(_) => 3,
        Io(_) | Serde(_) => 1,
    }
}
