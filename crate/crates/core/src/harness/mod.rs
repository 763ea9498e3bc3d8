//! Experiment configs, multi-trial runs, sweeps, selection and CSV/table
//! output.
//!
//! Parallel work runs on the ambient rayon pool; wrap calls in
//! [`with_workers`] to bound it. Results are always collected in canonical
//! order, so emitted bytes do not depend on scheduling.

mod config;
mod run;
mod select;
mod sweep;
mod table;

pub use config::{
    Architecture, DataSource, DatasetSpec, ExperimentConfig, Method, Preset, RegularizerChoice, Splits, DESK_EPOCHS,
    LOSS_WEIGHT_GRID,
};
pub use run::{
    characteristics_csv, history_csv, run, run_on, summary_table, trial_seed, trials_csv, write_run, LayerMeans,
    LayerResult, MeanStd, RunOutput, RunReport, TrialResult, MI_COLUMNS,
};
pub use select::{best_of_set, best_per_method, Selection};
pub use sweep::{sweep, sweep_csv, sweep_table, SweepAxis, SweepPoint, SweepRow, SweepSpec, SWEEP_COLUMNS};
pub use table::{csv_to_table, fmt_num, render_table};

use crate::error::{Error, Result};

/// Runs `f` on a dedicated pool of `workers` threads (0 = rayon default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}
