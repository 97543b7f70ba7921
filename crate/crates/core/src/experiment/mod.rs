//! Seeded experiment sweeps: configuration, per-cell execution with
//! content-hashed artifacts, ensemble summaries and slope fits.

mod cells;
mod config;
mod fit;
mod run;
mod store;
mod summary;

pub use cells::{
    cached_matching, cell_input_hash, enumerate_cells, matching_options, run_cell, CellKey, CellOutput, CODE_VERSION,
};
pub use config::*;
pub use fit::{fit_points, fit_prefactor, wls, FitModel, FitResult, TARGET_SLOPE};
pub use run::{
    aggregate, config_hash, run_experiment, thread_count, CellFile, CellStatus, RunOutcome, CELLS_DIR, MANIFEST_FILE,
    SUMMARY_FILE, TIMINGS_FILE,
};
pub use store::{read_json, sha256_hex, write_atomic};
pub use summary::{
    bootstrap_mean_ci, describe, find_row, quantile, read_summary_csv, summarize, write_summary_csv, SummaryRow,
};
