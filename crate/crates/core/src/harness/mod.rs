//! Monte Carlo experiments: simulate scans of known classes, classify them,
//! and tabulate the outcomes.

mod confusion;
mod custom;
mod presets;
mod report;
mod screening;
mod studies;

pub use confusion::{
    flag_disagreements, run_confusion, run_confusion_multi, samplers_for, tally, truth_stream,
    ConfusionMatrix, Evaluator, ExperimentConfig, Truth,
};
pub use custom::{
    parse_custom_config, run_custom, ClassSpec, ComponentSpec, CustomConfig, PriorSetting,
    ScreeningMode,
};
pub use presets::{
    build_mixture_catalog_29, catalog_from_truths, model_for, mixture_catalog_29, table3_config,
    table3_truths, DEFAULT_SEED, FIRST_WINDOW_TARGET, HEU_QUANTITIES, REFERENCE_BENCHMARKS,
    WGPU_QUANTITIES,
};
pub use report::{
    config_hash, emit_report, parse_report, Check, ClassInfo, Fingerprint, Report, ReportFormat,
};
pub use screening::{
    run_screening_study, CatalogOutcome, RandomCatalogSpec, ScreeningSummary, Summary,
    MAD_SCALE, MIN_PAIR_DIVERGENCE,
};
pub use studies::{
    dataset_fingerprints, screening100, screening_parity, table3, table4, DEFAULT_REPLICATES,
    DEFAULT_SCREENING_REPLICATES, DEFAULT_SETS,
};

use crate::error::{Error, Result};

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool
/// when `threads` is `None`. Results never depend on the worker count.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::domain("thread count must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::domain(format!("cannot start {n} worker threads: {e}"))),
    }
}
