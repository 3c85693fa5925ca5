//! Synthetic time-series classification tasks, CSV ingestion and plotting.
//!
//! Three reasoning regimes are covered. In the *simple deterministic* regime a
//! single salient feature decides the label. In the *complex deterministic*
//! regime two features must hold together. In the *probabilistic* regime the
//! label is a latent state whose emissions overlap across classes.

mod csv_io;
mod defaults;
mod generate;
pub mod plot;
mod series;
mod spec;
mod stats;

pub use csv_io::{load_csv, write_csv, CsvError};
pub use generate::{
    clean_signal, generate_balanced, generate_from_latent, generate_instance, rule_label,
    sample_latent, Latent, TaskInstance,
};
pub use plot::{render_plot, render_plot_named, PlotError, PlotFamily};
pub use series::{SeriesError, TimeSeries};
pub use spec::{
    range_word, GeneratorParams, ReasoningKind, SpecError, TaskRegistry, TaskSpec, RANGE_WORDS,
};
pub use stats::ChannelStats;
