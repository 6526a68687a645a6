//! Datasets, the CSV + schema format, benchmark loaders and seeded splits.

pub mod benchmarks;
pub mod dataset;
pub mod io;
pub mod npz;
pub mod split;

pub use benchmarks::{data_dir_from_env, load_ihdp, load_jobs, load_twins, BenchmarkData, TwinRecords, DATA_DIR_ENV};
pub use dataset::{Dataset, Standardizer, VarKind};
pub use io::{load_csv, load_csv_with_sidecar, save_csv, Schema};
pub use split::{split, SplitSpec, Splits};
