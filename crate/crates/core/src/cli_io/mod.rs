//! File formats, result emission and runtime configuration for the CLI.

pub mod binfmt;
pub mod csvfmt;
pub mod emit;
pub mod threads;

pub use binfmt::{
    load_dataset, read_feature_file, read_label_file, save_dataset, write_feature_file,
    write_label_file,
};
pub use csvfmt::{read_csv_dataset, write_csv_dataset};
pub use emit::{fmt_sig9, write_csv, write_jsonl, RunMeta};
pub use threads::init_thread_pool;
