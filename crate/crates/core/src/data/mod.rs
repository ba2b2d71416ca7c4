//! Dataset metadata ingestion and split construction.

mod images;
mod metadata;
mod split;
mod tb;

pub use images::{DirImageSource, ImageSource, MemoryImageSource, PathImageSource};
pub use metadata::{parse_chestxray14_metadata, read_chestxray14_metadata, ColumnMap, SampleRecord, SUSPECT_AGE_YEARS};
pub use split::{partition_by_patient, SplitManifest, SplitName, SplitSummary, SplitSummaryEntry};
pub use tb::{class_counts, fixed_tb_split, load_tb_dataset, ClassCounts, LabelingSpec, TbSampleRecord};
