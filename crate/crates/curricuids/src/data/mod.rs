//! Data pipeline: CSV ingestion, cleaning, standardization and PCA,
//! stratified splitting, sequence windowing, curriculum stage plans, and a
//! desk-scale synthetic dataset generator.

pub mod matrix;
pub mod preprocess;
pub mod split;
pub mod stage;
pub mod synth;
pub mod table;
pub mod window;

pub use matrix::{FeatureMatrix, FlowRecord};
pub use preprocess::Preprocessor;
pub use split::{stratified_split, SplitSpec};
pub use stage::{build_stage_plan, DatasetKind, StagePlan};
pub use synth::{synthesize_dataset, GeneratorTruth, SynthConfig};
pub use table::{clean_table, load_table, CategoricalEncoder, RawTable};
pub use window::{windowize, SequenceBatch};
