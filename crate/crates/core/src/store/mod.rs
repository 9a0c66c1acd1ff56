//! On-disk embedding store, window row assembly and the synthetic generator.

mod assemble;
mod format;
mod synth;

pub use assemble::{assemble_all, assemble_rows, ContextWindow, Modality};
pub(crate) use format::{read_blob, read_file, write_file};
pub use format::{
    read_store, write_store, EmbeddingStore, ManifestRecord, StoreMeta, AUDIO_FILE,
    DEFAULT_AUDIO_DIM, DEFAULT_TEXT_DIM, FORMAT_VERSION, MANIFEST_FILE, META_FILE, TEXT_FILE,
};
pub use synth::{synth_generate, SynthConfig, SynthData, COUPLED_CLIENT_LABEL};
