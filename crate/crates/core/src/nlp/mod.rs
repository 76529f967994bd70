//! Dictionary-based concept extraction over note text.
//!
//! Surface terms are compiled into a token trie and matched against each
//! note in a single left-to-right pass, keeping the longest match at every
//! position. Mentions become `note_nlp` rows with char offsets, verbatim
//! lexical variants and a short negation pass. Large note tables run in
//! batches on a worker pool with optional checkpointing.

mod dictionary;
mod pipeline;
pub mod text;

pub use dictionary::{
    compile_dictionary, extract_note, load_custom_categories, load_dictionary, read_custom_categories, read_dictionary,
    CategoryExtension, CompiledDictionary, DictionaryEntry, LinkGap, ManualLinks, Mention, KNOWN_CATEGORIES,
};
pub use pipeline::{
    distinct_variants, distinct_variants_in, patients_with_concept, patients_with_concept_in, run_nlp, run_pipeline,
    write_metrics, Checkpoint, NlpMetrics, NlpOutput, NlpRunConfig, CHECKPOINT_FILE, SNIPPET_RADIUS, SPOOL_FILE,
};
