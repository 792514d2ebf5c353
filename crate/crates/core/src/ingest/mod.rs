//! Record ingestion: WFDB parsing, beat segmentation, normalization, record-wise
//! splits, the synthetic beat generator and the beats CSV format.

pub mod beats_csv;
pub mod records;
pub mod synth;
pub mod wfdb;

pub use beats_csv::{read_beats_csv, write_beats_csv};
pub use records::{
    load_record, normalize_record, parse_annotations, segment_beats, split_dataset, Annotation, BeatDataset, BeatWindow,
    LoadOptions, Normalization, Ordering, RecordBeats, SplitTag,
};
pub use synth::{corpus_dataset, split_corpus, SynthGenerator, SynthJitter};
pub use wfdb::{adc_to_physical, decode_format212, encode_format212, parse_wfdb_header, RecordHeader};
