//! Recording ingestion: label parsing, replay-store construction and I/O,
//! block split, mean frame and the common-choice baseline.

mod labels;
mod split;
mod store;

pub use labels::{
    format_label_line, parse_label_file, parse_label_line, ActionVocabulary, FrameLabel,
    ATARI_ACTION_NAMES,
};
pub use split::{
    block_ranges, block_split, common_choice_accuracy, compute_mean_frame, majority_action,
    SplitAssignment, SplitLabel, DEFAULT_BLOCK_SIZE, DEFAULT_VAL_FRACTION,
};
pub use store::{
    build_replay, resize_frame, subject_from_filename, FrameSource, ImageDirSource, LabelSession,
    MemoryFrameSource, ReplayStore, SessionInfo, SourceGeometry, StoreColumns,
    DEFAULT_PIXELS_PER_DEGREE, MANIFEST_FILE,
};

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use crate::{Error, Result};

/// Reads one label file as a session, inferring the subject from its name.
pub fn read_label_session(path: &Path, vocabulary: &ActionVocabulary) -> Result<LabelSession> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let labels = parse_label_file(BufReader::new(file), vocabulary)?;
    Ok(LabelSession {
        source: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        subject_id: subject_from_filename(path),
        labels,
    })
}
