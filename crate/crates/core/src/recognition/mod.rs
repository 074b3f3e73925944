//! Joint segmentation and classification of mouse actions.

mod features;
mod model;
mod segment;
mod states;
mod svm;
mod viterbi;

pub use features::{encode_log, encode_record, featurize_codes, featurize_interval, FeatureVector, FEATURE_DIM};
pub use model::{
    build_unary, column_scores, load_corpus, train_action_models, ActionModel, LabeledAction, LabeledDemo, TrainConfig,
    LABELS_FILE, MODEL_MAGIC,
};
pub use segment::{fold_segments, segment_and_classify, typing_runs, ActionSegment, SegmentKind};
pub use states::{initial, pairwise, State, StateSpace};
pub use svm::{LinearSvm, SvmConfig};
pub use viterbi::{decode, path_score, UnaryMatrix};

use crate::action::BasicAction;

#[derive(Debug, thiserror::Error)]
pub enum RecognitionError {
    #[error("not enough training examples for {class}: {found} < {needed}")]
    InsufficientData {
        class: BasicAction,
        found: usize,
        needed: usize,
    },
    #[error("no mouse key frames: nothing was demonstrated")]
    EmptyMatrix,
    #[error("labeled key frames {0:?} are not mouse key frames of the log")]
    MisalignedLabel(Vec<usize>),
    #[error("model archive: {0}")]
    Archive(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
