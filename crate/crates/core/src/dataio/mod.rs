//! Frame files, sequence manifests, filtering, augmentation and the
//! synthetic scene generator.

mod frame;
mod sequence;
mod synth;

pub use frame::{Frame, RadarPoint, CSV_HEADER};
pub use sequence::{
    augment_flip, augment_jitter, filter_points, load_sequence, random_rigid, write_sequence,
    JitterConfig, Sequence, SequenceManifest, DEFAULT_FOV_HALF_ANGLE_DEG, DEFAULT_HEIGHT_BOUNDS,
};
pub use synth::{static_rrv, synth_generate, SynthConfig, SynthSequence, TurnProfile};
