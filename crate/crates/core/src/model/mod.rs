//! The completion network: feature and position extractor, missing feature
//! generator, missing-part sensitive transformer, coarse head, folding
//! decoder, proxy alignment and the training loss.

mod config;
mod extractor;
mod heads;
mod network;

pub use config::{ModelConfig, PROFILES};
pub use extractor::{FeatureExtractor, PositionExtractor, ProxySet, TransitionDown};
pub use heads::{
    fold_lattice, random_position_encoding, CoarseHead, FoldLayer, FoldingDecoder, MissingFeatureGenerator,
    SensitiveBlock, SensitiveTransformer, FOLD_SPAN,
};
pub use network::{
    end_to_end_gradcheck, random_sample, sidecar, Completion, ForwardVars, LossBreakdown, LossVars, ProxyFormer,
    TrainingSample, TrueProxies, END_TO_END_TOLERANCE,
};
