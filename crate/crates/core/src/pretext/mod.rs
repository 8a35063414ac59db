//! Shape-classification pretext task and the prototype machinery built on
//! its feature space.

mod extractor;
mod gmm;
mod prior;

pub use extractor::{train_classifier, train_classifier_epochs, FeatureExtractor, TrainOptions, TrainReport};
pub use gmm::{fit_gmm_em, fit_gmm_em_restarts, GmmState, DEFAULT_RESTARTS, VARIANCE_FLOOR};
pub use prior::{
    cosine_gap, difficulty_weight, load_prototypes, prototype_from_gmm, save_prototypes, soft_prior, DifficultyWeight,
    Prototype, PrototypeMode, PrototypeRecord, RADIUS_FLOOR,
};
