//! Hand-object distance maps, contact labels and the contact-part predictor.

pub mod maps;
pub mod predictor;

pub use maps::{contact_radius, default_lambda, distance_map, gt_contact, min_per_frame, normalize_map, SIGMA};
pub use predictor::{contact_loss, roc_auc, ContactPredictor, ContactPredictorConfig};
