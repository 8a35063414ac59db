//! Chamfer distance, silhouette projection loss and evaluation metrics.

mod chamfer;
mod metrics;
mod objective;
mod projection;
mod render;

pub use chamfer::{chamfer, chamfer_distance, nearest, nearest_brute, NeighborGrid, NeighborSearch};
pub use metrics::{batch_loss, consistency, f_score, FScore, LossReport};
pub use objective::{target_silhouettes, total_loss, ObjectiveConfig, Target};
pub use projection::{mask_bce, mask_bce_node, projection_loss, target_masks, BceOrientation, ProjectionConfig};
pub use render::{MaskRenderer, RenderedMask};
