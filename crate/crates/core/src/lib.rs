//! Referring-expression segmentation over images annotated with text
//! elements.
//!
//! The model embeds each element from its text and bounding box, weights the
//! embeddings by attention against the expression, paints them into their
//! boxes on a feature-map grid and fuses that grid with image and expression
//! features to score every pixel.

pub mod autodiff;
pub mod dataset;
pub mod element;
pub mod error;
pub mod gradcheck;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod overlay;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod train;

pub use element::{BBox, Element};
pub use error::{Error, Result};
pub use mask::BinaryMask;
pub use metrics::{evaluate, EvalReport};
pub use model::{predict_mask, predict_pixel, ModelConfig, SegmentationNet, SegmentationOutput};
pub use tensor::Tensor;
pub use text::{normalize_text, TextEncoder};
pub use train::{train, TrainConfig};
