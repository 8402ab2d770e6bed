//! LiDAR point cloud compression with inverse-range surface fitting,
//! shape-adaptive DCT residual coding and queue-driven rate adaptation.

pub mod abr;
pub mod bitstream;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod pipeline;
pub mod range_image;
pub mod sadct;
pub mod stream;
pub mod surface;
pub mod synth;

pub use bitstream::{BitstreamError, CompressedFrame, EntropyBackend, FrameHeader};
pub use mask::ShapeMask;
pub use metrics::{compression_ratio, range_mae, QualityReport};
pub use pipeline::{compress, decompress, Codec, CodecConfig, CodecError, CompressionLevel};
pub use range_image::{back_project, project, Point3, ProjectionConfig, RangeImage};
