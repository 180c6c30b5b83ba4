//! Region proposals for pedestrian detection from LiDAR point clouds.
//!
//! The pipeline reduces the point density as a function of range, removes
//! the ground with a degree-2 polynomial surface, groups the remaining points
//! with DBSCAN and projects every plausible cluster into the camera image.
//! The [`evaluation`] module measures proposal quality against KITTI labels.
//!
//! ```no_run
//! use lidarprop::{calib, cloud_io, proposals::{self, PipelineParams}};
//!
//! let cloud = cloud_io::read_kitti_bin("000000.bin").unwrap();
//! let calib = calib::parse_calib("000000.txt").unwrap();
//! let out = proposals::generate_cluster_proposals(&cloud, &calib, &PipelineParams::default()).unwrap();
//! for p in &out.proposals {
//!     println!("{:?}", p.bbox);
//! }
//! ```

pub mod calib;
pub mod cloud_io;
pub mod clustering;
pub mod evaluation;
pub mod preprocess;
pub mod proposals;

pub use calib::{CalibrationSet, ImageSize, PixelPoint};
pub use cloud_io::{Point3, PointCloud, SceneSpec};
pub use clustering::{Cluster, DbscanParams, Extent3, SpatialIndex};
pub use evaluation::{DifficultyTier, EvalReport, GroundTruthLabel, MatchResult};
pub use preprocess::{DownsampleParams, GroundModel, GroundParams};
pub use proposals::{BBox2D, PipelineParams, Proposal, ProposalSource};
