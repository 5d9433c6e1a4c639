//! Offline HD map maintenance: fuse frame-by-frame vector map predictions
//! into a global map, find 30 m cells that disagree with an existing map,
//! and merge the cells an operator accepts.

pub mod error;
pub mod geom;
pub mod io;
pub mod labeling;
pub mod map;
pub mod metrics;
pub mod raster;
pub mod skeleton;
pub mod spatial;
pub mod synth;
pub mod updater;

pub use error::{Error, Result};
pub use geom::{Point2, Point3, Rect};
pub use map::{FramePrediction, MapClass, MapElement, PerceptionWindow, Pose2, VectorMap};
