//! Feed-forward 4D Gaussian scene engine.
//!
//! Per-frame Gaussian maps with lifespan-modulated opacity are split into
//! static and dynamic parts, aggregated into one scene at any query time,
//! interpolated between frames along motion fields, and rendered with a
//! tile-based splatting compositor. The crate also covers instance editing,
//! evaluation metrics and a checksummed on-disk container.
//!
//! ```
//! use splat4d::{compose_at, import_synthetic, render, ImageSize, RenderSettings};
//!
//! let seq = import_synthetic("image 16 12\nframes 2 0.5\nbox dynamic 1 center 0 0 5 size 1 1 1 color 1 0 0 velocity 1 0 0").unwrap();
//! let comp = compose_at(&seq, 0.25).unwrap();
//! let out = render(&comp.scene, &comp.pose, ImageSize::new(16, 12), &RenderSettings::default()).unwrap();
//! assert_eq!(out.target.rgb.data.len(), 16 * 12);
//! ```

pub mod compose;
pub mod edit;
pub mod image;
pub mod io;
pub mod metrics;
pub mod model;
pub mod motion;
pub mod render;
pub mod sky;
pub mod validate;

pub use compose::{aggregate, compose_at, decompose, modulate_opacity, ComposedScene, Composition, Layer, Provenance};
pub use edit::{apply_edit, apply_script, extract_instance, list_instances, CollisionPolicy, EditOp, EditScript};
pub use image::{RgbImage, ScalarImage};
pub use io::{import_synthetic, load_scene, read_image, save_scene, write_image};
pub use model::{CameraPose, DynamicMask, Frame, Gaussian, GaussianMap, MotionField, SceneSequence};
pub use motion::{interpolate_dynamic, interpolate_pose, slerp};
pub use render::{render, ImageSize, RenderSettings, RenderTarget};
pub use sky::{build_sky, colorize_sky, SkyDome};
pub use validate::{validate_sequence, Violation};
