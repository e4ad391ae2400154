//! Persistence: the scene container, PNG/PFM images and the synthetic scene importer.

pub mod container;
pub mod image;
pub mod synthetic;

pub use container::{decode_scene, encode_scene, load_scene, save_scene, ContainerError};
pub use image::{read_image, write_image, Image, ImageError, ImageFormat};
pub use synthetic::{import_synthetic, SynthError};

use std::path::Path;

/// Writes `bytes` next to `path` and renames into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
