//! File formats: images, depth grids, masks, prompts and run configs.

pub mod config;
pub mod depth;
pub mod image_io;
pub mod raw;
pub mod resize;

use std::path::{Path, PathBuf};

use crate::error::Result;

pub use config::{load_config, parse_config, RunConfig};
pub use depth::{load_depth, load_grid, save_depth, DepthMap};
pub use image_io::{load_image, load_mask, save_gray, save_image, save_mask};
pub use raw::{read_raw_grid, write_raw_grid, RawDtype};
pub use resize::{resize_for_model, ScorerFrame};

/// `<dir>/<stem>.prompt.txt` next to an image.
pub fn prompt_path(image: &Path) -> PathBuf {
    let stem = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    image.with_file_name(format!("{stem}.prompt.txt"))
}

/// First line of the image's prompt sidecar, or `None` if there is none.
pub fn load_prompt(image: &Path) -> Result<Option<String>> {
    let path = prompt_path(image);
    match std::fs::read_to_string(&path) {
        Ok(text) => Ok(Some(text.lines().next().unwrap_or("").trim_end_matches('\r').to_owned())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}
