//! Reading images and models, writing results without leaving partial files.

use std::fs;
use std::io::Write;
use std::path::Path;

use scenedet_core::image::{decode_pnm, RawImage};
use scenedet_core::{load_model, save_model, Model};

use crate::error::{Error, Result};

/// Extensions `load_dataset` treats as images.
pub const IMAGE_EXTENSIONS: [&str; 6] = ["ppm", "pgm", "pnm", "png", "jpg", "jpeg"];

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

pub fn is_image_path(path: &Path) -> bool {
    IMAGE_EXTENSIONS.contains(&extension(path).as_str())
}

/// Decodes by extension: binary pixmaps (`ppm`, `pgm`, `pnm`) and PNG.
/// JPEG is recognized but must be converted first.
pub fn decode_image(path: &Path, bytes: &[u8]) -> Result<RawImage> {
    let fail = |message: String| Error::Decode { path: path.to_owned(), message };
    match extension(path).as_str() {
        "ppm" | "pgm" | "pnm" => decode_pnm(bytes).map_err(|source| Error::Image { path: path.to_owned(), source }),
        "png" => {
            let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
                .map_err(|e| fail(format!("invalid PNG: {e}")))?
                .to_rgb8();
            let (w, h) = img.dimensions();
            RawImage::new(w as usize, h as usize, img.into_raw())
                .map_err(|source| Error::Image { path: path.to_owned(), source })
        }
        "jpg" | "jpeg" => Err(fail(
            "JPEG input is not decoded directly; convert it to PNG or PPM first, e.g. `convert in.jpg out.png`".into(),
        )),
        "" => Err(fail("no file extension to pick a decoder from".into())),
        other => Err(fail(format!("unsupported image extension .{other}"))),
    }
}

pub fn read_image(path: &Path) -> Result<RawImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(path, &bytes)
}

pub fn read_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    load_model(&bytes).map_err(|source| Error::Format { path: path.to_owned(), source })
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failure never leaves a truncated `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_model(path: &Path, model: &Model) -> Result<()> {
    write_atomic(path, &save_model(model)?)
}
