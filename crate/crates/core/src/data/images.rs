//! Grayscale image directories: one subdirectory per class.

use std::path::{Path, PathBuf};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

/// Extensions accepted when none is given explicitly.
pub const IMAGE_EXTENSIONS: [&str; 3] = ["pgm", "png", "pnm"];

fn data_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.into(),
        message: message.into(),
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn has_extension(path: &Path, extension: Option<&str>) -> bool {
    let Some(ext) = path.extension().and_then(|e| e.to_str()) else {
        return false;
    };
    let ext = ext.to_ascii_lowercase();
    match extension {
        Some(want) => ext == want.trim_start_matches('.').to_ascii_lowercase(),
        None => IMAGE_EXTENSIONS.contains(&ext.as_str()),
    }
}

fn read_gray(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let img = image::open(path).map_err(|e| data_err(path, format!("unreadable image: {e}")))?;
    let gray = img.to_luma8();
    Ok((gray.width(), gray.height(), gray.into_raw()))
}

/// Decodes the given files into `[N, 1, H, W]` scaled to `[0, 1]`.
/// All images must share one size.
pub fn load_image_files<T: Scalar>(files: &[PathBuf]) -> Result<Tensor<T>> {
    let mut size: Option<(u32, u32, &Path)> = None;
    let mut data = Vec::new();
    for f in files {
        let (w, h, bytes) = read_gray(f)?;
        match size {
            None => size = Some((w, h, f)),
            Some((w0, h0, first)) if (w0, h0) != (w, h) => {
                return Err(data_err(
                    f,
                    format!("images must have uniform size: {w}x{h} differs from {w0}x{h0} of {}", first.display()),
                ));
            }
            Some(_) => {}
        }
        data.extend(bytes.iter().map(|&b| T::lit(b as f64 / 255.0)));
    }
    let (w, h) = size.map_or((0, 0), |(w, h, _)| (w as usize, h as usize));
    Tensor::new(vec![files.len(), 1, h, w], data)
}

/// Lists matching image files in `dir`, sorted by path.
pub fn list_images(dir: &Path, extension: Option<&str>) -> Result<Vec<PathBuf>> {
    Ok(sorted_entries(dir)?
        .into_iter()
        .filter(|p| p.is_file() && has_extension(p, extension))
        .collect())
}

/// Loads `dir/<class>/<image>`; classes and files are taken in
/// lexicographic order and labels follow class order.
pub fn load_image_dir<T: Scalar>(dir: &Path, extension: Option<&str>, d: usize) -> Result<Dataset<T>> {
    let classes: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()).collect();
    if classes.is_empty() {
        return Err(data_err(dir, "no class subdirectories found"));
    }
    let mut files = Vec::new();
    let mut labels = Vec::new();
    for (label, class) in classes.iter().enumerate() {
        let found = list_images(class, extension)?;
        if found.is_empty() {
            return Err(data_err(class, "class with zero samples"));
        }
        labels.extend(std::iter::repeat_n(label, found.len()));
        files.extend(found);
    }
    Dataset::new(load_image_files(&files)?, labels, classes.len(), d)
}

/// Writes `[N, 1, H, W]` samples as `dir/class_XX/NNNN.pgm`, clamping to
/// `[0, 1]` and rounding to 8 bits. Returns the written paths.
pub fn write_image_dir<T: Scalar>(dataset: &Dataset<T>, dir: &Path) -> Result<Vec<PathBuf>> {
    let s = dataset.samples.shape();
    let &[_, 1, h, w] = s else {
        return Err(Error::shape("image export", "[N, 1, H, W]", format!("{s:?}")));
    };
    let width = dataset.k.saturating_sub(1).to_string().len().max(2);
    let mut written = Vec::with_capacity(dataset.len());
    for (i, &label) in dataset.labels.iter().enumerate() {
        let class_dir = dir.join(format!("class_{label:0width$}"));
        std::fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
        let bytes: Vec<u8> = dataset.samples.sample(i).iter().map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        let img = image::GrayImage::from_raw(w as u32, h as u32, bytes).expect("buffer matches image size");
        let path = class_dir.join(format!("{i:04}.pgm"));
        img.save(&path).map_err(|e| data_err(&path, e.to_string()))?;
        written.push(path);
    }
    Ok(written)
}
