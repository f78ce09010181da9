//! Sample-grid export: quantization to 8-bit RGB and tiled PNG writing.

use std::fmt;
use std::path::Path;

use crate::tensor::Tensor;

#[derive(Debug)]
pub enum GridError {
    Io(std::io::Error),
    /// More images than grid cells, or mismatched tile sizes.
    BadLayout(String),
}

impl fmt::Display for GridError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridError::Io(e) => write!(f, "i/o error: {e}"),
            GridError::BadLayout(msg) => write!(f, "bad grid layout: {msg}"),
        }
    }
}

impl std::error::Error for GridError {}

impl From<std::io::Error> for GridError {
    fn from(e: std::io::Error) -> Self {
        GridError::Io(e)
    }
}

/// Width of the black gutter between tiles, in pixels.
pub const GUTTER: usize = 2;

/// Maps `[-1, 1]` (clamped) to 8-bit, rounding half away from zero.
pub fn quantize(v: f32) -> u8 {
    let clamped = v.clamp(-1.0, 1.0);
    ((clamped + 1.0) * 127.5).round() as u8
}

/// Converts one `[r, r, 3]` image to interleaved 8-bit RGB.
pub fn image_to_u8(t: &Tensor<f32>) -> Vec<u8> {
    t.data().iter().map(|&v| quantize(v)).collect()
}

/// Copies image `i` out of a `[n, r, r, 3]` batch.
pub fn batch_image(batch: &Tensor<f32>, i: usize) -> Tensor<f32> {
    let s = batch.shape();
    let per = s[1] * s[2] * s[3];
    Tensor::new(
        vec![s[1], s[2], s[3]],
        batch.data()[i * per..(i + 1) * per].to_vec(),
    )
    .expect("batch slice")
}

/// Writes `tiles` (interleaved RGB, each `tile_size` square) as a row-major
/// grid PNG with 2-pixel black gutters between tiles. Unfilled cells stay
/// black.
pub fn write_png_grid(
    tiles: &[Vec<u8>],
    tile_size: usize,
    rows: usize,
    cols: usize,
    path: &Path,
) -> Result<(), GridError> {
    if rows == 0 || cols == 0 || tile_size == 0 {
        return Err(GridError::BadLayout("empty grid".into()));
    }
    if tiles.len() > rows * cols {
        return Err(GridError::BadLayout(format!(
            "{} images for a {rows}x{cols} grid",
            tiles.len()
        )));
    }
    for (i, t) in tiles.iter().enumerate() {
        if t.len() != tile_size * tile_size * 3 {
            return Err(GridError::BadLayout(format!(
                "tile {i} has {} bytes, expected {}",
                t.len(),
                tile_size * tile_size * 3
            )));
        }
    }
    let width = cols * tile_size + (cols - 1) * GUTTER;
    let height = rows * tile_size + (rows - 1) * GUTTER;
    let mut canvas = vec![0u8; width * height * 3];
    for (i, tile) in tiles.iter().enumerate() {
        let (row, col) = (i / cols, i % cols);
        let y0 = row * (tile_size + GUTTER);
        let x0 = col * (tile_size + GUTTER);
        for y in 0..tile_size {
            let dst = ((y0 + y) * width + x0) * 3;
            let src = y * tile_size * 3;
            canvas[dst..dst + tile_size * 3].copy_from_slice(&tile[src..src + tile_size * 3]);
        }
    }
    let img = image::RgbImage::from_raw(width as u32, height as u32, canvas)
        .expect("canvas dimensions");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| GridError::Io(std::io::Error::other(e)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn out_path(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("progan-grid-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn quantize_endpoints_and_rounding() {
        assert_eq!(quantize(-1.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(-2.0), 0, "clamped below");
        assert_eq!(quantize(2.0), 255, "clamped above");
        assert_eq!(quantize(0.0), 128, "0 maps to 127.5, rounded away from zero");
    }

    #[test]
    fn single_image_grid_equals_image_size() {
        let t = Tensor::<f32>::full(vec![8, 8, 3], 0.5);
        let path = out_path("single.png");
        write_png_grid(&[image_to_u8(&t)], 8, 1, 1, &path).unwrap();
        let img = image::open(&path).unwrap();
        assert_eq!((img.width(), img.height()), (8, 8));
    }

    #[test]
    fn sixteen_tiles_with_gutters_is_262() {
        let tiles: Vec<Vec<u8>> = (0..16)
            .map(|i| vec![(i * 16) as u8; 64 * 64 * 3])
            .collect();
        let path = out_path("grid16.png");
        write_png_grid(&tiles, 64, 4, 4, &path).unwrap();
        let img = image::open(&path).unwrap();
        assert_eq!((img.width(), img.height()), (262, 262));
    }

    #[test]
    fn black_inputs_produce_black_canvas() {
        let tiles: Vec<Vec<u8>> = (0..4).map(|_| vec![0u8; 4 * 4 * 3]).collect();
        let path = out_path("black.png");
        write_png_grid(&tiles, 4, 2, 2, &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert!(img.pixels().all(|p| p.0 == [0, 0, 0]));
    }

    #[test]
    fn overfull_grid_is_rejected() {
        let tiles: Vec<Vec<u8>> = (0..5).map(|_| vec![0u8; 4 * 4 * 3]).collect();
        assert!(write_png_grid(&tiles, 4, 2, 2, &out_path("over.png")).is_err());
    }
}
