//! Canonical image representation and 8-bit PNG I/O.
//!
//! Images live in memory as `f64` rasters normalized to `[0, 1]`;
//! quantization to 8 bits happens only at file boundaries. PNG with 1 or
//! 3 channels is the interchange format for every image and mask in the
//! pipeline.

use std::path::Path;

use image::{DynamicImage, ImageReader};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// H×W×C raster with values in `[0, 1]`. The single currency passed
/// between the segmentation, prior, and removal stages.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
}

impl ImageTensor {
    /// Wraps an `(H, W, C)` array, validating the type invariants:
    /// finite values in `[0, 1]`, `H, W >= 2`, `C` of 1 or 3.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h < 2 || w < 2 {
            return Err(Error::InvalidImage(format!(
                "spatial dims must be at least 2x2, got {h}x{w}"
            )));
        }
        if c != 1 && c != 3 {
            return Err(Error::InvalidImage(format!(
                "channel count must be 1 or 3, got {c}"
            )));
        }
        for &v in data.iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidImage(format!(
                    "values must be finite and in [0, 1], found {v}"
                )));
            }
        }
        Ok(Self { data })
    }

    /// Builds a constant image. Handy in tests and for panel padding.
    pub fn constant(h: usize, w: usize, c: usize, value: f64) -> Result<Self> {
        Self::new(Array3::from_elem((h, w, c), value))
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    /// Single-channel view of channel `c` as an owned 2-D array.
    pub fn channel(&self, c: usize) -> Array2<f64> {
        self.data.index_axis(ndarray::Axis(2), c).to_owned()
    }
}

/// H×W map in `[0, 1]`: binary at dataset level, soft as a prediction.
/// `threshold` is the binarization cut used everywhere downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowMask {
    data: Array2<f64>,
    threshold: f64,
}

pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;

impl ShadowMask {
    pub fn new(data: Array2<f64>, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidMask(format!(
                "threshold must lie in (0, 1), got {threshold}"
            )));
        }
        for &v in data.iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidMask(format!(
                    "values must be finite and in [0, 1], found {v}"
                )));
            }
        }
        Ok(Self { data, threshold })
    }

    pub fn with_default_threshold(data: Array2<f64>) -> Result<Self> {
        Self::new(data, DEFAULT_MASK_THRESHOLD)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    /// 0/1 map: pixels at or above the threshold are foreground.
    pub fn binarized(&self) -> Array2<f64> {
        self.data.mapv(|v| if v >= self.threshold { 1.0 } else { 0.0 })
    }

    /// Complement mask (soft values inverted), same threshold.
    pub fn inverted(&self) -> ShadowMask {
        ShadowMask {
            data: self.data.mapv(|v| 1.0 - v),
            threshold: self.threshold,
        }
    }

    /// Number of foreground pixels after binarization.
    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v >= self.threshold).count()
    }

    /// Errors unless the mask dims match the image's.
    pub fn check_matches(&self, img: &ImageTensor) -> Result<()> {
        if self.height() != img.height() || self.width() != img.width() {
            return Err(Error::DimensionMismatch(format!(
                "mask is {}x{} but image is {}x{}",
                self.height(),
                self.width(),
                img.height(),
                img.width()
            )));
        }
        Ok(())
    }

    /// Single-channel image view (for saving masks as PNGs).
    pub fn to_image(&self) -> ImageTensor {
        let (h, w) = self.data.dim();
        let data = Array3::from_shape_fn((h, w, 1), |(y, x, _)| self.data[[y, x]]);
        ImageTensor { data }
    }
}

/// Decodes an 8-bit, 1- or 3-channel PNG into normalized values
/// (`byte / 255` exactly, channel order R,G,B).
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (data, channels) = match decoded {
        DynamicImage::ImageLuma8(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            let mut arr = Array3::zeros((h, w, 1));
            for (x, y, p) in img.enumerate_pixels() {
                arr[[y as usize, x as usize, 0]] = p.0[0] as f64 / 255.0;
            }
            (arr, 1)
        }
        DynamicImage::ImageRgb8(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            let mut arr = Array3::zeros((h, w, 3));
            for (x, y, p) in img.enumerate_pixels() {
                for c in 0..3 {
                    arr[[y as usize, x as usize, c]] = p.0[c] as f64 / 255.0;
                }
            }
            (arr, 3)
        }
        other => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                reason: format!(
                    "unsupported pixel format {:?}: only 8-bit single- or three-channel rasters are accepted",
                    other.color()
                ),
            })
        }
    };
    let _ = channels;
    ImageTensor::new(data).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Quantizes to `round(value * 255)` and writes an 8-bit PNG.
/// A save/load round trip moves any pixel by at most `1/510`.
pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let h = img.height() as u32;
    let w = img.width() as u32;
    let quantize = |v: f64| (v * 255.0).round() as u8;
    let result = match img.channels() {
        1 => {
            let buf: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
            image::GrayImage::from_raw(w, h, buf)
                .expect("buffer sized from image dims")
                .save(path)
        }
        3 => {
            let buf: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
            image::RgbImage::from_raw(w, h, buf)
                .expect("buffer sized from image dims")
                .save(path)
        }
        c => unreachable!("ImageTensor invariant guarantees 1 or 3 channels, got {c}"),
    };
    result.map_err(|e| Error::Encode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Loads a single-channel PNG as a mask with the default 0.5 threshold.
/// Three-channel inputs are rejected so accidental color masks get caught.
pub fn load_mask(path: impl AsRef<Path>) -> Result<ShadowMask> {
    let path = path.as_ref();
    let img = load_image(path)?;
    if img.channels() != 1 {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            reason: format!("masks must be single-channel, got {} channels", img.channels()),
        });
    }
    ShadowMask::with_default_threshold(img.channel(0))
}

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// sRGB (D65) to CIE L*a*b*. `L` spans `[0, 100]`; grays land on
/// `a = b = 0`. The white point is taken from the conversion matrix's
/// row sums so that pure white maps to exactly `L = 100`.
pub fn rgb_to_lab(img: &ImageTensor) -> Result<Array3<f64>> {
    if img.channels() != 3 {
        return Err(Error::InvalidImage(format!(
            "rgb_to_lab needs a 3-channel image, got {} channel(s)",
            img.channels()
        )));
    }
    let (h, w, _) = img.data().dim();
    let white: [f64; 3] = [
        SRGB_TO_XYZ[0].iter().sum(),
        SRGB_TO_XYZ[1].iter().sum(),
        SRGB_TO_XYZ[2].iter().sum(),
    ];
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let r = srgb_to_linear(img.data()[[y, x, 0]]);
            let g = srgb_to_linear(img.data()[[y, x, 1]]);
            let b = srgb_to_linear(img.data()[[y, x, 2]]);
            let mut xyz = [0.0f64; 3];
            for (i, row) in SRGB_TO_XYZ.iter().enumerate() {
                xyz[i] = row[0] * r + row[1] * g + row[2] * b;
            }
            let fx = lab_f(xyz[0] / white[0]);
            let fy = lab_f(xyz[1] / white[1]);
            let fz = lab_f(xyz[2] / white[2]);
            out[[y, x, 0]] = 116.0 * fy - 16.0;
            out[[y, x, 1]] = 500.0 * (fx - fy);
            out[[y, x, 2]] = 200.0 * (fy - fz);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().expect("create temp dir")
    }

    #[test]
    fn load_all_255_gives_ones() {
        let dir = tmpdir();
        let path = dir.path().join("white.png");
        image::RgbImage::from_pixel(2, 2, image::Rgb([255, 255, 255]))
            .save(&path)
            .unwrap();
        let img = load_image(&path).unwrap();
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn load_all_zero_gives_zeros() {
        let dir = tmpdir();
        let path = dir.path().join("black.png");
        image::RgbImage::from_pixel(2, 2, image::Rgb([0, 0, 0]))
            .save(&path)
            .unwrap();
        let img = load_image(&path).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn load_scales_bytes_by_255() {
        let dir = tmpdir();
        let path = dir.path().join("mid.png");
        image::GrayImage::from_pixel(3, 2, image::Luma([128]))
            .save(&path)
            .unwrap();
        let img = load_image(&path).unwrap();
        let expected = 128.0 / 255.0;
        assert!(img.data().iter().all(|&v| v == expected));
        assert!((expected - 0.501_961).abs() < 1e-6);
    }

    #[test]
    fn load_missing_file_errors() {
        let err = load_image("/nonexistent/deshade-missing.png").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn load_rejects_16_bit() {
        let dir = tmpdir();
        let path = dir.path().join("deep.png");
        let img16 = image::ImageBuffer::<image::Luma<u16>, _>::from_pixel(2, 2, image::Luma([40000u16]));
        img16.save(&path).unwrap();
        let err = load_image(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unsupported pixel format"), "got: {msg}");
    }

    #[test]
    fn save_load_round_trip_half_gray_within_quantization() {
        let dir = tmpdir();
        let path = dir.path().join("gray.png");
        let img = ImageTensor::constant(4, 4, 3, 0.5).unwrap();
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        for (&a, &b) in img.data().iter().zip(back.data().iter()) {
            assert!((a - b).abs() <= 1.0 / 510.0);
        }
    }

    #[test]
    fn save_load_exact_at_extremes() {
        let dir = tmpdir();
        for (name, v) in [("zero.png", 0.0), ("one.png", 1.0)] {
            let path = dir.path().join(name);
            let img = ImageTensor::constant(2, 3, 1, v).unwrap();
            save_image(&img, &path).unwrap();
            let back = load_image(&path).unwrap();
            assert_eq!(img.data(), back.data());
        }
    }

    #[test]
    fn save_unwritable_path_errors() {
        let img = ImageTensor::constant(2, 2, 1, 0.5).unwrap();
        let err = save_image(&img, "/proc/deshade-not-writable/x.png").unwrap_err();
        assert!(matches!(err, Error::Io { .. } | Error::Encode { .. }));
    }

    #[test]
    fn image_tensor_rejects_out_of_range() {
        let arr = Array3::from_elem((2, 2, 3), 1.5);
        assert!(ImageTensor::new(arr).is_err());
        let arr = Array3::from_elem((2, 2, 3), f64::NAN);
        assert!(ImageTensor::new(arr).is_err());
        let arr = Array3::from_elem((1, 5, 3), 0.5);
        assert!(ImageTensor::new(arr).is_err());
        let arr = Array3::from_elem((4, 4, 2), 0.5);
        assert!(ImageTensor::new(arr).is_err());
    }

    #[test]
    fn lab_white_is_l100() {
        let img = ImageTensor::constant(2, 2, 3, 1.0).unwrap();
        let lab = rgb_to_lab(&img).unwrap();
        assert!((lab[[0, 0, 0]] - 100.0).abs() < 1e-9);
        assert!(lab[[0, 0, 1]].abs() < 0.01);
        assert!(lab[[0, 0, 2]].abs() < 0.01);
    }

    #[test]
    fn lab_black_is_origin() {
        let img = ImageTensor::constant(2, 2, 3, 0.0).unwrap();
        let lab = rgb_to_lab(&img).unwrap();
        for c in 0..3 {
            assert!(lab[[0, 0, c]].abs() < 1e-12);
        }
    }

    #[test]
    fn lab_mid_gray_reference_value() {
        // Independent evaluation of the sRGB -> XYZ -> Lab chain at 0.5:
        // linear = ((0.555)/1.055)^2.4, L = 116 * cbrt(linear) - 16.
        let linear = (0.555f64 / 1.055).powf(2.4);
        let expected_l = 116.0 * linear.cbrt() - 16.0;
        assert!((expected_l - 53.39).abs() < 0.01);

        let img = ImageTensor::constant(2, 2, 3, 0.5).unwrap();
        let lab = rgb_to_lab(&img).unwrap();
        assert!((lab[[0, 0, 0]] - expected_l).abs() < 1e-9);
        assert!(lab[[0, 0, 1]].abs() < 0.01);
        assert!(lab[[0, 0, 2]].abs() < 0.01);
    }

    #[test]
    fn lab_rejects_single_channel() {
        let img = ImageTensor::constant(2, 2, 1, 0.5).unwrap();
        assert!(rgb_to_lab(&img).is_err());
    }

    #[test]
    fn gray_pixels_have_zero_chroma() {
        for v in [0.1, 0.25, 0.6, 0.9] {
            let img = ImageTensor::constant(2, 2, 3, v).unwrap();
            let lab = rgb_to_lab(&img).unwrap();
            assert!(lab[[0, 0, 1]].abs() < 0.01);
            assert!(lab[[0, 0, 2]].abs() < 0.01);
        }
    }

    #[test]
    fn mask_binarize_threshold_boundary() {
        let data = ndarray::array![[0.49, 0.5], [0.51, 0.0]];
        let mask = ShadowMask::with_default_threshold(data).unwrap();
        let bin = mask.binarized();
        assert_eq!(bin, ndarray::array![[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(mask.foreground_count(), 2);
    }
}
