//! Exact, invertible 2-D orthonormal Haar transform and multi-level
//! pyramids.
//!
//! Per 2×2 block with entries `a` (top-left), `b` (top-right), `c`
//! (bottom-left), `d` (bottom-right):
//!
//! ```text
//! LL = (a+b+c+d)/2    LH = (a-b+c-d)/2
//! HL = (a+b-c-d)/2    HH = (a-b-c+d)/2
//! ```
//!
//! which is the orthonormal convention `H·X·Hᵀ` with `H = [[1,1],[1,-1]]/√2`,
//! so total coefficient energy equals the (padded) input energy exactly.
//! LH is the horizontal difference (responds to vertical edges), HL the
//! vertical difference. Deeper levels recurse on LL. Inputs whose dims are
//! not divisible by `2^levels` are symmetric-reflect padded first; the
//! pyramid records the original shape so the inverse crops exactly.

use ndarray::{Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::imagecore::ImageTensor;

/// One decomposition level: the four subbands, each `[h, w, C]`.
#[derive(Debug, Clone)]
pub struct SubbandSet {
    pub ll: Array3<f64>,
    pub lh: Array3<f64>,
    pub hl: Array3<f64>,
    pub hh: Array3<f64>,
}

/// Multi-level subband stack. `base_shape` is the shape before padding;
/// `padded_shape` the spatial dims actually transformed.
#[derive(Debug, Clone)]
pub struct WaveletPyramid {
    pub levels: Vec<SubbandSet>,
    pub base_shape: (usize, usize, usize),
    pub padded_shape: (usize, usize),
}

impl WaveletPyramid {
    /// Sum of squares over the non-redundant coefficients: every level's
    /// detail bands plus the deepest LL. By orthonormality this equals
    /// the energy of the padded input.
    pub fn coefficient_energy(&self) -> f64 {
        let mut e = 0.0;
        for set in &self.levels {
            for band in [&set.lh, &set.hl, &set.hh] {
                e += band.iter().map(|v| v * v).sum::<f64>();
            }
        }
        if let Some(deepest) = self.levels.last() {
            e += deepest.ll.iter().map(|v| v * v).sum::<f64>();
        }
        e
    }

    fn check_structure(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidInput("pyramid has no levels".into()));
        }
        let (ph, pw) = self.padded_shape;
        let c = self.base_shape.2;
        for (l, set) in self.levels.iter().enumerate() {
            let expect = (ph >> (l + 1), pw >> (l + 1), c);
            for (name, band) in [
                ("LL", &set.ll),
                ("LH", &set.lh),
                ("HL", &set.hl),
                ("HH", &set.hh),
            ] {
                if band.dim() != expect {
                    return Err(Error::DimensionMismatch(format!(
                        "level {l} band {name} has shape {:?}, expected {:?}",
                        band.dim(),
                        expect
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Index into a length-`n` sequence under symmetric (edge-including)
/// reflection, cycling for arbitrarily large `i`.
fn reflect_index(i: usize, n: usize) -> usize {
    let period = 2 * n;
    let j = i % period;
    if j < n {
        j
    } else {
        period - 1 - j
    }
}

/// Next multiple of `multiple` at or above `n`.
pub fn padded_len(n: usize, multiple: usize) -> usize {
    n.div_ceil(multiple) * multiple
}

/// Symmetric-reflect pads spatial dims up to the next multiple of
/// `multiple`. This is the padding rule the whole pipeline shares.
pub fn reflect_pad_to_multiple(data: &Array3<f64>, multiple: usize) -> Array3<f64> {
    let (h, w, c) = data.dim();
    let (ph, pw) = (padded_len(h, multiple), padded_len(w, multiple));
    if (ph, pw) == (h, w) {
        return data.clone();
    }
    Array3::from_shape_fn((ph, pw, c), |(y, x, ch)| {
        data[[reflect_index(y, h), reflect_index(x, w), ch]]
    })
}

fn dwt_single_level(input: &Array3<f64>) -> SubbandSet {
    let (h, w, c) = input.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut ll = Array3::zeros((oh, ow, c));
    let mut lh = Array3::zeros((oh, ow, c));
    let mut hl = Array3::zeros((oh, ow, c));
    let mut hh = Array3::zeros((oh, ow, c));
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let a = input[[2 * y, 2 * x, ch]];
                let b = input[[2 * y, 2 * x + 1, ch]];
                let cc = input[[2 * y + 1, 2 * x, ch]];
                let d = input[[2 * y + 1, 2 * x + 1, ch]];
                ll[[y, x, ch]] = (a + b + cc + d) / 2.0;
                lh[[y, x, ch]] = (a - b + cc - d) / 2.0;
                hl[[y, x, ch]] = (a + b - cc - d) / 2.0;
                hh[[y, x, ch]] = (a - b - cc + d) / 2.0;
            }
        }
    }
    SubbandSet { ll, lh, hl, hh }
}

fn idwt_single_level(set: &SubbandSet, ll: &Array3<f64>) -> Array3<f64> {
    let (oh, ow, c) = ll.dim();
    let mut out = Array3::zeros((2 * oh, 2 * ow, c));
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let s_ll = ll[[y, x, ch]];
                let s_lh = set.lh[[y, x, ch]];
                let s_hl = set.hl[[y, x, ch]];
                let s_hh = set.hh[[y, x, ch]];
                out[[2 * y, 2 * x, ch]] = (s_ll + s_lh + s_hl + s_hh) / 2.0;
                out[[2 * y, 2 * x + 1, ch]] = (s_ll - s_lh + s_hl - s_hh) / 2.0;
                out[[2 * y + 1, 2 * x, ch]] = (s_ll + s_lh - s_hl - s_hh) / 2.0;
                out[[2 * y + 1, 2 * x + 1, ch]] = (s_ll - s_lh - s_hl + s_hh) / 2.0;
            }
        }
    }
    out
}

fn dwt_multi(data: &Array3<f64>, levels: usize) -> Result<WaveletPyramid> {
    if levels == 0 {
        return Err(Error::InvalidInput("levels must be at least 1".into()));
    }
    let (h, w, c) = data.dim();
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::InvalidInput("empty input".into()));
    }
    let padded = reflect_pad_to_multiple(data, 1 << levels);
    let padded_shape = (padded.dim().0, padded.dim().1);
    let mut sets = Vec::with_capacity(levels);
    let mut current = padded;
    for _ in 0..levels {
        let set = dwt_single_level(&current);
        current = set.ll.clone();
        sets.push(set);
    }
    Ok(WaveletPyramid {
        levels: sets,
        base_shape: (h, w, c),
        padded_shape,
    })
}

/// Forward multi-level Haar transform of a single-channel array.
pub fn haar_dwt2(img: &Array2<f64>, levels: usize) -> Result<WaveletPyramid> {
    let (h, w) = img.dim();
    let data = img
        .to_shape((h, w, 1))
        .map_err(|e| Error::InvalidInput(format!("reshape failed: {e}")))?
        .to_owned();
    dwt_multi(&data, levels)
}

/// Forward multi-level Haar transform of every channel of an image.
pub fn haar_dwt2_image(img: &ImageTensor, levels: usize) -> Result<WaveletPyramid> {
    dwt_multi(img.data(), levels)
}

fn idwt_multi(pyr: &WaveletPyramid) -> Result<Array3<f64>> {
    pyr.check_structure()?;
    let mut ll = pyr.levels.last().expect("checked non-empty").ll.clone();
    for set in pyr.levels.iter().rev() {
        ll = idwt_single_level(set, &ll);
    }
    let (h, w, c) = pyr.base_shape;
    Ok(ll.slice(ndarray::s![..h, ..w, ..c]).to_owned())
}

/// Inverse transform; exact up to floating-point error, with the forward
/// pass's padding cropped away.
pub fn haar_idwt2(pyr: &WaveletPyramid) -> Result<Array2<f64>> {
    let full = idwt_multi(pyr)?;
    let (h, w, c) = full.dim();
    if c != 1 {
        return Err(Error::InvalidInput(format!(
            "haar_idwt2 expects a single-channel pyramid, got {c} channels"
        )));
    }
    Ok(full
        .into_shape_with_order((h, w))
        .expect("single-channel reshape"))
}

/// Inverse transform of a multi-channel pyramid.
pub fn haar_idwt2_image(pyr: &WaveletPyramid) -> Result<Array3<f64>> {
    idwt_multi(pyr)
}

/// Per level, the three detail bands of every channel stacked along the
/// channel axis: output channel `3c + k` holds band `k` of image channel
/// `c` with `k` ∈ {0: LH, 1: HL, 2: HH}. LL is excluded.
pub fn wavelet_feature_stack(img: &ImageTensor, levels: usize) -> Result<Vec<Array3<f64>>> {
    let pyr = haar_dwt2_image(img, levels)?;
    let c = img.channels();
    let mut stacks = Vec::with_capacity(levels);
    for set in &pyr.levels {
        let (h, w, _) = set.lh.dim();
        let mut stack = Array3::zeros((h, w, 3 * c));
        for ch in 0..c {
            stack
                .index_axis_mut(Axis(2), 3 * ch)
                .assign(&set.lh.index_axis(Axis(2), ch));
            stack
                .index_axis_mut(Axis(2), 3 * ch + 1)
                .assign(&set.hl.index_axis(Axis(2), ch));
            stack
                .index_axis_mut(Axis(2), 3 * ch + 2)
                .assign(&set.hh.index_axis(Axis(2), ch));
        }
        stacks.push(stack);
    }
    Ok(stacks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn hand_computed_2x2_case() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let pyr = haar_dwt2(&x, 1).unwrap();
        let set = &pyr.levels[0];
        assert_eq!(set.ll[[0, 0, 0]], 5.0);
        assert_eq!(set.lh[[0, 0, 0]], -1.0);
        assert_eq!(set.hl[[0, 0, 0]], -2.0);
        assert_eq!(set.hh[[0, 0, 0]], 0.0);

        // Energy of the input is 1+4+9+16 = 30; of the coefficients
        // 25+1+4+0 = 30.
        assert_eq!(pyr.coefficient_energy(), 30.0);

        let back = haar_idwt2(&pyr).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn inverse_of_hand_computed_coefficients() {
        let pyr = WaveletPyramid {
            levels: vec![SubbandSet {
                ll: Array3::from_elem((1, 1, 1), 5.0),
                lh: Array3::from_elem((1, 1, 1), -1.0),
                hl: Array3::from_elem((1, 1, 1), -2.0),
                hh: Array3::from_elem((1, 1, 1), 0.0),
            }],
            base_shape: (2, 2, 1),
            padded_shape: (2, 2),
        };
        let back = haar_idwt2(&pyr).unwrap();
        assert_eq!(back, array![[1.0, 2.0], [3.0, 4.0]]);
    }

    #[test]
    fn constant_image_has_zero_details_and_scaled_ll() {
        let v = 0.37;
        let x = Array2::from_elem((8, 8), v);
        let pyr = haar_dwt2(&x, 3).unwrap();
        for (l, set) in pyr.levels.iter().enumerate() {
            for band in [&set.lh, &set.hl, &set.hh] {
                assert!(band.iter().all(|&b| b == 0.0), "level {l} detail nonzero");
            }
        }
        // Each level doubles LL for a constant input.
        assert!((pyr.levels[0].ll[[0, 0, 0]] - 2.0 * v).abs() < 1e-12);
        assert!((pyr.levels[2].ll[[0, 0, 0]] - 8.0 * v).abs() < 1e-12);
    }

    #[test]
    fn constant_pyramid_inverts_to_constant() {
        let v = 0.8;
        let pyr = WaveletPyramid {
            levels: vec![SubbandSet {
                ll: Array3::from_elem((2, 2, 1), 2.0 * v),
                lh: Array3::zeros((2, 2, 1)),
                hl: Array3::zeros((2, 2, 1)),
                hh: Array3::zeros((2, 2, 1)),
            }],
            base_shape: (4, 4, 1),
            padded_shape: (4, 4),
        };
        let back = haar_idwt2(&pyr).unwrap();
        assert!(back.iter().all(|&b| (b - v).abs() < 1e-12));
    }

    #[test]
    fn round_trip_random_inputs_three_levels() {
        for seed in 0..5 {
            let x = random_image(24, 40, seed);
            let pyr = haar_dwt2(&x, 3).unwrap();
            let back = haar_idwt2(&pyr).unwrap();
            let max_err = x
                .iter()
                .zip(back.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_err <= 1e-6, "seed {seed}: max err {max_err}");
        }
    }

    #[test]
    fn round_trip_with_padding_crops_exactly() {
        let x = random_image(17, 23, 99);
        for levels in 1..=3 {
            let pyr = haar_dwt2(&x, levels).unwrap();
            assert_eq!(pyr.base_shape, (17, 23, 1));
            let back = haar_idwt2(&pyr).unwrap();
            assert_eq!(back.dim(), (17, 23));
            let max_err = x
                .iter()
                .zip(back.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_err <= 1e-6);
        }
    }

    #[test]
    fn energy_conservation_against_padded_input() {
        let x = random_image(17, 23, 5);
        for levels in 1..=3 {
            let pyr = haar_dwt2(&x, levels).unwrap();
            let (h, w) = x.dim();
            let x3 = x.to_shape((h, w, 1)).unwrap().to_owned();
            let padded = reflect_pad_to_multiple(&x3, 1 << levels);
            let input_energy: f64 = padded.iter().map(|v| v * v).sum();
            let rel = (pyr.coefficient_energy() - input_energy).abs() / input_energy;
            assert!(rel <= 1e-5, "levels {levels}: rel energy err {rel}");
        }
    }

    #[test]
    fn linearity_of_transform() {
        let x = random_image(16, 16, 1);
        let y = random_image(16, 16, 2);
        let (alpha, beta) = (0.7, -1.3);
        let combo = alpha * &x + beta * &y;
        let p_combo = haar_dwt2(&combo, 2).unwrap();
        let p_x = haar_dwt2(&x, 2).unwrap();
        let p_y = haar_dwt2(&y, 2).unwrap();
        for l in 0..2 {
            for select in [
                |s: &SubbandSet| s.ll.clone(),
                |s: &SubbandSet| s.lh.clone(),
                |s: &SubbandSet| s.hl.clone(),
                |s: &SubbandSet| s.hh.clone(),
            ] {
                let lhs = select(&p_combo.levels[l]);
                let rhs = alpha * &select(&p_x.levels[l]) + beta * &select(&p_y.levels[l]);
                let max_err = lhs
                    .iter()
                    .zip(rhs.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(max_err <= 1e-6);
            }
        }
    }

    #[test]
    fn rejects_zero_levels_and_empty_input() {
        let x = random_image(8, 8, 0);
        assert!(haar_dwt2(&x, 0).is_err());
        let empty = Array2::<f64>::zeros((0, 4));
        assert!(haar_dwt2(&empty, 1).is_err());
    }

    #[test]
    fn idwt_rejects_mismatched_subband_shapes() {
        let mut pyr = haar_dwt2(&random_image(8, 8, 3), 2).unwrap();
        pyr.levels[1].hh = Array3::zeros((3, 3, 1));
        assert!(haar_idwt2(&pyr).is_err());
    }

    #[test]
    fn feature_stack_shapes_and_order() {
        let img =
            ImageTensor::new(Array3::from_shape_fn((64, 64, 3), |(y, x, c)| {
                ((y * 3 + x * 7 + c * 11) % 17) as f64 / 17.0
            }))
            .unwrap();
        let stacks = wavelet_feature_stack(&img, 2).unwrap();
        assert_eq!(stacks.len(), 2);
        assert_eq!(stacks[0].dim(), (32, 32, 9));
        assert_eq!(stacks[1].dim(), (16, 16, 9));

        let pyr = haar_dwt2_image(&img, 2).unwrap();
        // channel 1's HL band sits at stack channel 3*1 + 1 = 4
        let got = stacks[0].index_axis(Axis(2), 4).to_owned();
        let want = pyr.levels[0].hl.index_axis(Axis(2), 1).to_owned();
        assert_eq!(got, want);
    }

    #[test]
    fn feature_stack_of_constant_image_is_zero() {
        let img = ImageTensor::constant(32, 32, 3, 0.42).unwrap();
        let stacks = wavelet_feature_stack(&img, 3).unwrap();
        for s in &stacks {
            assert!(s.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn vertical_step_edge_lights_up_lh_only() {
        // 6 wide so the level-1 block at columns (2,3) straddles the edge.
        let x = Array2::from_shape_fn((6, 6), |(_, col)| if col < 3 { 0.0 } else { 1.0 });
        let img3 = x.to_shape((6, 6, 1)).unwrap().to_owned();
        let img = ImageTensor::new(img3).unwrap();
        let stacks = wavelet_feature_stack(&img, 1).unwrap();
        let stack = &stacks[0];
        for y in 0..3 {
            for bx in 0..3 {
                let lh = stack[[y, bx, 0]];
                let hl = stack[[y, bx, 1]];
                let hh = stack[[y, bx, 2]];
                if bx == 1 {
                    assert!((lh - (-1.0)).abs() < 1e-12, "edge block LH should be -1");
                } else {
                    assert_eq!(lh, 0.0);
                }
                assert_eq!(hl, 0.0);
                assert_eq!(hh, 0.0);
            }
        }
    }
}
