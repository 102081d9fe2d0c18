//! Convolved pattern of wavelet transform (CPWT) texture descriptor.
//!
//! The stages run in a fixed chain: 5×5 smoothing, gradients, orientation
//! binning into four 45° sectors with 5×5 window accumulation, the two
//! strongest sector responses per pixel, an 8-neighbor interval code, one
//! averaging Haar level and a 256-bin histogram. Each stage is exposed so it
//! can be checked on its own.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::frame::Frame;

/// Upper edges of the four orientation sectors, in degrees. Sector `k`
/// covers `(ANGLES[k] - 45, ANGLES[k]]`, which partitions `(-90, 90]`.
pub const BIN_ANGLES: [f64; 4] = [-45.0, 0.0, 45.0, 90.0];

/// Half sizes of the accumulation window (rows, cols).
pub const WINDOW_HALF: (usize, usize) = (2, 2);

pub const N_BINS: usize = 256;

/// Smallest frame the full chain accepts.
pub const MIN_FRAME: usize = 9;

/// Row-major offsets of the 3×3 ring; bit `i` of a code belongs to entry `i`.
pub const RING: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// 5×5 smoothing kernel whose entries sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionMask5(#[serde(with = "mask25")] [f64; 25]);

mod mask25 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64; 25], s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; 25], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        let n = v.len();
        v.try_into()
            .map_err(|_| serde::de::Error::custom(format!("expected 25 mask entries, got {n}")))
    }
}

impl Default for ConvolutionMask5 {
    /// Normalized binomial kernel, the outer product of `[1, 4, 6, 4, 1] / 16`.
    fn default() -> Self {
        let taps = [1.0, 4.0, 6.0, 4.0, 1.0];
        let mut m = [0.0; 25];
        for r in 0..5 {
            for c in 0..5 {
                m[r * 5 + c] = taps[r] * taps[c] / 256.0;
            }
        }
        ConvolutionMask5(m)
    }
}

impl ConvolutionMask5 {
    pub fn new(entries: [f64; 25]) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("convolution mask has non-finite entries".into()));
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("convolution mask must sum to 1, sums to {sum}")));
        }
        Ok(ConvolutionMask5(entries))
    }

    pub fn identity() -> Self {
        let mut m = [0.0; 25];
        m[12] = 1.0;
        ConvolutionMask5(m)
    }

    pub fn entries(&self) -> &[f64; 25] {
        &self.0
    }
}

/// Correlation with a 5×5 mask, replicate-padded so the size is preserved.
pub fn convolve5(frame: &Frame, mask: &ConvolutionMask5) -> Result<Frame> {
    frame.ensure_min_size(5, "5x5 convolution")?;
    let (w, h) = (frame.width() as isize, frame.height() as isize);
    let m = mask.entries();
    Ok(Frame::from_fn(frame.width(), frame.height(), |r, c| {
        let mut acc = 0.0;
        for dr in 0..5isize {
            let rr = (r as isize + dr - 2).clamp(0, h - 1) as usize;
            for dc in 0..5isize {
                let cc = (c as isize + dc - 2).clamp(0, w - 1) as usize;
                acc += m[(dr * 5 + dc) as usize] * frame.at(rr, cc);
            }
        }
        acc
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub magnitude: Vec<f64>,
    /// Degrees in `(-90, 90]`.
    pub orientation: Vec<f64>,
}

/// Orientation `atan(gx / gy)` in degrees, with the axis conventions for
/// vanishing partials.
pub fn orientation_degrees(gx: f64, gy: f64) -> f64 {
    if gy == 0.0 {
        if gx == 0.0 {
            0.0
        } else {
            90.0
        }
    } else {
        (gx / gy).atan().to_degrees()
    }
}

fn derivative(len: usize, i: usize, sample: impl Fn(usize) -> f64) -> f64 {
    if i == 0 {
        sample(1) - sample(0)
    } else if i == len - 1 {
        sample(len - 1) - sample(len - 2)
    } else {
        (sample(i + 1) - sample(i - 1)) / 2.0
    }
}

/// Central differences inside, one-sided at the borders. `x` runs along
/// columns and `y` along rows.
pub fn gradient(convolved: &Frame) -> Result<GradientField> {
    convolved.ensure_min_size(3, "gradient")?;
    let (w, h) = (convolved.width(), convolved.height());
    let mut magnitude = Vec::with_capacity(w * h);
    let mut orientation = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let gx = derivative(w, c, |k| convolved.at(r, k));
            let gy = derivative(h, r, |k| convolved.at(k, c));
            magnitude.push((gx * gx + gy * gy).sqrt());
            orientation.push(orientation_degrees(gx, gy));
        }
    }
    Ok(GradientField {
        width: w,
        height: h,
        magnitude,
        orientation,
    })
}

/// Sector index of an orientation in `(-90, 90]`.
pub fn orientation_bin(alpha: f64) -> usize {
    BIN_ANGLES.iter().position(|&upper| alpha <= upper).unwrap_or(3)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientationMaps {
    pub width: usize,
    pub height: usize,
    /// One accumulation map per entry of [`BIN_ANGLES`].
    pub maps: [Vec<f64>; 4],
}

impl OrientationMaps {
    pub fn values_at(&self, idx: usize) -> [f64; 4] {
        [self.maps[0][idx], self.maps[1][idx], self.maps[2][idx], self.maps[3][idx]]
    }
}

/// Sums gradient magnitude per orientation sector over a 5×5 window,
/// truncated at the frame borders.
pub fn quantize_orientations(field: &GradientField) -> OrientationMaps {
    let (w, h) = (field.width, field.height);
    let bins: Vec<usize> = field.orientation.iter().map(|&a| orientation_bin(a)).collect();
    let mut maps: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; w * h]);
    let (n1, n2) = WINDOW_HALF;
    for r in 0..h {
        for c in 0..w {
            let mut acc = [0.0; 4];
            for rr in r.saturating_sub(n1)..(r + n1 + 1).min(h) {
                for cc in c.saturating_sub(n2)..(c + n2 + 1).min(w) {
                    let i = rr * w + cc;
                    acc[bins[i]] += field.magnitude[i];
                }
            }
            for (map, v) in maps.iter_mut().zip(acc) {
                map[r * w + c] = v;
            }
        }
    }
    OrientationMaps {
        width: w,
        height: h,
        maps,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgressionMaps {
    pub width: usize,
    pub height: usize,
    /// Largest sector response.
    pub first: Vec<f64>,
    /// Second largest sector response.
    pub second: Vec<f64>,
}

/// Largest and second largest of four values. Ties keep the lower index.
pub fn top_two_values(values: [f64; 4]) -> (f64, f64) {
    let mut best = 0;
    for k in 1..4 {
        if values[k] > values[best] {
            best = k;
        }
    }
    let mut second: Option<usize> = None;
    for k in 0..4 {
        if k != best && second.is_none_or(|s| values[k] > values[s]) {
            second = Some(k);
        }
    }
    (values[best], values[second.unwrap()])
}

pub fn top_two(maps: &OrientationMaps) -> ProgressionMaps {
    let n = maps.width * maps.height;
    let (first, second) = (0..n).map(|i| top_two_values(maps.values_at(i))).unzip();
    ProgressionMaps {
        width: maps.width,
        height: maps.height,
        first,
        second,
    }
}

/// Per-pixel 8-bit codes on the source lattice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternImage {
    width: usize,
    height: usize,
    codes: Vec<u8>,
}

impl PatternImage {
    pub fn new(width: usize, height: usize, codes: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || codes.len() != width * height {
            return Err(Error::Shape(format!(
                "pattern {width}x{height} with {} codes",
                codes.len()
            )));
        }
        Ok(PatternImage { width, height, codes })
    }

    /// Reads codes from a frame of integral values in `[0, 255]`.
    pub fn from_frame(frame: &Frame) -> Result<Self> {
        frame.check_intensity_range()?;
        if frame.pixels().iter().any(|v| v.fract() != 0.0) {
            return Err(Error::InvalidInput("pattern codes must be integers".into()));
        }
        Self::new(frame.width(), frame.height(), frame.to_u8())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn at(&self, row: usize, col: usize) -> u8 {
        self.codes[row * self.width + col]
    }

    pub fn to_frame(&self) -> Frame {
        Frame::new(self.width, self.height, self.codes.iter().map(|&c| c as f64).collect())
            .expect("pattern dimensions are valid")
    }
}

/// Bit `i` is set when the absolute difference between ring neighbor `i`
/// and the center lies in `(second, first]`. A two-pixel border stays 0.
pub fn encode(convolved: &Frame, progression: &ProgressionMaps) -> Result<PatternImage> {
    let (w, h) = (convolved.width(), convolved.height());
    if progression.width != w || progression.height != h {
        return Err(Error::Shape(format!(
            "progression maps {}x{} vs frame {w}x{h}",
            progression.width, progression.height
        )));
    }
    let mut codes = vec![0u8; w * h];
    for r in 2..h.saturating_sub(2) {
        for c in 2..w.saturating_sub(2) {
            let idx = r * w + c;
            let (hi, lo) = (progression.first[idx], progression.second[idx]);
            let center = convolved.at(r, c);
            let mut code = 0u8;
            for (bit, &(dr, dc)) in RING.iter().enumerate() {
                let v = convolved.at((r as isize + dr) as usize, (c as isize + dc) as usize);
                let diff = (v - center).abs();
                if lo < diff && diff <= hi {
                    code |= 1 << bit;
                }
            }
            codes[idx] = code;
        }
    }
    PatternImage::new(w, h, codes)
}

/// One level of averaging Haar analysis, approximation band only.
///
/// Rows then columns are filtered with `(1/2, 1/2)` and decimated by two;
/// an odd trailing sample is paired with itself.
pub fn haar_approximation(frame: &Frame) -> Result<Frame> {
    frame.ensure_min_size(2, "haar reduction")?;
    let (w, h) = (frame.width(), frame.height());
    let (ow, oh) = (w.div_ceil(2), h.div_ceil(2));
    let mut rows = Vec::with_capacity(ow * h);
    for r in 0..h {
        for k in 0..ow {
            let a = frame.at(r, 2 * k);
            let b = frame.at(r, (2 * k + 1).min(w - 1));
            rows.push((a + b) / 2.0);
        }
    }
    let mut out = Vec::with_capacity(ow * oh);
    for k in 0..oh {
        let (r0, r1) = (2 * k, (2 * k + 1).min(h - 1));
        for c in 0..ow {
            out.push((rows[r0 * ow + c] + rows[r1 * ow + c]) / 2.0);
        }
    }
    Frame::new(ow, oh, out)
}

pub fn haar_reduce(pattern: &PatternImage) -> Result<Frame> {
    haar_approximation(&pattern.to_frame())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub bins: Vec<f64>,
    pub normalized: bool,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// 256-bin histogram of values rounded to the nearest integer.
pub fn histogram(reduced: &Frame, normalize: bool) -> FeatureVector {
    let mut bins = vec![0.0; N_BINS];
    for &v in reduced.pixels() {
        bins[v.round().clamp(0.0, 255.0) as usize] += 1.0;
    }
    if normalize {
        let total = reduced.pixels().len() as f64;
        bins.iter_mut().for_each(|b| *b /= total);
    }
    FeatureVector { bins, normalized: normalize }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CpwtConfig {
    #[serde(default)]
    pub convolution_mask: ConvolutionMask5,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub pattern: PatternImage,
    pub feature: FeatureVector,
}

/// Runs the whole descriptor chain on one filtered frame.
pub fn extract(frame: &Frame, config: &CpwtConfig) -> Result<Extraction> {
    frame.ensure_min_size(MIN_FRAME, "CPWT extraction")?;
    let convolved = convolve5(frame, &config.convolution_mask)?;
    let field = gradient(&convolved)?;
    let progression = top_two(&quantize_orientations(&field));
    let pattern = encode(&convolved, &progression)?;
    let feature = histogram(&haar_reduce(&pattern)?, true);
    Ok(Extraction { pattern, feature })
}

/// Extracts every frame, results in input order.
pub fn extract_batch(frames: &[Frame], config: &CpwtConfig, exec: Execution) -> Result<Vec<Extraction>> {
    exec.try_map(frames, |f| extract(f, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn progression_const(w: usize, h: usize, first: f64, second: f64) -> ProgressionMaps {
        ProgressionMaps {
            width: w,
            height: h,
            first: vec![first; w * h],
            second: vec![second; w * h],
        }
    }

    /// 5×5 frame with a zero center and the ring around it set from `ring`.
    fn ring_frame(ring: [f64; 8]) -> Frame {
        let mut f = Frame::filled(5, 5, 0.0);
        for (&(dr, dc), v) in RING.iter().zip(ring) {
            f.set((2 + dr) as usize, (2 + dc) as usize, v);
        }
        f
    }

    #[test]
    fn binomial_mask_sums_to_one_and_weights_impulse() {
        let m = ConvolutionMask5::default();
        assert!((m.entries().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let mut f = Frame::filled(9, 9, 0.0);
        f.set(4, 4, 256.0);
        assert_eq!(convolve5(&f, &m).unwrap().at(4, 4), 36.0);
    }

    #[test]
    fn convolution_preserves_constants_and_identity() {
        let f = Frame::filled(7, 6, 42.0);
        assert!(convolve5(&f, &ConvolutionMask5::default())
            .unwrap()
            .pixels()
            .iter()
            .all(|&v| (v - 42.0).abs() < 1e-12));
        let g = Frame::from_fn(6, 6, |r, c| (r * 7 + c) as f64);
        assert_eq!(convolve5(&g, &ConvolutionMask5::identity()).unwrap(), g);
        assert!(convolve5(&Frame::filled(4, 8, 0.0), &ConvolutionMask5::identity()).is_err());
        assert!(ConvolutionMask5::new([0.0; 25]).is_err());
    }

    #[test]
    fn gradient_of_ramps() {
        let flat = gradient(&Frame::filled(5, 5, 3.0)).unwrap();
        assert!(flat.magnitude.iter().all(|&m| m == 0.0));
        assert!(flat.orientation.iter().all(|&a| a == 0.0));

        let horiz = gradient(&Frame::from_fn(6, 5, |_, c| c as f64)).unwrap();
        assert!(horiz.magnitude.iter().all(|&m| m == 1.0));
        assert!(horiz.orientation.iter().all(|&a| a == 90.0));

        let vert = gradient(&Frame::from_fn(6, 5, |r, _| r as f64)).unwrap();
        assert!(vert.magnitude.iter().all(|&m| m == 1.0));
        assert!(vert.orientation.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn orientation_sectors_partition_the_half_circle() {
        assert_eq!(orientation_bin(-89.9), 0);
        assert_eq!(orientation_bin(-45.0), 0);
        assert_eq!(orientation_bin(-44.9), 1);
        assert_eq!(orientation_bin(0.0), 1);
        assert_eq!(orientation_bin(45.0), 2);
        assert_eq!(orientation_bin(45.1), 3);
        assert_eq!(orientation_bin(90.0), 3);
    }

    fn uniform_field(angle: f64, magnitude: f64) -> GradientField {
        GradientField {
            width: 9,
            height: 9,
            magnitude: vec![magnitude; 81],
            orientation: vec![angle; 81],
        }
    }

    #[test]
    fn window_sums_land_in_the_right_sector() {
        let zero = quantize_orientations(&uniform_field(30.0, 0.0));
        assert!(zero.maps.iter().all(|m| m.iter().all(|&v| v == 0.0)));

        let m0 = quantize_orientations(&uniform_field(0.0, 1.0));
        assert_eq!(m0.values_at(4 * 9 + 4), [0.0, 25.0, 0.0, 0.0]);

        let m90 = quantize_orientations(&uniform_field(90.0, 2.0));
        assert_eq!(m90.values_at(4 * 9 + 4), [0.0, 0.0, 0.0, 50.0]);
        // corner window is truncated to 3×3
        assert_eq!(m90.values_at(0), [0.0, 0.0, 0.0, 18.0]);
    }

    #[test]
    fn top_two_examples() {
        assert_eq!(top_two_values([10.0, 4.0, 7.0, 1.0]), (10.0, 7.0));
        assert_eq!(top_two_values([3.0; 4]), (3.0, 3.0));
        assert_eq!(top_two_values([0.0, 0.0, 0.0, 5.0]), (5.0, 0.0));
    }

    #[test]
    fn encoding_examples() {
        let degenerate = encode(&ring_frame([5.0; 8]), &progression_const(5, 5, 4.0, 4.0)).unwrap();
        assert_eq!(degenerate.at(2, 2), 0);

        let full = encode(&ring_frame([5.0; 8]), &progression_const(5, 5, 10.0, 2.0)).unwrap();
        assert_eq!(full.at(2, 2), 255);

        let alt = ring_frame([1.0, 5.0, 1.0, 5.0, 1.0, 5.0, 1.0, 5.0]);
        let code = encode(&alt, &progression_const(5, 5, 10.0, 2.0)).unwrap();
        assert_eq!(code.at(2, 2), 170);
        assert_eq!(code.at(0, 0), 0);
        assert_eq!(code.at(1, 2), 0);
    }

    #[test]
    fn haar_examples() {
        let p = PatternImage::new(2, 2, vec![8; 4]).unwrap();
        assert_eq!(haar_reduce(&p).unwrap().pixels(), &[8.0]);
        let q = PatternImage::new(2, 2, vec![0, 4, 8, 4]).unwrap();
        assert_eq!(haar_reduce(&q).unwrap().pixels(), &[4.0]);
        let c = PatternImage::new(4, 4, vec![9; 16]).unwrap();
        let r = haar_reduce(&c).unwrap();
        assert_eq!((r.width(), r.height()), (2, 2));
        assert!(r.pixels().iter().all(|&v| v == 9.0));
        let odd = PatternImage::new(3, 3, vec![0, 0, 6, 0, 0, 6, 2, 2, 8]).unwrap();
        let r = haar_reduce(&odd).unwrap();
        assert_eq!(r.pixels(), &[0.0, 6.0, 2.0, 8.0]);
        assert!(haar_reduce(&PatternImage::new(1, 3, vec![0; 3]).unwrap()).is_err());
    }

    #[test]
    fn histogram_examples() {
        let zeros = histogram(&Frame::filled(4, 3, 0.0), false);
        assert_eq!(zeros.bins[0], 12.0);
        assert!(zeros.bins[1..].iter().all(|&b| b == 0.0));

        let f = Frame::new(4, 1, vec![0.0, 1.0, 1.0, 2.0]).unwrap();
        let h = histogram(&f, true);
        assert_eq!(&h.bins[..4], &[0.25, 0.5, 0.25, 0.0]);
        assert_eq!(h.len(), 256);
    }

    #[test]
    fn constant_frame_gives_one_hot_feature() {
        let ex = extract(&Frame::filled(16, 12, 90.0), &CpwtConfig::default()).unwrap();
        assert!(ex.pattern.codes().iter().all(|&c| c == 0));
        assert_eq!(ex.feature.bins[0], 1.0);
        assert!(extract(&Frame::filled(8, 12, 1.0), &CpwtConfig::default()).is_err());
    }

    #[test]
    fn batch_matches_single() {
        let frames: Vec<Frame> = (0..6)
            .map(|k| Frame::from_fn(12, 12, |r, c| ((r * 3 + c * k) % 17) as f64 * 10.0))
            .collect();
        let cfg = CpwtConfig::default();
        let seq = extract_batch(&frames, &cfg, Execution::Sequential).unwrap();
        let par = extract_batch(&frames, &cfg, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
        assert_eq!(seq[3], extract(&frames[3], &cfg).unwrap());
    }

    proptest! {
        #[test]
        fn top_two_matches_sorting(values in proptest::array::uniform4(0.0f64..100.0)) {
            let mut sorted = values;
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            prop_assert_eq!(top_two_values(values), (sorted[0], sorted[1]));
        }

        #[test]
        fn features_are_normalized(pixels in proptest::collection::vec(0u8..=255, 144)) {
            let f = Frame::new(12, 12, pixels.iter().map(|&p| p as f64).collect()).unwrap();
            let ex = extract(&f, &CpwtConfig::default()).unwrap();
            prop_assert_eq!(ex.feature.len(), 256);
            prop_assert!((ex.feature.bins.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(ex.feature.bins.iter().all(|&b| b >= 0.0));
            for r in 0..12 {
                for c in 0..12 {
                    if r < 2 || c < 2 || r >= 10 || c >= 10 {
                        prop_assert_eq!(ex.pattern.at(r, c), 0);
                    }
                }
            }
        }
    }
}
