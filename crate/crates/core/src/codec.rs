//! Block-DCT quantization codec stand-in and synthetic clip generator.
//!
//! Frames at HQF positions (`i % period == 0`) are quantized with the fine
//! step `q_low`, all others with the coarse step `q_high`, reproducing the
//! periodic quality fluctuation of low-delay coding.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clip::{Clip, Frame, Label, Role};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradeConfig {
    pub block_size: usize,
    /// Quantization step at LQF positions.
    pub q_high: f64,
    /// Quantization step at HQF positions.
    pub q_low: f64,
    pub period: usize,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        Preset::Q37.config()
    }
}

impl DegradeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_size < 2 {
            return Err(Error::Config(format!("block_size {} must be >= 2", self.block_size)));
        }
        if !(self.q_low >= 1.0 && self.q_low <= self.q_high) {
            return Err(Error::Config(format!(
                "quantization steps must satisfy 1 <= q_low <= q_high (got q_low {}, q_high {})",
                self.q_low, self.q_high
            )));
        }
        if self.period < 2 {
            return Err(Error::Config(format!("period {} must be >= 2", self.period)));
        }
        Ok(())
    }

    pub fn label_for(&self, index: usize) -> Label {
        if index.is_multiple_of(self.period) {
            Label::Hqf
        } else {
            Label::Lqf
        }
    }

    pub fn step_for(&self, label: Label) -> f64 {
        match label {
            Label::Hqf => self.q_low,
            Label::Lqf => self.q_high,
        }
    }
}

/// Named quantization presets standing in for the two encoder QPs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Q37,
    Q32,
}

impl Preset {
    pub fn config(self) -> DegradeConfig {
        let (q_low, q_high) = match self {
            Preset::Q37 => (24.0, 56.0),
            Preset::Q32 => (16.0, 40.0),
        };
        DegradeConfig {
            block_size: 8,
            q_high,
            q_low,
            period: 4,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "q37" => Ok(Preset::Q37),
            "q32" => Ok(Preset::Q32),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected q37 or q32)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Q37 => "q37",
            Preset::Q32 => "q32",
        })
    }
}

/// Orthonormal DCT-II basis, row k = frequency.
fn dct_basis(n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for k in 0..n {
        let alpha = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            c[k * n + i] = alpha * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    c
}

/// out = a · b for n×n matrices; `ta`/`tb` transpose the operands.
fn matmul(a: &[f64], b: &[f64], n: usize, ta: bool, tb: bool) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                let av = if ta { a[k * n + i] } else { a[i * n + k] };
                let bv = if tb { b[j * n + k] } else { b[k * n + j] };
                acc += av * bv;
            }
            out[i * n + j] = acc;
        }
    }
    out
}

pub(crate) fn dct2(block: &[f64], basis: &[f64], n: usize) -> Vec<f64> {
    let tmp = matmul(basis, block, n, false, false);
    matmul(&tmp, basis, n, false, true)
}

pub(crate) fn idct2(coeffs: &[f64], basis: &[f64], n: usize) -> Vec<f64> {
    let tmp = matmul(basis, coeffs, n, true, false);
    matmul(&tmp, basis, n, false, false)
}

/// Quantizes each `block_size` block in the DCT domain with step `q`.
/// The reconstruction is clamped to 0..=255 and rounded to integers, like a
/// decoded 8-bit frame.
pub fn degrade_frame(frame: &Frame, q: f64, block_size: usize) -> Result<Frame> {
    if q.is_nan() || q < 1.0 {
        return Err(Error::invalid(format!("quantization step {q} must be >= 1")));
    }
    if block_size < 2 {
        return Err(Error::invalid(format!("block size {block_size} must be >= 2")));
    }
    let (w, h) = frame.dims();
    if w % block_size != 0 || h % block_size != 0 {
        return Err(Error::invalid(format!(
            "frame {w}x{h} is not a multiple of block size {block_size}"
        )));
    }
    let n = block_size;
    let basis = dct_basis(n);
    let mut out = frame.clone();
    let mut block = vec![0.0; n * n];
    for by in (0..h).step_by(n) {
        for bx in (0..w).step_by(n) {
            for y in 0..n {
                for x in 0..n {
                    block[y * n + x] = frame.at(bx + x, by + y);
                }
            }
            let coeffs: Vec<f64> = dct2(&block, &basis, n)
                .into_iter()
                .map(|c| (c / q).round() * q)
                .collect();
            let rec = idct2(&coeffs, &basis, n);
            let dst = out.data_mut();
            for y in 0..n {
                for x in 0..n {
                    dst[(by + y) * w + bx + x] = rec[y * n + x].clamp(0.0, 255.0).round();
                }
            }
        }
    }
    Ok(out)
}

pub fn degrade_clip(clip: &Clip, cfg: &DegradeConfig) -> Result<Clip> {
    cfg.validate()?;
    if clip.is_empty() {
        return Err(Error::invalid("degrade_clip: empty clip"));
    }
    if clip.role != Role::Raw {
        return Err(Error::invalid("degrade_clip: input clip must be raw"));
    }
    let labels: Vec<Label> = (0..clip.len()).map(|i| cfg.label_for(i)).collect();
    let frames = clip
        .frames
        .iter()
        .zip(&labels)
        .map(|(f, &l)| degrade_frame(f, cfg.step_for(l), cfg.block_size))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Clip::with_labels(frames, labels, Role::Degraded)?;
    out.original_dims = clip.original_dims;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    Translate,
    Still,
    Ramp,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translate" => Ok(SynthKind::Translate),
            "still" => Ok(SynthKind::Still),
            "ramp" => Ok(SynthKind::Ramp),
            other => Err(Error::invalid(format!(
                "unknown clip kind {other:?} (expected translate, still or ramp)"
            ))),
        }
    }
}

/// Seeded smooth texture on a `w`×`h` canvas, values in roughly 30..=225.
pub fn smooth_texture(w: usize, h: usize, seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<f64> = (0..w * h).map(|_| rng.gen::<f64>()).collect();
    for _ in 0..2 {
        data = box_blur(&data, w, h, 1);
    }
    // a couple of soft blobs give the content some large-scale structure
    for _ in 0..3 {
        let cx = rng.gen_range(0.0..w as f64);
        let cy = rng.gen_range(0.0..h as f64);
        let r = rng.gen_range(3.0..8.0);
        let amp = rng.gen_range(-0.6..0.6);
        for y in 0..h {
            for x in 0..w {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                data[y * w + x] += amp * (-d2 / (2.0 * r * r)).exp();
            }
        }
    }
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    let data = data.iter().map(|v| (30.0 + 195.0 * (v - lo) / span).round()).collect();
    Frame::new(w, h, data).expect("sized by construction")
}

fn box_blur(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; w * h];
    let mut out = vec![0.0; w * h];
    let norm = (2 * r + 1) as f64;
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for d in 0..=2 * r {
                let sx = (x + d).saturating_sub(r).min(w - 1);
                acc += src[y * w + sx];
            }
            tmp[y * w + x] = acc / norm;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for d in 0..=2 * r {
                let sy = (y + d).saturating_sub(r).min(h - 1);
                acc += tmp[sy * w + x];
            }
            out[y * w + x] = acc / norm;
        }
    }
    out
}

fn sample_clamped(f: &Frame, x: f64, y: f64) -> f64 {
    let (w, h) = f.dims();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = (x.floor() as usize).min(w - 1);
    let y0 = (y.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let ax = x - x0 as f64;
    let ay = y - y0 as f64;
    let top = f.at(x0, y0) + ax * (f.at(x1, y0) - f.at(x0, y0));
    let bot = f.at(x0, y1) + ax * (f.at(x1, y1) - f.at(x0, y1));
    top + ay * (bot - top)
}

/// Deterministic test clip. `translate` moves a seeded texture right by
/// `shift_px` per frame, so frame t+1 equals frame t warped by (-shift, 0).
pub fn synth_clip(kind: SynthKind, n_frames: usize, h: usize, w: usize, shift_px: f64, seed: u64) -> Result<Clip> {
    if h == 0 || w == 0 {
        return Err(Error::invalid(format!("synth_clip: dims {w}x{h} must be positive")));
    }
    if n_frames < 3 {
        return Err(Error::invalid(format!(
            "synth_clip: need at least 3 frames, got {n_frames}"
        )));
    }
    if !shift_px.is_finite() {
        return Err(Error::invalid("synth_clip: shift must be finite"));
    }
    let frames = match kind {
        SynthKind::Still => {
            let tex = smooth_texture(w, h, seed);
            vec![tex; n_frames]
        }
        SynthKind::Ramp => {
            let denom = (w + h).saturating_sub(2).max(1) as f64;
            let data = (0..h)
                .flat_map(|y| (0..w).map(move |x| (16.0 + 223.0 * (x + y) as f64 / denom).round()))
                .collect();
            vec![Frame::new(w, h, data)?; n_frames]
        }
        SynthKind::Translate => {
            let travel = (shift_px.abs() * (n_frames - 1) as f64).ceil() as usize;
            let canvas = smooth_texture(w + travel + 1, h, seed);
            let origin = if shift_px > 0.0 { travel as f64 } else { 0.0 };
            (0..n_frames)
                .map(|t| {
                    let off = origin - t as f64 * shift_px;
                    let data = (0..h)
                        .flat_map(|y| {
                            let canvas = &canvas;
                            (0..w).map(move |x| sample_clamped(canvas, x as f64 + off, y as f64))
                        })
                        .collect();
                    Frame::new(w, h, data)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Clip::new(frames, Role::Raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::psnr;

    fn fixture() -> Frame {
        smooth_texture(32, 32, 11)
    }

    #[test]
    fn dct_round_trip_is_lossless() {
        let basis = dct_basis(8);
        let block: Vec<f64> = (0..64).map(|i| ((i * 37) % 255) as f64).collect();
        let rec = idct2(&dct2(&block, &basis, 8), &basis, 8);
        for (a, b) in block.iter().zip(&rec) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn unit_step_is_nearly_lossless() {
        let f = fixture();
        let d = degrade_frame(&f, 1.0, 8).unwrap();
        assert!(psnr(&f, &d).unwrap() >= 50.0);
    }

    #[test]
    fn constant_frame_stays_constant() {
        for &q in &[1.0, 7.0, 24.0, 56.0] {
            let f = Frame::filled(16, 16, 100.0);
            let d = degrade_frame(&f, q, 8).unwrap();
            let v = d.data()[0];
            assert!(d.data().iter().all(|&x| x == v), "q={q}");
            // DC coefficient is 8·v; one rounding step moves v by at most q/16
            assert!((v - 100.0).abs() <= q / 16.0 + 0.5, "q={q} v={v}");
            let again = degrade_frame(&d, q, 8).unwrap();
            assert!((again.data()[0] - v).abs() <= q / 16.0 + 0.5);
        }
    }

    #[test]
    fn coarser_step_loses_more() {
        let f = fixture();
        let p16 = psnr(&f, &degrade_frame(&f, 16.0, 8).unwrap()).unwrap();
        let p64 = psnr(&f, &degrade_frame(&f, 64.0, 8).unwrap()).unwrap();
        assert!(p16 > p64, "{p16} vs {p64}");
    }

    #[test]
    fn rejects_bad_step_and_dims() {
        let f = fixture();
        assert!(degrade_frame(&f, 0.5, 8).is_err());
        assert!(degrade_frame(&Frame::filled(12, 16, 0.0), 4.0, 8).is_err());
    }

    #[test]
    fn labels_follow_period() {
        let clip = synth_clip(SynthKind::Translate, 9, 16, 16, 1.0, 3).unwrap();
        let cfg = DegradeConfig {
            period: 4,
            ..Preset::Q37.config()
        };
        let d = degrade_clip(&clip, &cfg).unwrap();
        let hqf: Vec<usize> = (0..9).filter(|&i| d.labels[i] == Label::Hqf).collect();
        assert_eq!(hqf, vec![0, 4, 8]);
        assert_eq!(d.role, Role::Degraded);
    }

    #[test]
    fn degrade_clip_rejects_empty_and_non_raw() {
        let cfg = DegradeConfig::default();
        let empty = Clip::new(Vec::new(), Role::Raw).unwrap();
        assert!(degrade_clip(&empty, &cfg).is_err());
        let clip = synth_clip(SynthKind::Still, 3, 8, 8, 0.0, 1).unwrap();
        let d = degrade_clip(&clip, &cfg).unwrap();
        assert!(degrade_clip(&d, &cfg).is_err());
    }

    #[test]
    fn equal_steps_give_uniform_quality() {
        let clip = synth_clip(SynthKind::Translate, 12, 32, 32, 1.0, 5).unwrap();
        let cfg = DegradeConfig {
            q_low: 40.0,
            q_high: 40.0,
            ..DegradeConfig::default()
        };
        let d = degrade_clip(&clip, &cfg).unwrap();
        let (mut h, mut l) = (Vec::new(), Vec::new());
        for i in 0..clip.len() {
            let p = psnr(&clip.frames[i], &d.frames[i]).unwrap();
            if d.labels[i] == Label::Hqf {
                h.push(p)
            } else {
                l.push(p)
            }
        }
        let mh = h.iter().sum::<f64>() / h.len() as f64;
        let ml = l.iter().sum::<f64>() / l.len() as f64;
        assert!((mh - ml).abs() < 0.5, "{mh} vs {ml}");
    }

    #[test]
    fn psnr_peaks_at_hqf_positions() {
        let clip = synth_clip(SynthKind::Translate, 13, 32, 32, 1.0, 8).unwrap();
        let d = degrade_clip(&clip, &Preset::Q37.config()).unwrap();
        let p: Vec<f64> = (0..13).map(|i| psnr(&clip.frames[i], &d.frames[i]).unwrap()).collect();
        for i in (0..13).step_by(4) {
            for j in 0..13 {
                if j % 4 != 0 {
                    assert!(p[i] > p[j], "hqf {i} ({}) vs lqf {j} ({})", p[i], p[j]);
                }
            }
        }
    }

    #[test]
    fn synth_still_frames_identical() {
        let c = synth_clip(SynthKind::Still, 5, 16, 16, 0.0, 2).unwrap();
        assert!(c.frames.windows(2).all(|w| w[0] == w[1]));
        let r = synth_clip(SynthKind::Ramp, 3, 8, 8, 0.0, 2).unwrap();
        assert!(r.frames[0].at(7, 7) > r.frames[0].at(0, 0));
    }

    #[test]
    fn synth_is_deterministic_and_checks_args() {
        let a = synth_clip(SynthKind::Translate, 4, 16, 16, 2.0, 9).unwrap();
        let b = synth_clip(SynthKind::Translate, 4, 16, 16, 2.0, 9).unwrap();
        assert_eq!(a, b);
        let c = synth_clip(SynthKind::Translate, 4, 16, 16, 2.0, 10).unwrap();
        assert_ne!(a, c);
        assert!(synth_clip(SynthKind::Still, 2, 16, 16, 0.0, 1).is_err());
        assert!(synth_clip(SynthKind::Still, 3, 0, 16, 0.0, 1).is_err());
    }

    #[test]
    fn translate_matches_uniform_warp() {
        use crate::engine::{Graph, Shape};
        let c = synth_clip(SynthKind::Translate, 3, 16, 16, 2.0, 4).unwrap();
        let mut g = Graph::new();
        let img = g
            .constant(Shape::new(1, 1, 16, 16), c.frames[0].data().to_vec())
            .unwrap();
        let mut flow = vec![-2.0; 256];
        flow.extend(vec![0.0; 256]);
        let fl = g.constant(Shape::new(1, 2, 16, 16), flow).unwrap();
        let warped = g.bilinear_sample(img, fl).unwrap();
        let out = g.data(warped);
        for y in 0..16 {
            for x in 2..16 {
                assert_eq!(out[y * 16 + x], c.frames[1].at(x, y));
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn doubling_step_lowers_psnr(q in 1.0f64..60.0) {
            // small step changes can land coefficients on better grid points,
            // so only a doubling is guaranteed to lose quality
            let f = fixture();
            let a = psnr(&f, &degrade_frame(&f, q, 8).unwrap()).unwrap();
            let b = psnr(&f, &degrade_frame(&f, 2.0 * q, 8).unwrap()).unwrap();
            proptest::prop_assert!(b < a, "q={} -> {}, 2q -> {}", q, a, b);
        }
    }
}
