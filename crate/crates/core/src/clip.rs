//! Single-channel frames and labelled clips.

use std::fmt;
use std::str::FromStr;

use crate::engine::{Graph, Shape, Var};
use crate::error::{check_dim, Error, Result};

/// Frame values are stored in 8-bit units (0..=255); network tensors carry
/// them multiplied by this factor. A power of two keeps the conversion exact.
pub const PIXEL_SCALE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("frame dims {width}x{height} must be positive")));
        }
        check_dim("frame", "data length", data.len(), width * height)?;
        Ok(Frame { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Frame {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_dims(&self, other: &Frame, op: &'static str) -> Result<()> {
        check_dim(op, "width", other.width, self.width)?;
        check_dim(op, "height", other.height, self.height)
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Frame> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::invalid(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds frame {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + width]);
        }
        Frame::new(width, height, data)
    }

    /// Edge-replicating pad on the right and bottom.
    pub fn pad_to(&self, width: usize, height: usize) -> Frame {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = y.min(self.height - 1);
            for x in 0..width {
                data.push(self.data[sy * self.width + x.min(self.width - 1)]);
            }
        }
        Frame { width, height, data }
    }

    /// Rounded (half away from zero) and clamped to 0..=255.
    pub fn quantized(&self) -> Frame {
        Frame {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| quantize_pixel(v) as f64).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

pub fn quantize_pixel(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Stacks equally sized frames into an (n, 1, h, w) graph constant in
/// network units.
pub fn frames_to_var(g: &mut Graph, frames: &[&Frame]) -> Result<Var> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("frames_to_var: empty batch"))?;
    let mut data = Vec::with_capacity(frames.len() * first.data.len());
    for f in frames {
        first.same_dims(f, "frames_to_var")?;
        data.extend(f.data.iter().map(|v| v * PIXEL_SCALE));
    }
    g.constant(Shape::new(frames.len(), 1, first.height, first.width), data)
}

/// Splits an (n, 1, h, w) network-unit buffer back into frames.
pub fn var_to_frames(g: &Graph, v: Var) -> Result<Vec<Frame>> {
    let s = g.shape(v);
    check_dim("var_to_frames", "channels", s.c, 1)?;
    let p = s.plane();
    g.data(v)
        .chunks(p)
        .map(|chunk| Frame::new(s.w, s.h, chunk.iter().map(|x| x / PIXEL_SCALE).collect()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Hqf,
    Lqf,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Hqf => "HQF",
            Label::Lqf => "LQF",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "HQF" | "hqf" => Ok(Label::Hqf),
            "LQF" | "lqf" => Ok(Label::Lqf),
            other => Err(Error::invalid(format!("unknown frame label {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Raw,
    Degraded,
    Enhanced,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub frames: Vec<Frame>,
    pub labels: Vec<Label>,
    pub role: Role,
    /// Dimensions before padding, when the frames were padded on load.
    pub original_dims: Option<(usize, usize)>,
}

impl Clip {
    /// All frames labelled LQF until a degradation pass assigns labels.
    pub fn new(frames: Vec<Frame>, role: Role) -> Result<Self> {
        let labels = vec![Label::Lqf; frames.len()];
        Self::with_labels(frames, labels, role)
    }

    pub fn with_labels(frames: Vec<Frame>, labels: Vec<Label>, role: Role) -> Result<Self> {
        check_dim("clip", "label count", labels.len(), frames.len())?;
        if let Some(first) = frames.first() {
            for f in &frames[1..] {
                first.same_dims(f, "clip")?;
            }
        }
        Ok(Clip {
            frames,
            labels,
            role,
            original_dims: None,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// (width, height) of the stored frames.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.frames.first().map(Frame::dims)
    }

    /// Dimensions to report and save at.
    pub fn output_dims(&self) -> Option<(usize, usize)> {
        self.original_dims.or_else(|| self.dims())
    }

    /// Frames cropped back to their original dimensions.
    pub fn cropped_frames(&self) -> Result<Vec<Frame>> {
        let Some((w, h)) = self.output_dims() else {
            return Ok(Vec::new());
        };
        self.frames.iter().map(|f| f.crop(0, 0, w, h)).collect()
    }

    pub fn check_aligned(&self, other: &Clip, op: &'static str) -> Result<()> {
        check_dim(op, "frame count", other.len(), self.len())?;
        if let (Some(a), Some(b)) = (self.dims(), other.dims()) {
            check_dim(op, "width", b.0, a.0)?;
            check_dim(op, "height", b.1, a.1)?;
        }
        Ok(())
    }
}
