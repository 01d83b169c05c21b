//! PGM and raw 4:2:0 frame I/O, clip directories and the labels sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use crate::clip::{quantize_pixel, Clip, Frame, Label, Role};
use crate::error::{Error, Result};

/// Frames are padded to a multiple of this on load (flow pyramid depth).
pub const PAD_MULTIPLE: usize = 4;
pub const LABELS_FILE: &str = "labels.csv";
pub const DEFAULT_PATTERN: &str = "frame_{:04}.pgm";

/// Where a clip lives on disk. `count: None` loads every contiguous frame
/// from index 0; `dims: None` accepts whatever the first frame has.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipManifest {
    pub dir: PathBuf,
    pub pattern: String,
    pub dims: Option<(usize, usize)>,
    pub count: Option<usize>,
    pub role: Role,
}

impl ClipManifest {
    pub fn new(dir: impl Into<PathBuf>, role: Role) -> Self {
        ClipManifest {
            dir: dir.into(),
            pattern: DEFAULT_PATTERN.to_string(),
            dims: None,
            count: None,
            role,
        }
    }

    /// Path of frame `index`. The pattern holds one `{}` or `{:0N}` field.
    pub fn frame_path(&self, index: usize) -> Result<PathBuf> {
        let start = self
            .pattern
            .find('{')
            .ok_or_else(|| Error::Config(format!("frame pattern {:?} has no index field", self.pattern)))?;
        let end = self.pattern[start..]
            .find('}')
            .map(|e| start + e)
            .ok_or_else(|| Error::Config(format!("frame pattern {:?} is unterminated", self.pattern)))?;
        let spec = &self.pattern[start + 1..end];
        let width = match spec {
            "" => 0,
            s if s.starts_with(":0") => s[2..]
                .parse()
                .map_err(|_| Error::Config(format!("bad width in frame pattern {:?}", self.pattern)))?,
            _ => return Err(Error::Config(format!("unsupported frame pattern {:?}", self.pattern))),
        };
        let name = format!(
            "{}{:0width$}{}",
            &self.pattern[..start],
            index,
            &self.pattern[end + 1..]
        );
        Ok(self.dir.join(name))
    }
}

fn skip_ws_and_comments(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        match bytes[*pos] {
            b'#' => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            c if c.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
}

fn header_int(bytes: &[u8], pos: &mut usize, path: &Path) -> Result<usize> {
    skip_ws_and_comments(bytes, pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(path, "malformed PGM header"))
}

/// Decodes a binary PGM (P5, maxval 255).
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Frame> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format(path, "unsupported format (expected binary PGM, P5)"));
    }
    let mut pos = 2;
    let w = header_int(bytes, &mut pos, path)?;
    let h = header_int(bytes, &mut pos, path)?;
    let maxval = header_int(bytes, &mut pos, path)?;
    if maxval != 255 {
        return Err(Error::format(
            path,
            format!("unsupported maxval {maxval} (expected 255)"),
        ));
    }
    if w == 0 || h == 0 {
        return Err(Error::format(path, "zero image dimension"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(path, "malformed PGM header"));
    }
    pos += 1;
    let pixels = &bytes[pos..];
    if pixels.len() < w * h {
        return Err(Error::format(
            path,
            format!("truncated pixel data: expected {} bytes, found {}", w * h, pixels.len()),
        ));
    }
    Frame::new(w, h, pixels[..w * h].iter().map(|&p| p as f64).collect())
}

/// Encodes with rounding half away from zero and clamping to 0..=255.
pub fn encode_pgm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend(frame.data().iter().map(|&v| quantize_pixel(v)));
    out
}

pub fn read_pgm(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, path)
}

pub fn write_pgm(path: &Path, frame: &Frame) -> Result<()> {
    fs::write(path, encode_pgm(frame)).map_err(|e| Error::io(path, e))
}

/// Pads every frame by edge replication to a multiple of `multiple`,
/// recording the original dims when padding was needed.
pub fn pad_clip(clip: &Clip, multiple: usize) -> Clip {
    let Some((w, h)) = clip.dims() else {
        return clip.clone();
    };
    let (pw, ph) = (w.div_ceil(multiple) * multiple, h.div_ceil(multiple) * multiple);
    if (pw, ph) == (w, h) {
        return clip.clone();
    }
    let mut out = clip.clone();
    out.frames = clip.frames.iter().map(|f| f.pad_to(pw, ph)).collect();
    out.original_dims = Some(clip.output_dims().expect("non-empty"));
    out
}

/// Loads the frames named by `manifest`, plus the labels sidecar when one
/// is present in the directory.
pub fn load_clip(manifest: &ClipManifest) -> Result<Clip> {
    if !manifest.dir.is_dir() {
        return Err(Error::io(
            &manifest.dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "clip directory not found"),
        ));
    }
    let mut frames: Vec<Frame> = Vec::new();
    let mut index = 0;
    loop {
        if manifest.count == Some(index) {
            break;
        }
        let path = manifest.frame_path(index)?;
        if manifest.count.is_none() && !path.exists() {
            break;
        }
        let f = read_pgm(&path)?;
        let expected = manifest.dims.or_else(|| frames.first().map(Frame::dims));
        if let Some((w, h)) = expected {
            if f.dims() != (w, h) {
                return Err(Error::format(
                    &path,
                    format!("frame is {}x{}, expected {w}x{h}", f.width(), f.height()),
                ));
            }
        }
        frames.push(f);
        index += 1;
    }
    if frames.is_empty() {
        return Err(Error::format(
            &manifest.frame_path(0)?,
            "no frames found matching the pattern",
        ));
    }
    let labels_path = manifest.dir.join(LABELS_FILE);
    let mut clip = if labels_path.exists() {
        let labels = read_labels(&labels_path)?;
        if labels.len() != frames.len() {
            return Err(Error::format(
                &labels_path,
                format!("{} labels for {} frames", labels.len(), frames.len()),
            ));
        }
        Clip::with_labels(frames, labels, manifest.role)?
    } else {
        Clip::new(frames, manifest.role)?
    };
    clip.role = manifest.role;
    Ok(pad_clip(&clip, PAD_MULTIPLE))
}

/// Writes frames cropped to their original dims, rounded and clamped, and
/// the labels sidecar. Returns every path written.
pub fn save_clip(clip: &Clip, manifest: &ClipManifest) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&manifest.dir).map_err(|e| Error::io(&manifest.dir, e))?;
    let mut written = Vec::new();
    for (i, f) in clip.cropped_frames()?.iter().enumerate() {
        let path = manifest.frame_path(i)?;
        write_pgm(&path, f)?;
        written.push(path);
    }
    let labels_path = manifest.dir.join(LABELS_FILE);
    write_labels(&labels_path, &clip.labels)?;
    written.push(labels_path);
    Ok(written)
}

/// Reads the Y planes of `count` planar 4:2:0 frames.
pub fn load_raw_y(path: &Path, width: usize, height: usize, count: usize) -> Result<Clip> {
    if width == 0 || height == 0 || !width.is_multiple_of(2) || !height.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "4:2:0 frames need positive even dims, got {width}x{height}"
        )));
    }
    let luma = width * height;
    let frame_bytes = luma + luma / 2;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = frame_bytes * count;
    if bytes.len() < expected {
        return Err(Error::format(
            path,
            format!(
                "file too short: expected at least {expected} bytes, found {}",
                bytes.len()
            ),
        ));
    }
    let frames = (0..count)
        .map(|i| {
            let y = &bytes[i * frame_bytes..i * frame_bytes + luma];
            Frame::new(width, height, y.iter().map(|&p| p as f64).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pad_clip(&Clip::new(frames, Role::Raw)?, PAD_MULTIPLE))
}

pub fn labels_to_csv(labels: &[Label]) -> String {
    let mut s = String::from("frame,label\n");
    for (i, l) in labels.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    s
}

pub fn write_labels(path: &Path, labels: &[Label]) -> Result<()> {
    fs::write(path, labels_to_csv(labels)).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<Label>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("frame,label") {
        return Err(Error::format(path, "labels file lacks the frame,label header"));
    }
    let mut labels = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let (idx, label) = line
            .split_once(',')
            .ok_or_else(|| Error::format(path, format!("bad labels row {line:?}")))?;
        if idx.trim().parse::<usize>().ok() != Some(labels.len()) {
            return Err(Error::format(path, format!("labels row {line:?} is out of order")));
        }
        labels.push(label.parse().map_err(|e: Error| Error::format(path, e.to_string()))?);
    }
    Ok(labels)
}
