//! PSNR / ΔPSNR metrics, per-frame reports, error maps and the quality
//! fluctuation chart.

use std::fmt::Write as _;
use std::path::Path;

use crate::clip::{Clip, Frame, Label};
use crate::error::{Error, Result};
use crate::net::Model;
use crate::trainer::{route_frame, Variant};

/// Returned for identical frames.
pub const PSNR_CAP: f64 = 100.0;
const PEAK: f64 = 255.0;

pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    a.same_dims(b, "mse")?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data().len() as f64)
}

/// 10·log10(255² / MSE), capped at [`PSNR_CAP`].
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (PEAK * PEAK / m).log10()).min(PSNR_CAP))
}

pub fn delta_psnr(raw: &Frame, compressed: &Frame, enhanced: &Frame) -> Result<f64> {
    Ok(psnr(enhanced, raw)? - psnr(compressed, raw)?)
}

/// Per-pixel |a − b|, rounded and clamped to 8 bits.
pub fn error_map(a: &Frame, b: &Frame) -> Result<Frame> {
    a.same_dims(b, "error_map")?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs().round().min(255.0))
        .collect();
    Frame::new(a.width(), a.height(), data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub frame: usize,
    pub label: Label,
    pub model: Variant,
    pub psnr_in: f64,
    pub psnr_out: f64,
    pub delta_psnr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricsReport {
    pub fn mean_delta(&self) -> Option<f64> {
        mean(self.rows.iter().map(|r| r.delta_psnr))
    }

    pub fn mean_delta_for(&self, label: Label) -> Option<f64> {
        mean(self.rows.iter().filter(|r| r.label == label).map(|r| r.delta_psnr))
    }

    pub fn mean_psnr_in(&self) -> Option<f64> {
        mean(self.rows.iter().map(|r| r.psnr_in))
    }

    pub fn mean_psnr_out(&self) -> Option<f64> {
        mean(self.rows.iter().map(|r| r.psnr_out))
    }

    /// Builds rows from aligned raw/degraded/enhanced clips. The label of
    /// each frame comes from the degraded clip and selects the model column.
    pub fn from_clips(raw: &Clip, degraded: &Clip, enhanced: &Clip) -> Result<Self> {
        raw.check_aligned(degraded, "evaluate")?;
        raw.check_aligned(enhanced, "evaluate")?;
        let r = raw.cropped_frames()?;
        let d = degraded.cropped_frames()?;
        let e = enhanced.cropped_frames()?;
        let rows = (0..raw.len())
            .map(|i| {
                let label = degraded.labels[i];
                let psnr_in = psnr(&d[i], &r[i])?;
                let psnr_out = psnr(&e[i], &r[i])?;
                Ok(MetricsRow {
                    frame: i,
                    label,
                    model: Variant::for_label(label),
                    psnr_in,
                    psnr_out,
                    delta_psnr: psnr_out - psnr_in,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MetricsReport { rows })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,label,model,psnr_in,psnr_out,delta_psnr\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{:.6},{:.6},{:.6}",
                r.frame, r.label, r.model, r.psnr_in, r.psnr_out, r.delta_psnr
            )
            .expect("write to string");
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Enhances every frame of `degraded` with the routed model and measures it
/// against `raw`.
pub fn evaluate_clip(
    raw: &Clip,
    degraded: &Clip,
    lqf: Option<&Model>,
    hqf: Option<&Model>,
    period: usize,
) -> Result<MetricsReport> {
    let enhanced = enhance_clip(degraded, lqf, hqf, period)?;
    let mut report = MetricsReport::from_clips(raw, degraded, &enhanced.clip)?;
    for (row, routed) in report.rows.iter_mut().zip(&enhanced.routes) {
        row.model = routed.model;
    }
    Ok(report)
}

/// One routing decision made while enhancing a clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RouteRecord {
    pub frame: usize,
    pub model: Variant,
    pub prev: usize,
    pub next: usize,
}

pub struct Enhanced {
    pub clip: Clip,
    pub routes: Vec<RouteRecord>,
}

/// Runs the routed model on every frame. Outputs are rounded to 8-bit
/// values like the decoded frames they replace.
pub fn enhance_clip(degraded: &Clip, lqf: Option<&Model>, hqf: Option<&Model>, period: usize) -> Result<Enhanced> {
    if degraded.is_empty() {
        return Err(Error::invalid("enhance: empty clip"));
    }
    if let (Some(a), Some(b)) = (lqf, hqf) {
        if a.config != b.config {
            return Err(Error::Checkpoint(
                "LQF and HQF models have different network configs".into(),
            ));
        }
    }
    let mut frames = Vec::with_capacity(degraded.len());
    let mut routes = Vec::with_capacity(degraded.len());
    for i in 0..degraded.len() {
        let r = route_frame(i, period, degraded.len())?;
        let model = match r.model {
            Variant::Lqf => lqf,
            Variant::Hqf => hqf,
            Variant::Mc => None,
        }
        .ok_or_else(|| Error::Checkpoint(format!("no {} model available for frame {i}", r.model)))?;
        let out = model.enhance(&degraded.frames[r.prev], &degraded.frames[i], &degraded.frames[r.next])?;
        frames.push(out.quantized());
        routes.push(RouteRecord {
            frame: i,
            model: r.model,
            prev: r.prev,
            next: r.next,
        });
    }
    let mut clip = Clip::with_labels(frames, degraded.labels.clone(), crate::clip::Role::Enhanced)?;
    clip.original_dims = degraded.original_dims;
    Ok(Enhanced { clip, routes })
}

/// Standalone SVG line chart of ΔPSNR per frame. Byte output depends only
/// on the report.
pub fn fluctuation_svg(report: &MetricsReport) -> Result<String> {
    if report.rows.is_empty() {
        return Err(Error::invalid("fluctuation plot: empty report"));
    }
    const W: f64 = 640.0;
    const H: f64 = 320.0;
    const M: f64 = 48.0;
    let n = report.rows.len();
    let peak = report
        .rows
        .iter()
        .map(|r| r.delta_psnr.abs())
        .fold(0.0, f64::max)
        .max(0.1);
    let x_of = |i: usize| {
        if n == 1 {
            W / 2.0
        } else {
            M + (W - 2.0 * M) * i as f64 / (n - 1) as f64
        }
    };
    let y_of = |v: f64| H / 2.0 - (H / 2.0 - M) * v / peak;
    let fmt = |v: f64| {
        // avoid "-0.00"
        let s = format!("{v:.2}");
        if s == "-0.00" {
            "0.00".to_string()
        } else {
            s
        }
    };

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<line id="axis-zero" x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-width="1"/>"#,
        fmt(M),
        fmt(y_of(0.0)),
        fmt(W - M),
        fmt(y_of(0.0))
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" font-family="sans-serif">ΔPSNR (dB), range ±{}</text>"#,
        fmt(M),
        fmt(M / 2.0),
        fmt(peak)
    )
    .unwrap();
    let points: Vec<String> = report
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{},{}", fmt(x_of(i)), fmt(y_of(r.delta_psnr))))
        .collect();
    writeln!(
        s,
        r#"<polyline id="delta-psnr" fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        points.join(" ")
    )
    .unwrap();
    for (i, r) in report.rows.iter().enumerate() {
        let fill = if r.label == Label::Hqf { "crimson" } else { "steelblue" };
        writeln!(
            s,
            r#"<circle cx="{}" cy="{}" r="3" fill="{fill}"><title>frame {} {} {:.6} dB</title></circle>"#,
            fmt(x_of(i)),
            fmt(y_of(r.delta_psnr)),
            r.frame,
            r.label,
            r.delta_psnr
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn fluctuation_plot(report: &MetricsReport, path: &Path) -> Result<()> {
    let svg = fluctuation_svg(report)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(v: f64) -> Frame {
        Frame::filled(8, 8, v)
    }

    #[test]
    fn psnr_reference_values() {
        assert_eq!(psnr(&flat(10.0), &flat(10.0)).unwrap(), 100.0);
        assert!((psnr(&flat(0.0), &flat(255.0)).unwrap() - 0.0).abs() < 1e-3);
        let p = psnr(&flat(100.0), &flat(116.0)).unwrap();
        // 10·log10(65025 / 256)
        assert!((p - 24.048).abs() < 1e-3, "{p}");
        assert!(psnr(&flat(0.0), &Frame::filled(4, 8, 0.0)).is_err());
    }

    #[test]
    fn delta_cases() {
        let raw = flat(100.0);
        let c = flat(110.0);
        assert_eq!(delta_psnr(&raw, &c, &c).unwrap(), 0.0);
        let d = delta_psnr(&raw, &c, &raw).unwrap();
        assert!((d - (100.0 - psnr(&c, &raw).unwrap())).abs() < 1e-12);
    }

    #[test]
    fn error_map_props() {
        let a = crate::codec::smooth_texture(8, 8, 1);
        let b = crate::codec::smooth_texture(8, 8, 2);
        assert!(error_map(&a, &a).unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(error_map(&a, &b).unwrap(), error_map(&b, &a).unwrap());
        let big = error_map(&flat(-300.0), &flat(300.0)).unwrap();
        assert!(big.data().iter().all(|&v| v == 255.0));
    }

    fn report(deltas: &[f64]) -> MetricsReport {
        MetricsReport {
            rows: deltas
                .iter()
                .enumerate()
                .map(|(i, &d)| MetricsRow {
                    frame: i,
                    label: if i % 4 == 0 { Label::Hqf } else { Label::Lqf },
                    model: if i % 4 == 0 { Variant::Hqf } else { Variant::Lqf },
                    psnr_in: 30.0,
                    psnr_out: 30.0 + d,
                    delta_psnr: d,
                })
                .collect(),
        }
    }

    #[test]
    fn aggregates_are_row_means() {
        let r = report(&[0.5, 0.1, 0.2, 0.3, 0.9]);
        let m = r.mean_delta().unwrap();
        assert!((m - (0.5 + 0.1 + 0.2 + 0.3 + 0.9) / 5.0).abs() <= f64::EPSILON * m);
        assert!((r.mean_delta_for(Label::Hqf).unwrap() - 0.7).abs() < 1e-15);
        assert!(MetricsReport::default().mean_delta().is_none());
    }

    #[test]
    fn csv_layout() {
        let csv = report(&[0.25]).to_csv();
        assert_eq!(
            csv,
            "frame,label,model,psnr_in,psnr_out,delta_psnr\n0,HQF,hqf,30.000000,30.250000,0.250000\n"
        );
    }

    #[test]
    fn plot_vertices_and_determinism() {
        let r = report(&[0.1; 15]);
        let svg = fluctuation_svg(&r).unwrap();
        let line = svg.lines().find(|l| l.contains("delta-psnr")).unwrap();
        let pts = line.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
        assert_eq!(pts.split(' ').count(), 15);
        assert_eq!(svg, fluctuation_svg(&r).unwrap());
        assert!(fluctuation_svg(&MetricsReport::default()).is_err());
    }

    #[test]
    fn zero_report_is_flat_on_axis() {
        let svg = fluctuation_svg(&report(&[0.0; 6])).unwrap();
        let axis = svg.lines().find(|l| l.contains("axis-zero")).unwrap();
        let y = axis
            .split("y1=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap()
            .to_string();
        let line = svg.lines().find(|l| l.contains("delta-psnr")).unwrap();
        let pts = line.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
        for p in pts.split(' ') {
            assert_eq!(p.split(',').nth(1).unwrap(), y);
        }
    }
}
