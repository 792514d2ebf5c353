//! SVG figures: synthetic beats drawn over the real per-sample distribution,
//! a light min-max band and a darker interquartile band.

use std::path::Path;

use anyhow::{anyhow, Result};
use plotters::prelude::*;

/// Per-sample min, first quartile, third quartile and max.
pub fn bands(real: &[&[f64]]) -> Option<Vec<[f64; 4]>> {
    let len = real.first()?.len();
    let mut col = Vec::with_capacity(real.len());
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        col.clear();
        col.extend(real.iter().map(|b| b[i]));
        col.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (col.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            col[lo] + (col[hi] - col[lo]) * (pos - lo as f64)
        };
        out.push([col[0], q(0.25), q(0.75), col[col.len() - 1]]);
    }
    Some(out)
}

pub struct Figure<'a> {
    pub real: Vec<&'a [f64]>,
    pub lines: Vec<(&'a [f64], RGBColor)>,
    /// Shaded sample range, e.g. an imputation gap.
    pub highlight: Option<(usize, usize)>,
}

pub const SYNTH: RGBColor = RGBColor(200, 30, 30);
pub const TRUTH: RGBColor = RGBColor(20, 20, 20);
pub const CONTEXT: RGBColor = RGBColor(30, 90, 200);

pub fn draw(path: &Path, fig: &Figure<'_>) -> Result<()> {
    let len = fig.lines.iter().map(|(l, _)| l.len()).chain(fig.real.first().map(|r| r.len())).max().unwrap_or(0);
    if len == 0 {
        return Err(anyhow!("nothing to plot"));
    }
    let root = SVGBackend::new(path, (720, 360)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let mut chart = ChartBuilder::on(&root).margin(12).build_cartesian_2d(0f64..(len - 1) as f64, -0.05f64..1.05).map_err(|e| anyhow!("{e}"))?;
    let err = |e: DrawingAreaErrorKind<_>| anyhow!("{e}");
    if let Some((a, b)) = fig.highlight {
        chart
            .draw_series(std::iter::once(Rectangle::new([(a as f64, -0.05), (b as f64, 1.05)], RGBColor(255, 236, 200).filled())))
            .map_err(err)?;
    }
    if let Some(band) = bands(&fig.real) {
        for (lo, hi, shade) in [(0, 3, RGBColor(225, 225, 225)), (1, 2, RGBColor(175, 175, 175))] {
            let mut pts: Vec<(f64, f64)> = band.iter().enumerate().map(|(i, q)| (i as f64, q[hi])).collect();
            pts.extend(band.iter().enumerate().rev().map(|(i, q)| (i as f64, q[lo])));
            chart.draw_series(std::iter::once(Polygon::new(pts, shade.filled()))).map_err(err)?;
        }
    }
    for (line, color) in &fig.lines {
        chart
            .draw_series(LineSeries::new(line.iter().enumerate().map(|(i, &v)| (i as f64, v)), color.stroke_width(1)))
            .map_err(err)?;
    }
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_quantiles() {
        let a = [0.0, 1.0];
        let b = [1.0, 1.0];
        let c = [2.0, 1.0];
        let d = [3.0, 1.0];
        let q = bands(&[&a, &b, &c, &d]).unwrap();
        assert_eq!(q[0], [0.0, 0.75, 2.25, 3.0]);
        assert_eq!(q[1], [1.0; 4]);
    }

    #[test]
    fn writes_svg() {
        let dir = tempfile::tempdir().unwrap();
        let real = [vec![0.2; 10], vec![0.6; 10]];
        let synth = vec![0.4; 10];
        let fig = Figure { real: real.iter().map(Vec::as_slice).collect(), lines: vec![(&synth, SYNTH)], highlight: Some((2, 5)) };
        let path = dir.path().join("f.svg");
        draw(&path, &fig).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("<svg"));
    }
}
