//! Self-contained SVG charts: an effects plot (model-implied mean accuracy
//! with 95% confidence intervals for every architecture × train × test
//! cell) and a duration plot (accuracy per segment-duration bucket, one
//! line per architecture, always exactly four buckets on the x axis).

use crate::artifacts::Meta;
use std::fmt::Write as _;
use trp_core::analysis::CellMean;
use trp_core::corpus::DurationBucket;

const SERIES_COLORS: [&str; 5] = ["#4c78a8", "#f58518", "#54a24b", "#e45756", "#b279a2"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Vertical pixel position of value `v` inside a frame spanning
/// `[ymin, ymax]` between pixel rows `top` and `top + height`.
fn y_px(v: f64, ymin: f64, ymax: f64, top: f64, height: f64) -> f64 {
    let span = (ymax - ymin).max(1e-12);
    top + height * (1.0 - (v - ymin) / span)
}

fn open_svg(meta: &Meta, width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\">\n<!-- {} -->\n\
         <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n",
        esc(&meta.comment_line())
    )
}

/// One architecture's accuracy over the four duration buckets; a `None`
/// entry means no test records fell in that bucket.
#[derive(Debug, Clone)]
pub struct DurationSeries {
    pub architecture: String,
    pub points: [Option<(f64, usize)>; 4],
}

/// Effects plot: one panel per test setting; within a panel, architectures
/// group along the x axis and train settings offset within each group.
pub fn effects_svg(meta: &Meta, cells: &[CellMean]) -> String {
    let mut tests: Vec<String> = cells.iter().map(|c| c.test_setting.as_str().to_string()).collect();
    tests.sort();
    tests.dedup();
    let mut trains: Vec<String> = cells.iter().map(|c| c.train_setting.as_str().to_string()).collect();
    trains.sort();
    trains.dedup();
    let mut archs: Vec<String> = cells.iter().map(|c| c.architecture.as_str().to_string()).collect();
    archs.sort();
    archs.dedup();

    let (width, height) = (980.0, 430.0);
    let (left, right, top, bottom) = (64.0, 18.0, 44.0, 92.0);
    let panels = tests.len().max(1) as f64;
    let gap = 26.0;
    let panel_w = (width - left - right - gap * (panels - 1.0)) / panels;
    let frame_h = height - top - bottom;

    let lo = cells.iter().map(|c| c.ci_low).fold(f64::INFINITY, f64::min);
    let hi = cells.iter().map(|c| c.ci_high).fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.08).max(0.01);
    let (ymin, ymax) = (lo - pad, hi + pad);

    let mut svg = open_svg(meta, width, height);
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"22\" font-size=\"15\" text-anchor=\"middle\">Model-implied accuracy (mean and 95% CI)</text>\n",
        width / 2.0
    );
    // Y axis labels on the far left.
    for i in 0..=4 {
        let v = ymin + (ymax - ymin) * i as f64 / 4.0;
        let y = y_px(v, ymin, ymax, top, frame_h);
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\">{:.2}</text>\n",
            left - 8.0,
            y + 4.0,
            v
        );
    }

    for (pi, test) in tests.iter().enumerate() {
        let x0 = left + pi as f64 * (panel_w + gap);
        let _ = write!(
            svg,
            "<rect x=\"{x0:.1}\" y=\"{top:.1}\" width=\"{panel_w:.1}\" height=\"{frame_h:.1}\" \
             fill=\"none\" stroke=\"#999\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">test {}</text>\n",
            x0 + panel_w / 2.0,
            top - 8.0,
            esc(test)
        );
        for i in 0..=4 {
            let v = ymin + (ymax - ymin) * i as f64 / 4.0;
            let y = y_px(v, ymin, ymax, top, frame_h);
            let _ = write!(
                svg,
                "<line x1=\"{x0:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#e5e5e5\"/>\n",
                x0 + panel_w
            );
        }
        let group_w = panel_w / archs.len().max(1) as f64;
        for (ai, arch) in archs.iter().enumerate() {
            let gx = x0 + ai as f64 * group_w;
            let _ = write!(
                svg,
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
                gx + group_w / 2.0,
                top + frame_h + 16.0,
                esc(arch)
            );
            for (ti, train) in trains.iter().enumerate() {
                let Some(cell) = cells.iter().find(|c| {
                    c.test_setting.as_str() == *test
                        && c.train_setting.as_str() == *train
                        && c.architecture.as_str() == *arch
                }) else {
                    continue;
                };
                let x = gx + group_w * (ti as f64 + 1.0) / (trains.len() as f64 + 1.0);
                let color = SERIES_COLORS[ti % SERIES_COLORS.len()];
                let (yl, yh, ym) = (
                    y_px(cell.ci_low, ymin, ymax, top, frame_h),
                    y_px(cell.ci_high, ymin, ymax, top, frame_h),
                    y_px(cell.mean, ymin, ymax, top, frame_h),
                );
                let _ = write!(
                    svg,
                    "<line x1=\"{x:.1}\" y1=\"{yl:.1}\" x2=\"{x:.1}\" y2=\"{yh:.1}\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n\
                     <line x1=\"{:.1}\" y1=\"{yl:.1}\" x2=\"{:.1}\" y2=\"{yl:.1}\" stroke=\"{color}\"/>\n\
                     <line x1=\"{:.1}\" y1=\"{yh:.1}\" x2=\"{:.1}\" y2=\"{yh:.1}\" stroke=\"{color}\"/>\n\
                     <circle cx=\"{x:.1}\" cy=\"{ym:.1}\" r=\"3.2\" fill=\"{color}\"/>\n",
                    x - 3.0,
                    x + 3.0,
                    x - 3.0,
                    x + 3.0
                );
            }
        }
    }

    // Legend: train settings.
    let mut lx = left;
    let ly = height - 40.0;
    let _ = write!(
        svg,
        "<text x=\"{lx:.1}\" y=\"{ly:.1}\" font-size=\"12\">train:</text>\n"
    );
    lx += 46.0;
    for (ti, train) in trains.iter().enumerate() {
        let color = SERIES_COLORS[ti % SERIES_COLORS.len()];
        let _ = write!(
            svg,
            "<circle cx=\"{lx:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"{color}\"/>\n\
             <text x=\"{:.1}\" y=\"{ly:.1}\" font-size=\"12\">{}</text>\n",
            ly - 4.0,
            lx + 9.0,
            esc(train)
        );
        lx += 30.0 + 7.0 * train.len() as f64;
    }
    svg.push_str("</svg>\n");
    svg
}

/// Duration plot: accuracy per segment-duration bucket, one line per
/// architecture. All four buckets are always drawn on the x axis.
pub fn duration_svg(meta: &Meta, series: &[DurationSeries]) -> String {
    let (width, height) = (660.0, 420.0);
    let (left, right, top, bottom) = (64.0, 18.0, 44.0, 96.0);
    let frame_w = width - left - right;
    let frame_h = height - top - bottom;

    let values: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().flatten().map(|&(v, _)| v))
        .collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if values.is_empty() { (0.0, 1.0) } else { (lo, hi) };
    let pad = ((hi - lo) * 0.1).max(0.01);
    let (ymin, ymax) = (lo - pad, hi + pad);

    let buckets = [
        DurationBucket::UpToHalf,
        DurationBucket::HalfToOne,
        DurationBucket::OneToTwo,
        DurationBucket::OverTwo,
    ];
    let x_of = |b: usize| left + frame_w * (b as f64 + 0.5) / 4.0;

    let mut svg = open_svg(meta, width, height);
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"22\" font-size=\"15\" text-anchor=\"middle\">Accuracy by segment duration</text>\n\
         <rect x=\"{left}\" y=\"{top}\" width=\"{frame_w:.1}\" height=\"{frame_h:.1}\" fill=\"none\" stroke=\"#999\"/>\n",
        width / 2.0
    );
    for i in 0..=4 {
        let v = ymin + (ymax - ymin) * i as f64 / 4.0;
        let y = y_px(v, ymin, ymax, top, frame_h);
        let _ = write!(
            svg,
            "<line x1=\"{left}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#e5e5e5\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\">{:.2}</text>\n",
            left + frame_w,
            left - 8.0,
            y + 4.0,
            v
        );
    }
    for (bi, bucket) in buckets.iter().enumerate() {
        let x = x_of(bi);
        let _ = write!(
            svg,
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\" class=\"bucket-label\">{}</text>\n",
            top + frame_h + 18.0,
            esc(bucket.name())
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">segment duration (s)</text>\n",
        left + frame_w / 2.0,
        top + frame_h + 38.0
    );

    for (si, s) in series.iter().enumerate() {
        let color = SERIES_COLORS[si % SERIES_COLORS.len()];
        let mut path = String::new();
        let mut pen_down = false;
        for (bi, point) in s.points.iter().enumerate() {
            match point {
                Some((v, _)) => {
                    let (x, y) = (x_of(bi), y_px(*v, ymin, ymax, top, frame_h));
                    let _ = write!(path, "{}{x:.1},{y:.1} ", if pen_down { "L" } else { "M" });
                    pen_down = true;
                    let _ = write!(
                        svg,
                        "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"3.2\" fill=\"{color}\"/>\n"
                    );
                }
                None => pen_down = false,
            }
        }
        if path.contains('L') {
            let _ = write!(
                svg,
                "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
                path.trim_end()
            );
        }
    }

    let mut lx = left;
    let ly = height - 40.0;
    for (si, s) in series.iter().enumerate() {
        let color = SERIES_COLORS[si % SERIES_COLORS.len()];
        let _ = write!(
            svg,
            "<circle cx=\"{lx:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"{color}\"/>\n\
             <text x=\"{:.1}\" y=\"{ly:.1}\" font-size=\"12\">{}</text>\n",
            ly - 4.0,
            lx + 9.0,
            esc(&s.architecture)
        );
        lx += 34.0 + 8.0 * s.architecture.len() as f64;
    }
    svg.push_str("</svg>\n");
    svg
}
