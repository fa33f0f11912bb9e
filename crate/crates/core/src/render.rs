//! Standalone SVG 1.1 data maps and training curves.
//!
//! Data-map axes: variability on x over [0, 0.5], confidence on y over
//! [0, 1]. The affine map from metric space to pixels is [`MapTransform`];
//! its parameters are also written into the SVG metadata comment.
//!
//! Region markers: easy-to-learn red triangles (`#d62728`), hard-to-learn
//! blue circles (`#1f77b4`), ambiguous black pluses (`#000000`), everything
//! else small grey dots (`#9e9e9e`). Fill opacity encodes the correctness
//! bin. Correctness bins are `B = min(max_bins, E + 1)` equal-width
//! intervals of [0, 1] (E is the largest `epochs_used` in the table), the
//! last one closed.

use std::fmt::Write as _;

use crate::carto::{Region, RegionAssignment};
use crate::dynamics::MetricsTable;
use crate::error::{Error, Result};
use crate::rng::{sample_indices, Stream};
use crate::trainer::CurveLog;

const SVG_NS: &str = "http://www.w3.org/2000/svg";
const XLINK_NS: &str = "http://www.w3.org/1999/xlink";

#[derive(Debug, Clone, PartialEq)]
pub struct MapStyle {
    pub sample_cap: usize,
    pub sample_seed: u64,
    pub max_bins: usize,
    pub width: u32,
    pub height: u32,
    /// Marginal histograms of variability (top) and confidence (right).
    pub histograms: bool,
}

impl Default for MapStyle {
    fn default() -> Self {
        MapStyle {
            sample_cap: 25_000,
            sample_seed: 0,
            max_bins: 5,
            width: 900,
            height: 640,
            histograms: false,
        }
    }
}

impl MapStyle {
    fn check(&self) -> Result<()> {
        if self.sample_cap < 1 {
            return Err(Error::InvalidArgument(
                "sample_cap must be at least 1".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument(
                "width and height must be positive".into(),
            ));
        }
        if self.max_bins < 1 {
            return Err(Error::InvalidArgument("max_bins must be at least 1".into()));
        }
        Ok(())
    }

    pub fn transform(&self) -> MapTransform {
        let right = if self.histograms { 250.0 } else { 190.0 };
        let top = if self.histograms { 110.0 } else { 50.0 };
        MapTransform {
            left: 70.0,
            right: self.width as f64 - right,
            top,
            bottom: self.height as f64 - 60.0,
        }
    }
}

/// Pixel box of the plot area. `x = left + v / 0.5 * (right - left)`,
/// `y = bottom - c * (bottom - top)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapTransform {
    pub left: f64,
    pub right: f64,
    pub top: f64,
    pub bottom: f64,
}

impl MapTransform {
    pub const MAX_VARIABILITY: f64 = 0.5;

    pub fn to_pixel(&self, variability: f64, confidence: f64) -> (f64, f64) {
        (
            self.left + variability / Self::MAX_VARIABILITY * (self.right - self.left),
            self.bottom - confidence * (self.bottom - self.top),
        )
    }

    pub fn from_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.left) / (self.right - self.left) * Self::MAX_VARIABILITY,
            (self.bottom - y) / (self.bottom - self.top),
        )
    }
}

/// Correctness bin edges, `bins + 1` values from 0 to 1.
pub fn correctness_bin_edges(max_epochs: u32, max_bins: usize) -> Vec<f64> {
    let bins = (max_epochs as usize + 1).min(max_bins).max(1);
    (0..=bins).map(|k| k as f64 / bins as f64).collect()
}

fn bin_of(correctness: f64, bins: usize) -> usize {
    ((correctness * bins as f64 + 1e-9).floor() as usize).min(bins - 1)
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn comment_safe(s: &str) -> String {
    s.replace("--", "- -")
}

fn region_style(region: Region) -> (&'static str, &'static str, &'static str) {
    // (symbol id, colour, paint attribute)
    match region {
        Region::EasyToLearn => ("m-easy", "#d62728", "fill"),
        Region::HardToLearn => ("m-hard", "#1f77b4", "fill"),
        Region::Ambiguous => ("m-ambiguous", "#000000", "stroke"),
        Region::Other => ("m-other", "#9e9e9e", "fill"),
    }
}

fn region_label(region: Region) -> &'static str {
    match region {
        Region::EasyToLearn => "easy-to-learn",
        Region::HardToLearn => "hard-to-learn",
        Region::Ambiguous => "ambiguous",
        Region::Other => "other",
    }
}

fn opacity(bin: usize, bins: usize) -> f64 {
    if bins == 1 {
        1.0
    } else {
        0.25 + 0.75 * bin as f64 / (bins - 1) as f64
    }
}

fn svg_open(out: &mut String, width: u32, height: u32) {
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        "<svg xmlns=\"{SVG_NS}\" xmlns:xlink=\"{XLINK_NS}\" version=\"1.1\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\">"
    );
    let _ = writeln!(
        out,
        "<rect width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>"
    );
}

fn axes(out: &mut String, t: &MapTransform, x_ticks: &[(f64, String)], y_ticks: &[(f64, String)]) {
    let _ = writeln!(
        out,
        "<rect class=\"frame\" x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#444444\"/>",
        t.left,
        t.top,
        t.right - t.left,
        t.bottom - t.top
    );
    for (x, label) in x_ticks {
        let _ = writeln!(
            out,
            "<line x1=\"{x:.2}\" y1=\"{b:.2}\" x2=\"{x:.2}\" y2=\"{b5:.2}\" stroke=\"#444444\"/><text x=\"{x:.2}\" y=\"{ty:.2}\" font-size=\"11\" text-anchor=\"middle\">{label}</text>",
            b = t.bottom,
            b5 = t.bottom + 5.0,
            ty = t.bottom + 18.0
        );
    }
    for (y, label) in y_ticks {
        let _ = writeln!(
            out,
            "<line x1=\"{l5:.2}\" y1=\"{y:.2}\" x2=\"{l:.2}\" y2=\"{y:.2}\" stroke=\"#444444\"/><text x=\"{tx:.2}\" y=\"{ty:.2}\" font-size=\"11\" text-anchor=\"end\">{label}</text>",
            l = t.left,
            l5 = t.left - 5.0,
            tx = t.left - 8.0,
            ty = y + 4.0
        );
    }
}

/// Scatter `metrics` as a data map. When the table exceeds
/// `style.sample_cap` rows, exactly `sample_cap` of them are drawn from the
/// map-sampling stream of `style.sample_seed`.
pub fn render_map(
    metrics: &MetricsTable,
    regions: &RegionAssignment,
    style: &MapStyle,
) -> Result<String> {
    style.check()?;
    let n = metrics.len();
    if n == 0 {
        return Err(Error::Empty("metrics table".into()));
    }
    let shown: Vec<usize> = if n > style.sample_cap {
        sample_indices(style.sample_seed, Stream::MapSample, n, style.sample_cap)
    } else {
        (0..n).collect()
    };
    let max_epochs = metrics
        .rows
        .iter()
        .map(|r| r.epochs_used)
        .max()
        .unwrap_or(1);
    let edges = correctness_bin_edges(max_epochs, style.max_bins);
    let bins = edges.len() - 1;
    let t = style.transform();

    let mut out = String::with_capacity(256 + shown.len() * 110);
    svg_open(&mut out, style.width, style.height);
    let edges_txt: Vec<String> = edges.iter().map(|e| format!("{e:.6}")).collect();
    let _ = writeln!(
        out,
        "<!-- cartograph-map tool={} run_id={} seed={} cap={} shown={} total={} bin_edges={} plot_box={},{},{},{} -->",
        crate::TOOL_VERSION,
        comment_safe(metrics.run_id().unwrap_or("unknown")),
        style.sample_seed,
        style.sample_cap,
        shown.len(),
        n,
        edges_txt.join(","),
        t.left,
        t.right,
        t.top,
        t.bottom
    );
    out.push_str(concat!(
        "<defs>\n",
        "<path id=\"m-easy\" d=\"M0,-4 L3.5,2.5 L-3.5,2.5 Z\"/>\n",
        "<circle id=\"m-hard\" r=\"3\"/>\n",
        "<path id=\"m-ambiguous\" d=\"M-4,0 H4 M0,-4 V4\" fill=\"none\" stroke-width=\"1.5\"/>\n",
        "<circle id=\"m-other\" r=\"2\"/>\n",
        "</defs>\n"
    ));

    let x_ticks: Vec<(f64, String)> = (0..=5)
        .map(|k| {
            (
                t.to_pixel(k as f64 * 0.1, 0.0).0,
                format!("{:.1}", k as f64 * 0.1),
            )
        })
        .collect();
    let y_ticks: Vec<(f64, String)> = (0..=5)
        .map(|k| {
            (
                t.to_pixel(0.0, k as f64 * 0.2).1,
                format!("{:.1}", k as f64 * 0.2),
            )
        })
        .collect();
    axes(&mut out, &t, &x_ticks, &y_ticks);
    let _ = writeln!(
        out,
        "<text class=\"axis-label\" x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\">variability</text>",
        (t.left + t.right) / 2.0,
        t.bottom + 40.0
    );
    let _ = writeln!(
        out,
        "<text class=\"axis-label\" x=\"18\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.2})\">confidence</text>",
        (t.top + t.bottom) / 2.0,
        (t.top + t.bottom) / 2.0
    );
    let title = format!("Data map ({} of {} instances)", shown.len(), n);
    let _ = writeln!(
        out,
        "<text class=\"title\" x=\"{:.2}\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">{}</text>",
        style.width as f64 / 2.0,
        xml_escape(&title)
    );

    if style.histograms {
        histograms(&mut out, metrics, &shown, &t);
    }

    out.push_str("<g class=\"markers\">\n");
    for &i in &shown {
        let row = &metrics.rows[i];
        let region = regions.get(&row.guid).unwrap_or(Region::Other);
        let (id, colour, paint) = region_style(region);
        let (x, y) = t.to_pixel(row.variability, row.confidence);
        let bin = bin_of(row.correctness, bins);
        let _ = writeln!(
            out,
            "<use class=\"pt\" xlink:href=\"#{id}\" x=\"{x:.2}\" y=\"{y:.2}\" {paint}=\"{colour}\" {paint}-opacity=\"{:.3}\" data-guid=\"{}\" data-bin=\"{bin}\"/>",
            opacity(bin, bins),
            xml_escape(&row.guid)
        );
    }
    out.push_str("</g>\n");

    let lx = t.right + if style.histograms { 80.0 } else { 20.0 };
    let mut ly = t.top + 10.0;
    out.push_str("<g class=\"legend\">\n");
    let _ = writeln!(
        out,
        "<text x=\"{lx:.2}\" y=\"{ly:.2}\" font-size=\"12\" font-weight=\"bold\">region</text>"
    );
    for region in Region::ALL {
        ly += 18.0;
        let (id, colour, paint) = region_style(region);
        let _ = writeln!(
            out,
            "<use xlink:href=\"#{id}\" x=\"{:.2}\" y=\"{:.2}\" {paint}=\"{colour}\"/><text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">{}</text>",
            lx + 5.0,
            ly - 4.0,
            lx + 16.0,
            ly,
            region_label(region)
        );
    }
    ly += 30.0;
    let _ = writeln!(out, "<text x=\"{lx:.2}\" y=\"{ly:.2}\" font-size=\"12\" font-weight=\"bold\">correctness</text>");
    for b in 0..bins {
        ly += 18.0;
        let close = if b + 1 == bins { "]" } else { ")" };
        let _ = writeln!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"#555555\" fill-opacity=\"{:.3}\"/><text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">[{:.2}, {:.2}{close}</text>",
            lx + 5.0,
            ly - 4.0,
            opacity(b, bins),
            lx + 16.0,
            ly,
            edges[b],
            edges[b + 1]
        );
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

fn histograms(out: &mut String, metrics: &MetricsTable, shown: &[usize], t: &MapTransform) {
    const BINS: usize = 20;
    let mut var_counts = [0usize; BINS];
    let mut conf_counts = [0usize; BINS];
    for &i in shown {
        let r = &metrics.rows[i];
        let vb =
            ((r.variability / MapTransform::MAX_VARIABILITY * BINS as f64) as usize).min(BINS - 1);
        let cb = ((r.confidence * BINS as f64) as usize).min(BINS - 1);
        var_counts[vb] += 1;
        conf_counts[cb] += 1;
    }
    let vmax = *var_counts.iter().max().unwrap_or(&1).max(&1) as f64;
    let cmax = *conf_counts.iter().max().unwrap_or(&1).max(&1) as f64;
    let bw = (t.right - t.left) / BINS as f64;
    let bh = (t.bottom - t.top) / BINS as f64;
    out.push_str("<g class=\"hist\" fill=\"#bbbbbb\">\n");
    for (k, &c) in var_counts.iter().enumerate() {
        let h = c as f64 / vmax * 50.0;
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{h:.2}\"/>",
            t.left + k as f64 * bw,
            t.top - 5.0 - h,
            bw - 1.0
        );
    }
    for (k, &c) in conf_counts.iter().enumerate() {
        let w = c as f64 / cmax * 50.0;
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{w:.2}\" height=\"{:.2}\"/>",
            t.right + 5.0,
            t.bottom - (k + 1) as f64 * bh,
            bh - 1.0
        );
    }
    out.push_str("</g>\n");
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveStyle {
    pub width: u32,
    pub height: u32,
}

impl Default for CurveStyle {
    fn default() -> Self {
        CurveStyle {
            width: 720,
            height: 440,
        }
    }
}

/// Train and validation accuracy per epoch. Epochs are labelled 1-based on
/// the x axis; y spans [0, 1].
pub fn render_curves(curves: &CurveLog, style: &CurveStyle) -> Result<String> {
    let n = curves.rows.len();
    if n == 0 {
        return Err(Error::Empty("curve log".into()));
    }
    let t = MapTransform {
        left: 60.0,
        right: style.width as f64 - 150.0,
        top: 40.0,
        bottom: style.height as f64 - 55.0,
    };
    let x_of = |i: usize| -> f64 {
        if n == 1 {
            (t.left + t.right) / 2.0
        } else {
            t.left + i as f64 / (n - 1) as f64 * (t.right - t.left)
        }
    };
    let y_of = |acc: f64| t.bottom - acc * (t.bottom - t.top);

    let mut out = String::new();
    svg_open(&mut out, style.width, style.height);
    let _ = writeln!(
        out,
        "<!-- cartograph-curves tool={} epochs={n} -->",
        crate::TOOL_VERSION
    );
    let step = n.div_ceil(10).max(1);
    let x_ticks: Vec<(f64, String)> = (0..n)
        .filter(|i| i % step == 0 || *i == n - 1)
        .map(|i| (x_of(i), (curves.rows[i].epoch + 1).to_string()))
        .collect();
    let y_ticks: Vec<(f64, String)> = (0..=5)
        .map(|k| (y_of(k as f64 * 0.2), format!("{:.1}", k as f64 * 0.2)))
        .collect();
    axes(&mut out, &t, &x_ticks, &y_ticks);
    let _ = writeln!(
        out,
        "<text class=\"axis-label\" x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\">epoch</text>",
        (t.left + t.right) / 2.0,
        t.bottom + 40.0
    );
    let _ = writeln!(
        out,
        "<text class=\"axis-label\" x=\"16\" y=\"{c:.2}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {c:.2})\">accuracy</text>",
        c = (t.top + t.bottom) / 2.0
    );

    let series: [(&str, &str, Vec<f64>); 2] = [
        (
            "train",
            "#d62728",
            curves.rows.iter().map(|r| r.train_acc).collect(),
        ),
        (
            "validation",
            "#1f77b4",
            curves.rows.iter().map(|r| r.val_acc).collect(),
        ),
    ];
    for (name, colour, values) in &series {
        if n == 1 {
            let _ = writeln!(
                out,
                "<circle class=\"point {name}\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{colour}\"/>",
                x_of(0),
                y_of(values[0])
            );
        } else {
            let points: Vec<String> = values
                .iter()
                .enumerate()
                .map(|(i, v)| format!("{:.2},{:.2}", x_of(i), y_of(*v)))
                .collect();
            let _ = writeln!(
                out,
                "<polyline class=\"series {name}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\" points=\"{}\"/>",
                points.join(" ")
            );
        }
    }
    let lx = t.right + 20.0;
    out.push_str("<g class=\"legend\">\n");
    for (k, (name, colour, _)) in series.iter().enumerate() {
        let ly = t.top + 10.0 + k as f64 * 20.0;
        let _ = writeln!(
            out,
            "<line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{colour}\" stroke-width=\"2\"/><text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">{name} accuracy</text>",
            lx + 20.0,
            lx + 26.0,
            ly + 4.0
        );
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carto::classify;
    use crate::dynamics::DynamicsMetrics;
    use crate::trainer::CurveRow;

    fn table(n: usize) -> MetricsTable {
        MetricsTable {
            meta: None,
            rows: (0..n)
                .map(|i| DynamicsMetrics {
                    guid: format!("g<{i}>"),
                    confidence: i as f64 / n as f64,
                    variability: (i % 5) as f64 / 10.0,
                    correctness: (i % 4) as f64 / 3.0,
                    epochs_used: 3,
                })
                .collect(),
        }
    }

    #[test]
    fn three_rows_three_markers() {
        let t = table(3);
        let regions = classify(&t, 0.33, 0.33, 0.33).unwrap();
        let svg = render_map(&t, &regions, &MapStyle::default()).unwrap();
        assert_eq!(svg.matches("class=\"pt\"").count(), 3);
        assert!(svg.contains("variability"));
        assert!(svg.contains("confidence"));
        assert!(svg.contains("g&lt;0&gt;"));
        roxmltree::Document::parse(&svg).unwrap();
    }

    #[test]
    fn empty_table_rejected() {
        let t = table(0);
        let regions = RegionAssignment::clone(&classify(&table(1), 0.0, 0.0, 0.0).unwrap());
        assert!(render_map(&t, &regions, &MapStyle::default()).is_err());
        let bad = MapStyle {
            sample_cap: 0,
            ..MapStyle::default()
        };
        assert!(render_map(&table(2), &regions, &bad).is_err());
    }

    #[test]
    fn bins_collapse_to_five() {
        assert_eq!(correctness_bin_edges(3, 5), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(correctness_bin_edges(20, 5).len(), 6);
        assert_eq!(bin_of(1.0, 4), 3);
        assert_eq!(bin_of(1.0 / 3.0, 4), 1);
        assert_eq!(bin_of(2.0 / 3.0, 4), 2);
        assert_eq!(bin_of(0.0, 4), 0);
        assert_eq!(bin_of(0.6, 5), 3);
    }

    #[test]
    fn transform_inverts() {
        let t = MapStyle::default().transform();
        let (x, y) = t.to_pixel(0.123, 0.789);
        let (v, c) = t.from_pixel(x, y);
        assert!((v - 0.123).abs() < 1e-12 && (c - 0.789).abs() < 1e-12);
    }

    #[test]
    fn histograms_are_optional() {
        let t = table(50);
        let regions = classify(&t, 0.33, 0.33, 0.33).unwrap();
        let plain = render_map(&t, &regions, &MapStyle::default()).unwrap();
        assert!(!plain.contains("class=\"hist\""));
        let style = MapStyle {
            histograms: true,
            ..MapStyle::default()
        };
        let with = render_map(&t, &regions, &style).unwrap();
        assert_eq!(with.matches("class=\"pt\"").count(), 50);
        assert!(with.contains("class=\"hist\""));
        roxmltree::Document::parse(&with).unwrap();
    }

    fn curves(n: usize) -> CurveLog {
        CurveLog {
            rows: (0..n)
                .map(|e| CurveRow {
                    epoch: e as u32,
                    train_acc: 0.3 + 0.03 * e as f64,
                    val_acc: 0.3,
                    mean_loss: 1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn single_epoch_curves_are_points() {
        let svg = render_curves(&curves(1), &CurveStyle::default()).unwrap();
        assert_eq!(svg.matches("class=\"point ").count(), 2);
        assert!(!svg.contains("<polyline"));
        roxmltree::Document::parse(&svg).unwrap();
        assert!(render_curves(&CurveLog::default(), &CurveStyle::default()).is_err());
    }
}
