//! Hand-emitted SVG figures: AIF overlays and parameter-map panels.

use std::fmt::Write;

use ndarray::Array2;

const PLOT_W: f64 = 480.0;
const PLOT_H: f64 = 240.0;
const MARGIN: f64 = 40.0;
const PIXEL: f64 = 3.0;
const BAR_W: f64 = 12.0;

/// One row of the map figure: prediction and reference on a shared scale.
pub struct MapPanel<'a> {
    pub name: &'a str,
    pub pred: &'a Array2<f64>,
    pub reference: &'a Array2<f64>,
    pub mask: Option<&'a Array2<bool>>,
}

/// A time curve overlay of the true and estimated plasma concentration.
pub struct AifOverlay<'a> {
    pub time_seconds: &'a [f64],
    pub truth_mm: &'a [f64],
    pub estimate_mm: &'a [f64],
}

fn gray(v: f64, lo: f64, hi: f64) -> u8 {
    if hi > lo {
        (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8
    } else {
        0
    }
}

fn polyline(out: &mut String, t: &[f64], y: &[f64], x0: f64, y0: f64, (t_max, y_max): (f64, f64), style: &str) {
    let pts: Vec<String> = t
        .iter()
        .zip(y)
        .map(|(&t, &v)| {
            let px = x0 + if t_max > 0.0 { t / t_max * PLOT_W } else { 0.0 };
            let py = y0 + PLOT_H - if y_max > 0.0 { v.max(0.0) / y_max * PLOT_H } else { 0.0 };
            format!("{px:.2},{py:.2}")
        })
        .collect();
    let _ = writeln!(out, r#"<polyline fill="none" {style} points="{}"/>"#, pts.join(" "));
}

fn aif_section(out: &mut String, aif: &AifOverlay<'_>, y0: f64) {
    let t_max = aif.time_seconds.iter().cloned().fold(0.0, f64::max);
    let y_max = aif.truth_mm.iter().chain(aif.estimate_mm).cloned().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let (x0, top) = (MARGIN, y0 + MARGIN);
    let _ = writeln!(out, r#"<g id="aif">"#);
    let _ = writeln!(
        out,
        r#"<rect x="{x0}" y="{top}" width="{PLOT_W}" height="{PLOT_H}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(out, r#"<text x="{x0}" y="{}" font-size="12">plasma concentration (mM), max {y_max:.3}</text>"#, top - 6.0);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="end">time (s), max {t_max:.0}</text>"#,
        x0 + PLOT_W,
        top + PLOT_H + 16.0
    );
    polyline(out, aif.time_seconds, aif.truth_mm, x0, top, (t_max, y_max), r#"stroke="black" stroke-width="1.5" class="truth""#);
    polyline(
        out,
        aif.time_seconds,
        aif.estimate_mm,
        x0,
        top,
        (t_max, y_max),
        r##"stroke="#d03020" stroke-width="1.5" stroke-dasharray="5,3" class="estimate""##,
    );
    let _ = writeln!(out, "</g>");
}

/// Run-length encoded grayscale rows; voxels outside the mask are left blank.
fn raster(out: &mut String, map: &Array2<f64>, mask: Option<&Array2<bool>>, x0: f64, y0: f64, (lo, hi): (f64, f64)) {
    let (h, w) = map.dim();
    for y in 0..h {
        let mut x = 0;
        while x < w {
            let inside = |x: usize| mask.is_none_or(|m| m[[y, x]]);
            if !inside(x) {
                x += 1;
                continue;
            }
            let g = gray(map[[y, x]], lo, hi);
            let start = x;
            while x < w && inside(x) && gray(map[[y, x]], lo, hi) == g {
                x += 1;
            }
            let _ = writeln!(
                out,
                r#"<rect x="{}" y="{}" width="{}" height="{PIXEL}" fill="rgb({g},{g},{g})"/>"#,
                x0 + start as f64 * PIXEL,
                y0 + y as f64 * PIXEL,
                (x - start) as f64 * PIXEL
            );
        }
    }
}

fn scale_bar(out: &mut String, x0: f64, y0: f64, height: f64, (lo, hi): (f64, f64), id: usize) {
    let _ = writeln!(
        out,
        r#"<defs><linearGradient id="bar{id}" x1="0" y1="1" x2="0" y2="0"><stop offset="0" stop-color="black"/><stop offset="1" stop-color="white"/></linearGradient></defs>"#
    );
    let _ = writeln!(
        out,
        r#"<rect x="{x0}" y="{y0}" width="{BAR_W}" height="{height}" fill="url(#bar{id})" stroke="black"/>"#
    );
    let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="10">{hi:.4}</text>"#, x0 + BAR_W + 4.0, y0 + 10.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="10">{lo:.4}</text>"#, x0 + BAR_W + 4.0, y0 + height);
}

fn panel_section(out: &mut String, panels: &[MapPanel<'_>], y0: f64) -> f64 {
    let mut y = y0 + MARGIN;
    for (i, p) in panels.iter().enumerate() {
        let (h, w) = p.reference.dim();
        let inside = |(yx, _): &((usize, usize), &f64)| p.mask.is_none_or(|m| m[*yx]);
        let values = p.reference.indexed_iter().filter(inside).chain(p.pred.indexed_iter().filter(inside));
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, &v)| (lo.min(v), hi.max(v)));
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (0.0, 0.0) };
        let (pw, ph) = (w as f64 * PIXEL, h as f64 * PIXEL);
        let _ = writeln!(out, r#"<g id="map-{}">"#, p.name);
        let _ = writeln!(out, r#"<text x="{MARGIN}" y="{}" font-size="12">{} estimate</text>"#, y - 4.0, p.name);
        let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="12">{} reference</text>"#, 2.0 * MARGIN + pw, y - 4.0, p.name);
        raster(out, p.pred, p.mask, MARGIN, y, (lo, hi));
        raster(out, p.reference, p.mask, 2.0 * MARGIN + pw, y, (lo, hi));
        scale_bar(out, 3.0 * MARGIN + 2.0 * pw, y, ph, (lo, hi), i);
        let _ = writeln!(out, "</g>");
        y += ph + MARGIN;
    }
    y
}

/// A complete SVG document with map panels and, when given, the AIF overlay.
pub fn evaluation_figure(panels: &[MapPanel<'_>], aif: Option<&AifOverlay<'_>>) -> String {
    let mut body = String::new();
    let mut y = 0.0;
    if let Some(a) = aif {
        aif_section(&mut body, a, y);
        y += PLOT_H + 2.0 * MARGIN;
    }
    y = panel_section(&mut body, panels, y);
    let max_w = panels.iter().map(|p| p.reference.ncols() as f64 * PIXEL).fold(0.0, f64::max);
    let width = (4.0 * MARGIN + 2.0 * max_w + BAR_W + 40.0).max(PLOT_W + 2.0 * MARGIN);
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{y}\" viewBox=\"0 0 {width} {y}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}
