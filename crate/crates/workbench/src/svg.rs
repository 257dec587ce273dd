//! Minimal SVG charts. Every drawn value carries a `<title>` with the same
//! text the sibling CSV holds, so images never contain numbers of their own.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Shared number format for CSV cells and SVG titles.
pub fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn header(out: &mut String, title: &str, w: f64, h: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        escape(title)
    );
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let m = 0.05 * (hi - lo);
        (lo - m, hi + m)
    }
}

fn axes(
    out: &mut String,
    x_label: &str,
    y_label: &str,
    (x0, x1): (f64, f64),
    (y0, y1): (f64, f64),
) {
    let _ = writeln!(
        out,
        r#"<path d="M{PAD} {PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let px = PAD + f * (W - 2.0 * PAD);
        let py = H - PAD - f * (H - 2.0 * PAD);
        let _ = writeln!(
            out,
            r#"<text x="{px:.1}" y="{}" text-anchor="middle">{}</text>"#,
            H - PAD + 14.0,
            short(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{py:.1}" text-anchor="end">{}</text>"#,
            PAD - 4.0,
            short(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
}

/// Axis tick text; not a data value.
fn short(v: f64) -> String {
    format!("{v:.3}")
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let mut out = String::new();
    header(&mut out, title, W, H);
    let xr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let yr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    axes(&mut out, x_label, y_label, xr, yr);
    let sx = |x: f64| PAD + (x - xr.0) / (xr.1 - xr.0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - yr.0) / (yr.1 - yr.0) * (H - 2.0 * PAD);
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let d: Vec<String> = s
            .points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                format!(
                    "{}{:.2} {:.2}",
                    if i == 0 { "M" } else { "L" },
                    sx(x),
                    sy(y)
                )
            })
            .collect();
        let dash = if s.dashed {
            r#" stroke-dasharray="4 3""#
        } else {
            ""
        };
        let _ = writeln!(
            out,
            r#"<path d="{}" fill="none" stroke="{color}"{dash}/>"#,
            d.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}"><title>{} {},{}</title></circle>"#,
                sx(x),
                sy(y),
                escape(&s.name),
                num(x),
                num(y)
            );
        }
        let ly = PAD + 14.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#,
            W - PAD + 4.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Grouped bars: one group per category, one bar per series.
pub fn bar_chart(
    title: &str,
    y_label: &str,
    categories: &[String],
    series: &[(String, Vec<Option<f64>>)],
) -> String {
    let mut out = String::new();
    header(&mut out, title, W, H);
    let top = series
        .iter()
        .flat_map(|s| s.1.iter().flatten().copied())
        .fold(0.0f64, f64::max)
        .max(1e-12)
        * 1.05;
    axes(
        &mut out,
        "",
        y_label,
        (0.0, categories.len() as f64),
        (0.0, top),
    );
    let group_w = (W - 2.0 * PAD) / categories.len().max(1) as f64;
    let bar_w = 0.8 * group_w / series.len().max(1) as f64;
    for (c, cat) in categories.iter().enumerate() {
        let gx = PAD + c as f64 * group_w + 0.1 * group_w;
        for (k, (name, values)) in series.iter().enumerate() {
            if let Some(v) = values[c] {
                let h = v / top * (H - 2.0 * PAD);
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{:.2}" width="{bar_w:.2}" height="{h:.2}" fill="{}"><title>{} {},{}</title></rect>"#,
                    gx + k as f64 * bar_w,
                    H - PAD - h,
                    PALETTE[k % PALETTE.len()],
                    escape(name),
                    escape(cat),
                    num(v)
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            gx + 0.4 * group_w,
            H - PAD + 28.0,
            escape(cat)
        );
    }
    for (k, (name, _)) in series.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{}">{}</text>"#,
            W - PAD + 4.0,
            PAD + 14.0 * k as f64,
            PALETTE[k % PALETTE.len()],
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Panels of `nx × ny` grids with values in `[0, 1]`, row `j` drawn upward.
pub fn heatmaps(title: &str, nx: usize, ny: usize, panels: &[(String, Vec<f64>)]) -> String {
    let cell = (240.0 / nx.max(ny) as f64).max(2.0);
    let pw = cell * nx as f64;
    let ph = cell * ny as f64;
    let w = 20.0 + panels.len() as f64 * (pw + 20.0);
    let h = ph + 60.0;
    let mut out = String::new();
    header(&mut out, title, w, h);
    for (p, (name, values)) in panels.iter().enumerate() {
        let ox = 20.0 + p as f64 * (pw + 20.0);
        let oy = 40.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            ox + pw / 2.0,
            oy - 4.0,
            escape(name)
        );
        for j in 0..ny {
            for i in 0..nx {
                let v = values[j * nx + i];
                let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="rgb(255,{shade},{shade})"><title>{} {},{},{}</title></rect>"#,
                    ox + i as f64 * cell,
                    oy + (ny - 1 - j) as f64 * cell,
                    escape(name),
                    i,
                    j,
                    num(v)
                );
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Every `<title>` payload, for checking against the sibling CSV.
pub fn title_values(svg: &str) -> Vec<String> {
    svg.split("<title>")
        .skip(1)
        .filter_map(|s| s.split("</title>").next())
        .flat_map(|t| {
            t.rsplit(' ')
                .next()
                .unwrap_or("")
                .split(',')
                .map(str::to_string)
                .collect::<Vec<_>>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn titles_carry_formatted_values() {
        let s = line_chart(
            "t",
            "x",
            "y",
            &[Series {
                name: "a b".into(),
                points: vec![(1.0, 0.25), (2.0, 0.5)],
                dashed: false,
            }],
        );
        assert_eq!(
            title_values(&s),
            ["1.000000", "0.250000", "2.000000", "0.500000"]
        );
        let b = bar_chart("t", "y", &["c1".into()], &[("m".into(), vec![Some(0.75)])]);
        assert_eq!(title_values(&b), ["c1", "0.750000"]);
        let h = heatmaps("t", 2, 1, &[("w".into(), vec![0.0, 1.0])]);
        assert_eq!(
            title_values(&h),
            ["0", "0", "0.000000", "1", "0", "1.000000"]
        );
    }

    #[test]
    fn output_is_deterministic() {
        let mk = || {
            bar_chart(
                "t",
                "y",
                &["a".into(), "b".into()],
                &[("m".into(), vec![Some(1.0), None])],
            )
        };
        assert_eq!(mk(), mk());
    }
}
