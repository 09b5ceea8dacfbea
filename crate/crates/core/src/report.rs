//! CSV tables and SVG charts.
//!
//! Every file starts with a `# config_hash: <hex>` line so outputs can be
//! traced to the configuration that produced them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::corpus::PeriodId;
use crate::curves::{EffectivenessSeries, NativeCurve};
use crate::decay::{FormComparison, FormVerdict};

pub fn with_hash(config_hash: &str, body: &str) -> String {
    format!("# config_hash: {config_hash}\n{body}")
}

/// Drop leading `#` lines.
pub fn strip_comments(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

pub const SERIES_HEADER: &str =
    "topic,train_period,test_period,months,t_years,native_size,effective_size,effectiveness,extrapolated,noise";

pub fn series_csv(series: &[&EffectivenessSeries]) -> String {
    let mut out = format!("{SERIES_HEADER}\n");
    for s in series {
        for p in &s.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{},{:.3},{:.6},{},{}",
                s.topic,
                p.train_period,
                p.test_period,
                p.months,
                p.t_years,
                p.native_size,
                p.effective_size,
                p.effectiveness,
                p.extrapolated,
                p.noise
            );
        }
    }
    out
}

pub const CURVES_HEADER: &str = "topic,period,backend,a,b,c,r_squared,points,min_size,max_size";

pub fn curves_csv(curves: &[&NativeCurve]) -> String {
    let mut out = format!("{CURVES_HEADER}\n");
    for c in curves {
        let f = &c.fit;
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{},{},{}",
            c.topic, c.period, c.backend_id, f.a, f.b, f.c, f.r_squared, f.point_count, f.min_size, f.max_size
        );
    }
    out
}

pub const FORMS_HEADER: &str = "topic,exp_sse,exp_r2,pow_sse,pow_r2,verdict,t_zero_handling";

pub fn forms_csv(rows: &[(String, FormComparison)]) -> String {
    let mut out = format!("{FORMS_HEADER}\n");
    for (topic, f) in rows {
        let verdict = match f.verdict {
            FormVerdict::Exponential => "exponential",
            FormVerdict::PowerLaw => "power_law",
            FormVerdict::Inconclusive => "inconclusive",
        };
        let _ = writeln!(
            out,
            "{topic},{:.6e},{:.6},{:.6e},{:.6},{verdict},\"{}\"",
            f.exp_sse, f.exp_r2, f.pow_sse, f.pow_r2, f.t_zero_handling
        );
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Line chart of effectiveness against years since the reference period.
pub fn effectiveness_svg(title: &str, series: &[&EffectivenessSeries]) -> String {
    let (w, h) = (720.0, 420.0);
    let (left, right, top, bottom) = (60.0, 160.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let t_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.t_years))
        .fold(0.0, f64::max)
        .max(1.0 / 12.0);
    let y_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.effectiveness))
        .filter(|y| y.is_finite())
        .fold(1.0, f64::max)
        * 1.05;
    let sx = |t: f64| left + pw * t / t_max;
    let sy = |y: f64| top + ph * (1.0 - y.clamp(0.0, y_max) / y_max);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<path d="M{left},{top} V{} H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    for k in 0..=5 {
        let y = y_max * k as f64 / 5.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{y:.2}</text>"#,
            left - 6.0,
            sy(y) + 4.0
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" x2="{}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            left + pw,
            sy(y),
            sy(y)
        );
    }
    for k in 0..=4 {
        let t = t_max * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{t:.2}</text>"#,
            sx(t),
            top + ph + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">years since reference period</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">effectiveness</text>"#,
        top + ph / 2.0
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.effectiveness.is_finite())
            .map(|p| format!("{:.1},{:.1}", sx(p.t_years), sy(p.effectiveness)))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                pts.join(" ")
            );
        }
        let ly = top + 16.0 * i as f64 + 8.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            left + pw + 12.0,
            left + pw + 32.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{}</text>"#,
            left + pw + 38.0,
            ly + 4.0,
            escape(&s.topic)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Group series by topic for per-topic files.
pub fn by_topic(series: &[EffectivenessSeries]) -> BTreeMap<&str, Vec<&EffectivenessSeries>> {
    let mut out: BTreeMap<&str, Vec<&EffectivenessSeries>> = BTreeMap::new();
    for s in series {
        out.entry(s.topic.as_str()).or_default().push(s);
    }
    out
}

/// Safe file stem for a topic name.
pub fn file_stem(topic: &str) -> String {
    topic
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Period label used in file names.
pub fn period_label(p: PeriodId) -> String {
    p.to_string()
}
