//! Static timeline plots: one horizontal bar per label track, segments
//! coloured by class.

use std::fmt::Write;

use crate::data::ClassMap;
use crate::metrics::labels_to_segments;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct Track<'a> {
    pub name: &'a str,
    pub labels: &'a [usize],
}

/// Deterministic `#rrggbb` colour for a class: hues stepped by the golden angle.
pub fn class_color(id: usize) -> String {
    let h = (id as f64 * 137.507_764) % 360.0;
    let (s, l) = (0.65, if id.is_multiple_of(2) { 0.50 } else { 0.40 });
    let c = (1.0 - (2.0 * l - 1.0f64).abs()) * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let m = l - c / 2.0;
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let to = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    format!("#{:02x}{:02x}{:02x}", to(r), to(g), to(b))
}

fn check(tracks: &[Track]) -> Result<usize> {
    let first = tracks
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to render".into()))?;
    let t = first.labels.len();
    if t == 0 {
        return Err(Error::InvalidArgument("tracks are empty".into()));
    }
    if let Some(bad) = tracks.iter().find(|tr| tr.labels.len() != t) {
        return Err(Error::Shape(format!(
            "track {} has {} frames, {} has {t}",
            bad.name,
            bad.labels.len(),
            first.name
        )));
    }
    Ok(t)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

const LABEL_W: usize = 120;
const BAR_W: usize = 800;
const BAR_H: usize = 24;
const GAP: usize = 8;

/// SVG document; each bar is a nested viewport in frame units so segment
/// widths are exact frame counts.
pub fn render_svg(tracks: &[Track], mapping: Option<&ClassMap>) -> Result<String> {
    let frames = check(tracks)?;
    let mut classes: Vec<usize> = tracks.iter().flat_map(|t| t.labels.iter().copied()).collect();
    classes.sort_unstable();
    classes.dedup();
    let legend_y = tracks.len() * (BAR_H + GAP) + GAP;
    let height = legend_y + classes.len() * 18 + GAP;
    let width = LABEL_W + BAR_W + GAP;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    for (i, tr) in tracks.iter().enumerate() {
        let y = GAP + i * (BAR_H + GAP);
        let _ = writeln!(
            s,
            r#"  <text x="4" y="{}">{}</text>"#,
            y + BAR_H / 2 + 4,
            escape(tr.name)
        );
        let _ = writeln!(
            s,
            r#"  <svg x="{LABEL_W}" y="{y}" width="{BAR_W}" height="{BAR_H}" viewBox="0 0 {frames} 1" preserveAspectRatio="none">"#
        );
        for seg in labels_to_segments(tr.labels)? {
            let _ = writeln!(
                s,
                r#"    <rect class="segment" data-class="{}" x="{}" y="0" width="{}" height="1" fill="{}"/>"#,
                seg.class_id,
                seg.start,
                seg.len(),
                class_color(seg.class_id)
            );
        }
        s.push_str("  </svg>\n");
    }
    for (i, &c) in classes.iter().enumerate() {
        let y = legend_y + i * 18;
        let name = mapping
            .and_then(|m| m.name(c))
            .map_or_else(|| format!("class {c}"), str::to_string);
        let _ = writeln!(
            s,
            r#"  <rect x="{LABEL_W}" y="{y}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            class_color(c),
            LABEL_W + 18,
            y + 10,
            escape(&name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn class_char(id: usize) -> char {
    const ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
    ALPHABET.get(id).map_or('?', |&b| b as char)
}

/// One line per track; column `c` of `width` shows frame `floor(c T / width)`.
pub fn render_ascii(tracks: &[Track], width: usize) -> Result<String> {
    let frames = check(tracks)?;
    let cols = width.clamp(1, frames);
    let pad = tracks.iter().map(|t| t.name.chars().count()).max().unwrap_or(0);
    let mut s = String::new();
    for tr in tracks {
        let bar: String = (0..cols).map(|c| class_char(tr.labels[c * frames / cols])).collect();
        let _ = writeln!(s, "{:<pad$} |{bar}|", tr.name);
    }
    Ok(s)
}
