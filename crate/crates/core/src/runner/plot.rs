//! Minimal SVG figures: teach vs repeat paths, match rays, and the map
//! with its attachments.

use std::fmt::Write;

use super::repeat::{AttachmentRecord, MatchRecord};
use super::teach::{KeyframePose, PathSample};

const SIZE: f64 = 800.0;
const MARGIN: f64 = 30.0;

/// World-to-canvas mapping with y pointing up.
struct Canvas {
    min: [f64; 2],
    scale: f64,
    height: f64,
    body: String,
}

impl Canvas {
    fn fit(points: impl Iterator<Item = [f64; 2]>) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for k in 0..2 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        if !min[0].is_finite() {
            min = [0.0, 0.0];
            max = [1.0, 1.0];
        }
        let span = (max[0] - min[0]).max(max[1] - min[1]).max(1.0);
        let scale = (SIZE - 2.0 * MARGIN) / span;
        Self {
            min,
            scale,
            height: (max[1] - min[1]) * scale + 2.0 * MARGIN,
            body: String::new(),
        }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (
            MARGIN + (p[0] - self.min[0]) * self.scale,
            self.height - MARGIN - (p[1] - self.min[1]) * self.scale,
        )
    }

    fn polyline(&mut self, pts: &[[f64; 2]], color: &str, width: f64, class: &str) {
        if pts.is_empty() {
            return;
        }
        let coords: Vec<String> = pts
            .iter()
            .map(|p| {
                let (x, y) = self.map(*p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        writeln!(
            self.body,
            r#"<polyline class="{class}" points="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"#,
            coords.join(" ")
        )
        .unwrap();
    }

    fn line(&mut self, a: [f64; 2], b: [f64; 2], color: &str, class: &str) {
        let (x1, y1) = self.map(a);
        let (x2, y2) = self.map(b);
        writeln!(
            self.body,
            r#"<line class="{class}" x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{color}" stroke-width="0.8" opacity="0.6"/>"#
        )
        .unwrap();
    }

    fn dot(&mut self, p: [f64; 2], r: f64, color: &str, class: &str) {
        let (x, y) = self.map(p);
        writeln!(
            self.body,
            r#"<circle class="{class}" cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{color}"/>"#
        )
        .unwrap();
    }

    fn legend(&mut self, row: usize, text: &str, color: &str) {
        let y = 16.0 + 14.0 * row as f64;
        writeln!(
            self.body,
            r#"<text x="8" y="{y}" font-family="sans-serif" font-size="12" fill="{color}">{text}</text>"#
        )
        .unwrap();
    }

    fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
             <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{h:.0}\" viewBox=\"0 0 {SIZE} {h:.2}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            h = self.height
        )
    }
}

fn positions(path: &[PathSample]) -> Vec<[f64; 2]> {
    path.iter().map(|s| s.pose.position()).collect()
}

/// Teach path against one or more repeat paths.
pub fn trajectories_svg(teach: &[PathSample], repeats: &[(&str, &[PathSample])]) -> String {
    const COLORS: [&str; 4] = ["#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    let teach_pts = positions(teach);
    let all = teach_pts
        .iter()
        .copied()
        .chain(repeats.iter().flat_map(|(_, p)| positions(p)));
    let mut c = Canvas::fit(all);
    c.polyline(&teach_pts, "#1f77b4", 2.0, "teach");
    c.legend(0, "teach", "#1f77b4");
    for (i, (name, p)) in repeats.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        c.polyline(&positions(p), color, 1.5, "repeat");
        c.legend(i + 1, name, color);
    }
    if let Some(end) = teach_pts.last() {
        c.dot(*end, 4.0, "black", "end");
    }
    c.finish()
}

/// Rays from each matched repeat pose to the matched keyframe's teach pose.
pub fn matches_svg(
    teach: &[PathSample],
    repeat: &[PathSample],
    matches: &[MatchRecord],
    keyframes: &[KeyframePose],
) -> String {
    let teach_pts = positions(teach);
    let repeat_pts = positions(repeat);
    let mut c = Canvas::fit(teach_pts.iter().chain(&repeat_pts).copied());
    c.polyline(&teach_pts, "#1f77b4", 1.5, "teach");
    c.polyline(&repeat_pts, "#d62728", 1.5, "repeat");
    for m in matches {
        let target = keyframes
            .iter()
            .find(|k| k.id == m.keyframe)
            .map_or([m.x, m.y], |k| k.pose.position());
        c.line([m.x, m.y], target, "#2ca02c", "match");
    }
    c.legend(0, "teach", "#1f77b4");
    c.legend(1, "repeat", "#d62728");
    c.legend(2, &format!("{} matches", matches.len()), "#2ca02c");
    c.finish()
}

/// Keyframe positions with attached expansion frames linked to their anchor.
pub fn map_svg(
    keyframes: &[KeyframePose],
    alive: &[u64],
    attachments: &[AttachmentRecord],
) -> String {
    let kf_pts: Vec<[f64; 2]> = keyframes.iter().map(|k| k.pose.position()).collect();
    let mut c = Canvas::fit(
        kf_pts
            .iter()
            .copied()
            .chain(attachments.iter().map(|a| [a.x, a.y])),
    );
    for k in keyframes {
        let (r, color) = if alive.contains(&k.id) {
            (3.0, "#1f77b4")
        } else {
            (1.5, "#bbbbbb")
        };
        c.dot(k.pose.position(), r, color, "keyframe");
    }
    for a in attachments {
        if let Some(k) = keyframes.iter().find(|k| k.id == a.keyframe) {
            c.line([a.x, a.y], k.pose.position(), "#ff7f0e", "anchor");
        }
        c.dot([a.x, a.y], 2.0, "#ff7f0e", "attachment");
    }
    c.legend(0, &format!("{} keyframes", alive.len()), "#1f77b4");
    c.legend(1, &format!("{} attachments", attachments.len()), "#ff7f0e");
    c.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2;

    fn path(n: usize, y: f64) -> Vec<PathSample> {
        (0..n)
            .map(|i| PathSample {
                t: i as f64,
                pose: Pose2::new(i as f64 * 0.5, y, 0.0),
            })
            .collect()
    }

    fn count(svg: &str, class: &str) -> usize {
        let doc = roxmltree::Document::parse(svg).unwrap();
        doc.descendants()
            .filter(|n| n.attribute("class") == Some(class))
            .count()
    }

    #[test]
    fn empty_matches_still_make_a_valid_file() {
        let t = path(10, 0.0);
        let svg = matches_svg(&t, &path(10, 0.2), &[], &[]);
        assert_eq!(count(&svg, "match"), 0);
        assert_eq!(count(&svg, "teach"), 1);
        let svg = trajectories_svg(&[], &[]);
        roxmltree::Document::parse(&svg).unwrap();
    }

    #[test]
    fn one_ray_per_match() {
        let t = path(10, 0.0);
        let kfs: Vec<KeyframePose> = t
            .iter()
            .enumerate()
            .map(|(i, s)| KeyframePose {
                id: i as u64,
                t: s.t,
                pose: s.pose,
            })
            .collect();
        let ms: Vec<MatchRecord> = (0..7)
            .map(|i| MatchRecord {
                tick: i,
                t: i as f64,
                keyframe: i,
                attachment: None,
                score: 0.5,
                used: 20,
                reproj_px: 0.5,
                x: i as f64 * 0.5,
                y: 0.2,
                theta: 0.0,
            })
            .collect();
        let svg = matches_svg(&t, &path(10, 0.2), &ms, &kfs);
        assert_eq!(count(&svg, "match"), 7);
        let ids: Vec<u64> = (0..10).step_by(2).collect();
        let att = [AttachmentRecord {
            keyframe: 2,
            x: 1.0,
            y: 1.0,
        }];
        let svg = map_svg(&kfs, &ids, &att);
        assert_eq!(count(&svg, "keyframe"), 10);
        assert_eq!(count(&svg, "attachment"), 1);
        assert_eq!(count(&svg, "anchor"), 1);
    }
}
