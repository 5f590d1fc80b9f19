//! Static SVG overlays: poses as circles and coloured limb segments, with an
//! optional heat layer built from the joint heatmaps.

use std::fmt::Write;

use posefield::decoder::DecodedPose;
use posefield::fields::FieldTensor;
use posefield::skeleton::{PoseInstance, SkeletonSpec};

/// Heat cells below this value are not drawn.
const HEAT_FLOOR: f32 = 0.05;

/// Evenly spaced hues at fixed saturation and lightness.
fn limb_color(limb: usize, limbs: usize) -> String {
    let h = limb as f64 / limbs.max(1) as f64 * 6.0;
    let (s, l) = (0.85, 0.5);
    let c = (1.0 - (2.0 * l - 1.0f64).abs()) * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    let byte = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    format!("#{:02x}{:02x}{:02x}", byte(r), byte(g), byte(b))
}

pub struct Overlay<'a> {
    pub image_id: u64,
    pub size: (u32, u32),
    pub detections: &'a [DecodedPose],
    pub groundtruth: &'a [PoseInstance],
    /// Joint heatmaps (background channel ignored).
    pub heat: Option<&'a FieldTensor>,
}

pub fn render(o: &Overlay<'_>, spec: &SkeletonSpec) -> String {
    let (w, h) = o.size;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, "<title>image {}</title>", o.image_id);
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{w}" height="{h}" fill="#ffffff"/>"##);

    if let Some(heat) = o.heat {
        let fd = heat.grid().fd;
        let joints = spec.num_joints().min(heat.channels());
        let _ = writeln!(s, r##"<g id="heat" fill="#d62728">"##);
        for i in 0..heat.height() {
            for j in 0..heat.width() {
                let v = (0..joints).map(|c| heat.get(c, i, j)).fold(0f32, f32::max);
                if v >= HEAT_FLOOR {
                    let _ = writeln!(
                        s,
                        r#"<rect x="{}" y="{}" width="{fd}" height="{fd}" fill-opacity="{:.3}"/>"#,
                        j as u32 * fd,
                        i as u32 * fd,
                        v.min(1.0) * 0.6
                    );
                }
            }
        }
        let _ = writeln!(s, "</g>");
    }

    if !o.groundtruth.is_empty() {
        let _ = writeln!(s, r##"<g id="groundtruth" fill="none" stroke="#7f7f7f" stroke-width="1">"##);
        for p in o.groundtruth {
            for k in p.joints.iter().flatten() {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="4"/>"#, k.x, k.y);
            }
        }
        let _ = writeln!(s, "</g>");
    }

    let _ = writeln!(s, r#"<g id="detections">"#);
    let limbs = spec.limbs();
    for (n, pose) in o.detections.iter().enumerate() {
        let _ = writeln!(s, r#"<g class="pose" data-index="{n}" data-score="{:.4}">"#, pose.score);
        for (l, &(a, b)) in limbs.iter().enumerate() {
            if let (Some(p), Some(q)) = (pose.joints[a], pose.joints[b]) {
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="3" stroke-linecap="round"/>"#,
                    p.x,
                    p.y,
                    q.x,
                    q.y,
                    limb_color(l, limbs.len())
                );
            }
        }
        for j in pose.joints.iter().flatten() {
            let _ = writeln!(
                s,
                r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f1f1f"/>"##,
                j.x, j.y
            );
        }
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "</svg>");
    s
}
