use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use poseinfill::graph::SkeletonGraph;
use poseinfill::pose::PoseSequence;

const SIZE: f64 = 400.0;
const MARGIN: f64 = 20.0;

/// Writes `frame_0000.svg`, ... with the x/y projection of every frame.
/// Frames listed in `highlight` are drawn in a second colour.
pub fn dump_frames(dir: &Path, seq: &PoseSequence, graph: &SkeletonGraph, highlight: &[usize]) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for t in 0..seq.frames() {
        for v in 0..seq.joints() {
            let p = seq.get(t, v);
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let project = |p: [f64; 3]| (MARGIN + (p[0] - lo[0]) * scale, SIZE - MARGIN - (p[1] - lo[1]) * scale);
    for t in 0..seq.frames() {
        let colour = if highlight.contains(&t) { "#d9480f" } else { "#1c7ed6" };
        let mut s = String::new();
        let _ = writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">"
        );
        let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
        for &(i, j) in graph.edges() {
            let (a, b) = (project(seq.get(t, i)), project(seq.get(t, j)));
            let _ = writeln!(
                s,
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{colour}\" stroke-width=\"3\"/>",
                a.0, a.1, b.0, b.1
            );
        }
        for v in 0..seq.joints() {
            let (x, y) = project(seq.get(t, v));
            let _ = writeln!(s, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"black\"/>");
        }
        let _ = writeln!(s, "<text x=\"8\" y=\"16\" font-size=\"12\">frame {t}</text>");
        s.push_str("</svg>\n");
        fs::write(dir.join(format!("frame_{t:04}.svg")), s)?;
    }
    Ok(())
}
