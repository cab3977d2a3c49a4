//! Top-down SVG trajectory plots: pedestrians red, robots black, goals as
//! crosses. Output is a pure function of the log.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::logs::EpisodeLog;
use crate::error::{Error, Result};
use crate::sim::AgentKind;

const SIZE: f64 = 600.0;
const MARGIN: f64 = 40.0;

struct Frame {
    half: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x + self.half) / (2.0 * self.half) * (SIZE - 2.0 * MARGIN)
    }
    fn py(&self, y: f64) -> f64 {
        SIZE - self.px(y)
    }
}

fn axes(svg: &mut String, f: &Frame) {
    let (lo, hi) = (f.px(-f.half), f.px(f.half));
    let (top, bottom) = (f.py(f.half), f.py(-f.half));
    let (cx, cy) = (f.px(0.0), f.py(0.0));
    let _ = writeln!(
        svg,
        r##"<rect x="{lo:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#888888" stroke-width="1"/>"##,
        hi - lo,
        bottom - top
    );
    let _ = writeln!(svg, r##"<line x1="{lo:.2}" y1="{cy:.2}" x2="{hi:.2}" y2="{cy:.2}" stroke="#cccccc" stroke-width="1"/>"##);
    let _ = writeln!(svg, r##"<line x1="{cx:.2}" y1="{top:.2}" x2="{cx:.2}" y2="{bottom:.2}" stroke="#cccccc" stroke-width="1"/>"##);
    let _ = writeln!(
        svg,
        r##"<text x="{hi:.2}" y="{:.2}" font-size="12" text-anchor="end">x [m] ±{:.1}</text>"##,
        bottom + 16.0,
        f.half
    );
    let _ = writeln!(
        svg,
        r##"<text x="{:.2}" y="{:.2}" font-size="12">y [m]</text>"##,
        lo,
        top - 8.0
    );
}

/// SVG document for one episode; `None` draws empty axes.
pub fn plot_episode(log: Option<&EpisodeLog>) -> String {
    let half = log.map_or(6.0, |l| {
        let extent = l
            .records
            .iter()
            .map(|r| r.x.abs().max(r.y.abs()))
            .chain(l.header.goals.iter().map(|g| g[0].abs().max(g[1].abs())))
            .fold(l.header.scenario_radius, f64::max);
        (extent + 0.5).ceil()
    });
    let f = Frame { half };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    axes(&mut svg, &f);
    if let Some(log) = log {
        let mut tracks: BTreeMap<(u8, usize), Vec<(f64, f64)>> = BTreeMap::new();
        for r in &log.records {
            let kind = match r.kind {
                AgentKind::Robot => 0,
                AgentKind::Pedestrian => 1,
            };
            tracks.entry((kind, r.agent_id)).or_default().push((r.x, r.y));
        }
        // Pedestrians first so robot tracks sit on top.
        for ((kind, _), pts) in tracks.iter().rev() {
            let colour = if *kind == 0 { "#000000" } else { "#d62728" };
            let points: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
                points.join(" ")
            );
            if let Some(&(x, y)) = pts.first() {
                let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#, f.px(x), f.py(y));
            }
        }
        for g in &log.header.goals {
            let (x, y) = (f.px(g[0]), f.py(g[1]));
            let _ = writeln!(
                svg,
                r##"<path d="M{:.2},{:.2} L{:.2},{:.2} M{:.2},{:.2} L{:.2},{:.2}" stroke="#000000" stroke-width="2"/>"##,
                x - 5.0,
                y - 5.0,
                x + 5.0,
                y + 5.0,
                x - 5.0,
                y + 5.0,
                x + 5.0,
                y - 5.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{MARGIN}" y="{:.2}" font-size="12">episode {} ({})</text>"#,
            SIZE - 8.0,
            log.header.episode,
            log.header.policy
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `episode_<k>.svg` per log into `out_dir` (or `empty.svg` when
/// there are no episodes) and returns the written paths.
pub fn emit_plots(logs: &[EpisodeLog], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let docs: Vec<(String, String)> = if logs.is_empty() {
        vec![("empty.svg".into(), plot_episode(None))]
    } else {
        logs.iter()
            .map(|l| (format!("episode_{:05}.svg", l.header.episode), plot_episode(Some(l))))
            .collect()
    };
    docs.into_iter()
        .map(|(name, doc)| {
            let path = out_dir.join(name);
            std::fs::write(&path, doc).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
