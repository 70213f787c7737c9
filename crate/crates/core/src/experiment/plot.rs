use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::ExperimentConfig;
use crate::error::{ConfigError, Error, FormatError, Result};
use crate::sim::World;

/// One executed trajectory in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub method: String,
    pub start: usize,
    pub trial: usize,
    pub points: Vec<[f64; 2]>,
    pub collided: bool,
}

const PX_PER_M: f64 = 40.0;
const MARGIN: f64 = 20.0;

fn color(method: &str) -> &'static str {
    match method {
        "hint" => "#2a9d3a",
        "hierarchy" => "#1f5fbf",
        _ => "#666666",
    }
}

/// Top-down SVG: room outline, obstacles, goal region, one polyline per
/// trace colored by method, and a red diamond where a trace collided.
pub fn render_svg(world: &World, traces: &[Trace]) -> Result<String> {
    if traces.is_empty() {
        return Err(ConfigError::Invalid("no trajectories to plot".into()).into());
    }
    let c = &world.config;
    let (w, h) = (c.room_width * PX_PER_M + 2.0 * MARGIN, c.room_length * PX_PER_M + 2.0 * MARGIN);
    // World y points up, SVG y points down.
    let px = |x: f64| MARGIN + x * PX_PER_M;
    let py = |y: f64| MARGIN + (c.room_length - y) * PX_PER_M;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1}" height="{h:.1}" viewBox="0 0 {w:.1} {h:.1}">"#);
    let _ = writeln!(
        s,
        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#ffffff" stroke="#000000" stroke-width="2"/>"##,
        px(0.0),
        py(c.room_length),
        c.room_width * PX_PER_M,
        c.room_length * PX_PER_M
    );
    let [gx, gy] = world.goal();
    let _ = writeln!(
        s,
        r##"<circle class="goal" cx="{:.2}" cy="{:.2}" r="{:.2}" fill="#f5d142" fill-opacity="0.6"/>"##,
        px(gx),
        py(gy),
        c.goal_radius * PX_PER_M
    );
    for o in &world.obstacles {
        let _ = writeln!(s, r##"<circle class="obstacle" cx="{:.2}" cy="{:.2}" r="{:.2}" fill="#8c8c8c"/>"##, px(o.x), py(o.y), o.r * PX_PER_M);
    }
    for t in traces {
        let pts: Vec<String> = t.points.iter().map(|p| format!("{:.2},{:.2}", px(p[0]), py(p[1]))).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="trajectory" data-method="{}" data-start="{}" data-trial="{}" points="{}" fill="none" stroke="{}" stroke-width="2" stroke-opacity="0.8"/>"#,
            escape(&t.method),
            t.start,
            t.trial,
            pts.join(" "),
            color(&t.method)
        );
        if let (true, Some(last)) = (t.collided, t.points.last()) {
            let (x, y, d) = (px(last[0]), py(last[1]), 6.0);
            let _ = writeln!(
                s,
                r##"<polygon class="collision" points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="#d62828"/>"##,
                x,
                y - d,
                x + d,
                y,
                x,
                y + d,
                x - d,
                y
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(v: &str) -> String {
    v.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Parses a `trajectories.csv` written by [`super::EvalReport::trajectories_csv`].
pub fn parse_trajectories(text: &str) -> Result<Vec<Trace>, FormatError> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != "method,start,trial,step,x,y,yaw,termination" {
        return Err(FormatError::Malformed(format!("unexpected trajectory header `{header}`")));
    }
    let mut traces: Vec<Trace> = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || FormatError::Malformed(format!("trajectory row {}: `{line}`", i + 2));
        if f.len() != 8 {
            return Err(bad());
        }
        let start: usize = f[1].parse().map_err(|_| bad())?;
        let trial: usize = f[2].parse().map_err(|_| bad())?;
        let x: f64 = f[4].parse().map_err(|_| bad())?;
        let y: f64 = f[5].parse().map_err(|_| bad())?;
        let same = traces.last().is_some_and(|t| t.method == f[0] && t.start == start && t.trial == trial);
        if !same {
            traces.push(Trace { method: f[0].to_string(), start, trial, points: Vec::new(), collided: f[7] == "collision" });
        }
        traces.last_mut().expect("pushed above").points.push([x, y]);
    }
    Ok(traces)
}

fn find_files(dir: &Path, name: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_files(&p, name, out)?;
        } else if p.file_name().is_some_and(|f| f == name) {
            out.push(p);
        }
    }
    Ok(())
}

/// Every trace under `dir` (searched recursively), plus the world rebuilt
/// from the first `config.toml` found next to the trajectories.
pub fn load_traces(dir: &Path) -> Result<(World, Vec<Trace>)> {
    let mut files = Vec::new();
    find_files(dir, "trajectories.csv", &mut files)?;
    let mut traces = Vec::new();
    let mut world = None;
    for f in &files {
        let text = std::fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
        traces.extend(parse_trajectories(&text)?);
        if world.is_none() {
            let cfg_path = f.with_file_name("config.toml");
            if cfg_path.exists() {
                let cfg = ExperimentConfig::load(&cfg_path)?;
                world = Some(World::generate(&cfg.eval_world())?);
            }
        }
    }
    if traces.is_empty() {
        return Err(ConfigError::Invalid(format!("no trajectories found under {}", dir.display())).into());
    }
    let world = world.ok_or_else(|| ConfigError::Invalid(format!("no config.toml next to the trajectories under {}", dir.display())))?;
    Ok((world, traces))
}
