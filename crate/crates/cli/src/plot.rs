//! Standalone SVG figures: workspace, original and resized predicates, the
//! trajectory and the constraint groups the planner activated. For
//! receding-horizon output one frame per step is written as well.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use lazymtl::mtl::{NnfFormula, Polarity};
use lazymtl::predicate::Predicate;
use lazymtl::scenario::{EventFile, Scenario};
use lazymtl::synthesis::StepStatus;

use crate::artifacts::{read_table, ACTIVATIONS, EVENTS, SCENARIO, STEPS, TRAJECTORY};

const PX_PER_M: f64 = 60.0;
const MARGIN: f64 = 40.0;

#[derive(Deserialize)]
struct StepLine {
    step: usize,
    t: f64,
    plan: Vec<Vec<f64>>,
    robustness: Option<f64>,
    critical: Option<(usize, usize)>,
    activations: Vec<(usize, usize)>,
    status: StepStatus,
}

struct Frame {
    lo: [f64; 2],
    hi: [f64; 2],
    scale: f64,
}

impl Frame {
    fn new(s: &Scenario) -> Result<Self> {
        if s.workspace.lo.len() != 2 {
            bail!("plots need a planar workspace");
        }
        let lo = [s.workspace.lo[0], s.workspace.lo[1]];
        let hi = [s.workspace.hi[0], s.workspace.hi[1]];
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
        let scale = PX_PER_M.min(900.0 / span);
        Ok(Frame { lo, hi, scale })
    }

    fn width(&self) -> f64 {
        (self.hi[0] - self.lo[0]) * self.scale + 2.0 * MARGIN
    }

    fn height(&self) -> f64 {
        (self.hi[1] - self.lo[1]) * self.scale + 2.0 * MARGIN + 24.0
    }

    fn px(&self, p: &[f64]) -> (f64, f64) {
        (
            MARGIN + (p[0] - self.lo[0]) * self.scale,
            24.0 + MARGIN + (self.hi[1] - p[1]) * self.scale,
        )
    }

    fn points(&self, pts: impl IntoIterator<Item = [f64; 2]>) -> String {
        pts.into_iter()
            .map(|p| {
                let (x, y) = self.px(&p);
                format!("{x:.2},{y:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

struct Shape {
    name: String,
    polarity: Polarity,
    pred: Predicate<f64>,
}

fn shapes(s: &Scenario, f: &NnfFormula, geometry: &BTreeMap<String, Predicate<f64>>) -> Vec<Shape> {
    geometry
        .iter()
        .filter_map(|(name, p)| {
            let polarity = f
                .occurrences
                .iter()
                .find(|o| &o.name == name)
                .map(|o| o.polarity)?;
            // placeholders without geometry sit outside the workspace
            let inside = p.vertices_2d().iter().any(|v| {
                (0..2).all(|d| v[d] >= s.workspace.lo[d] - 1e-9 && v[d] <= s.workspace.hi[d] + 1e-9)
            });
            inside.then(|| Shape {
                name: name.clone(),
                polarity,
                pred: p.clone(),
            })
        })
        .collect()
}

fn header(out: &mut String, fr: &Frame, title: &str) {
    let (w, h) = (fr.width(), fr.height());
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{MARGIN}" y="20">{}</text>"#, escape(title));
    let (x0, y0) = fr.px(&[fr.lo[0], fr.hi[1]]);
    let (x1, y1) = fr.px(&[fr.hi[0], fr.lo[1]]);
    let _ = writeln!(
        out,
        r##"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444" stroke-width="1.5"/>"##,
        x1 - x0,
        y1 - y0
    );
}

fn draw_shapes(out: &mut String, fr: &Frame, shapes: &[Shape], rho: f64) {
    for sh in shapes {
        let (fill, stroke, resized) = match sh.polarity {
            Polarity::Unsafe => ("#e53935", "#b71c1c", sh.pred.offset(rho)),
            Polarity::Safe => ("#43a047", "#1b5e20", sh.pred.offset(-rho)),
        };
        let _ = writeln!(
            out,
            r#"<polygon points="{}" fill="{fill}" fill-opacity="0.35" stroke="{stroke}"/>"#,
            fr.points(sh.pred.vertices_2d())
        );
        let rv = resized.vertices_2d();
        if rv.len() >= 3 {
            let _ = writeln!(
                out,
                r#"<polygon points="{}" fill="none" stroke="{stroke}" stroke-dasharray="5,3"/>"#,
                fr.points(rv)
            );
        }
        let c = sh.pred.vertices_2d();
        let n = c.len().max(1) as f64;
        let cx = c.iter().map(|v| v[0]).sum::<f64>() / n;
        let cy = c.iter().map(|v| v[1]).sum::<f64>() / n;
        let (x, y) = fr.px(&[cx, cy]);
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="middle" fill="{stroke}">{}</text>"#,
            escape(&sh.name)
        );
    }
}

fn polyline(out: &mut String, fr: &Frame, pts: &[Vec<f64>], color: &str, dashed: bool) {
    if pts.len() < 2 {
        return;
    }
    let dash = if dashed {
        r#" stroke-dasharray="6,4""#
    } else {
        ""
    };
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
        fr.points(pts.iter().map(|p| [p[0], p[1]]))
    );
}

fn dots(out: &mut String, fr: &Frame, pts: &[Vec<f64>], color: &str) {
    for p in pts {
        let (x, y) = fr.px(p);
        let _ = writeln!(
            out,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{color}"/>"#
        );
    }
}

fn start_marker(out: &mut String, fr: &Frame, p: &[f64]) {
    let (x, y) = fr.px(p);
    let _ = writeln!(
        out,
        r##"<circle cx="{x:.2}" cy="{y:.2}" r="6" fill="#00bcd4" stroke="#006064"/>"##
    );
}

fn activation_markers(out: &mut String, fr: &Frame, pts: &[Vec<f64>], acts: &[(usize, usize)]) {
    for &(_, k) in acts {
        if let Some(p) = pts.get(k) {
            let (x, y) = fr.px(p);
            let _ = writeln!(
                out,
                r##"<circle cx="{x:.2}" cy="{y:.2}" r="5" fill="none" stroke="#fb8c00" stroke-width="1.5"/>"##
            );
        }
    }
}

fn cross(out: &mut String, fr: &Frame, p: &[f64]) {
    let (x, y) = fr.px(p);
    let _ = writeln!(
        out,
        r##"<path d="M{:.2},{:.2} L{:.2},{:.2} M{:.2},{:.2} L{:.2},{:.2}" stroke="#d50000" stroke-width="2.5"/>"##,
        x - 6.0,
        y - 6.0,
        x + 6.0,
        y + 6.0,
        x - 6.0,
        y + 6.0,
        x + 6.0,
        y - 6.0
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn legend(out: &mut String, fr: &Frame, items: &[(&str, &str)]) {
    let y = fr.height() - 10.0;
    let mut x = MARGIN;
    for (color, label) in items {
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{:.1}" y="{y:.1}">{}</text>"#,
            y - 9.0,
            x + 14.0,
            escape(label)
        );
        x += 24.0 + 7.0 * label.len() as f64;
    }
}

fn positions(dir: &Path) -> Result<Vec<Vec<f64>>> {
    let (header, rows) = read_table(&dir.join(TRAJECTORY))?;
    let cols: Vec<usize> = (0..header.len())
        .filter(|&j| header[j] != "k" && header[j] != "t")
        .take(2)
        .collect();
    if cols.len() < 2 {
        bail!("{} has no position columns", dir.join(TRAJECTORY).display());
    }
    Ok(rows.iter().map(|r| vec![r[cols[0]], r[cols[1]]]).collect())
}

fn activations(dir: &Path) -> Result<Vec<(usize, usize)>> {
    let path = dir.join(ACTIVATIONS);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let (header, rows) = read_table_loose(&path)?;
    let o = header.iter().position(|h| h == "occurrence");
    let k = header.iter().position(|h| h == "k");
    match (o, k) {
        (Some(o), Some(k)) => Ok(rows
            .iter()
            .filter_map(|r| Some((r[o].parse().ok()?, r[k].parse().ok()?)))
            .collect()),
        _ => Ok(Vec::new()),
    }
}

fn read_table_loose(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| Ok(rec?.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<Vec<String>>>>()?;
    Ok((header, rows))
}

pub fn run(dir: &Path, out: Option<&Path>) -> Result<()> {
    let scenario_path = dir.join(SCENARIO);
    if !scenario_path.exists() || !dir.join(TRAJECTORY).exists() {
        bail!(
            "{} does not contain plan or rhc artifacts ({SCENARIO} and {TRAJECTORY})",
            dir.display()
        );
    }
    let s = Scenario::load(&scenario_path)?;
    let f = s.effective_formula()?;
    let fr = Frame::new(&s)?;
    let mut geometry: BTreeMap<String, Predicate<f64>> = s
        .predicates::<f64>()?
        .into_iter()
        .map(|p| (p.name.clone(), p))
        .collect();
    let updates = if dir.join(EVENTS).exists() {
        s.updates::<f64>(&EventFile::load(dir.join(EVENTS))?)?
    } else {
        Vec::new()
    };
    let pts = positions(dir)?;
    let steps_path = dir.join(STEPS);
    let steps: Vec<StepLine> = if steps_path.exists() {
        fs::read_to_string(&steps_path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).context("parsing a step event"))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    if !steps.is_empty() {
        let frames = dir.join("frames");
        fs::create_dir_all(&frames)?;
        let mut applied = 0;
        let mut acts: Vec<(usize, usize)> = Vec::new();
        for st in &steps {
            while applied < updates.len() && updates[applied].step <= st.step {
                let u = &updates[applied];
                geometry.insert(u.name.clone(), u.predicate.clone());
                applied += 1;
            }
            acts.extend(&st.activations);
            let executed = (st.step + 1).min(st.plan.len());
            let mut svg = String::new();
            let status = serde_json::to_value(st.status)?;
            header(
                &mut svg,
                &fr,
                &format!(
                    "{} step {} (t = {:.1} s): {}{}",
                    s.name,
                    st.step,
                    st.t,
                    status.as_str().unwrap_or(""),
                    st.robustness
                        .map_or(String::new(), |r| format!(", robustness {r:.3}"))
                ),
            );
            draw_shapes(&mut svg, &fr, &shapes(&s, &f, &geometry), s.robustness);
            let plan_color = match st.status {
                StepStatus::Feasible | StepStatus::Done => "#1e88e5",
                _ => "#fb8c00",
            };
            polyline(
                &mut svg,
                &fr,
                &st.plan[executed.saturating_sub(1)..],
                plan_color,
                true,
            );
            polyline(&mut svg, &fr, &st.plan[..executed], "#0d47a1", false);
            dots(&mut svg, &fr, &st.plan[..executed], "#0d47a1");
            if let Some(p) = st.plan.first() {
                start_marker(&mut svg, &fr, p);
            }
            if let (Some(r), Some((_, k))) = (st.robustness, st.critical) {
                if r < 0.0 {
                    if let Some(p) = st.plan.get(k) {
                        cross(&mut svg, &fr, p);
                    }
                }
            }
            legend(
                &mut svg,
                &fr,
                &[
                    ("#0d47a1", "executed"),
                    (plan_color, "plan"),
                    ("#d50000", "critical point"),
                ],
            );
            svg.push_str("</svg>\n");
            fs::write(frames.join(format!("step_{:03}.svg", st.step)), svg)?;
        }
        for u in &updates[applied..] {
            geometry.insert(u.name.clone(), u.predicate.clone());
        }
    }

    let acts = if steps.is_empty() {
        activations(dir)?
    } else {
        steps.iter().flat_map(|st| st.activations.clone()).collect()
    };
    let mut svg = String::new();
    header(&mut svg, &fr, &format!("{}: {}", s.name, f.formula));
    draw_shapes(&mut svg, &fr, &shapes(&s, &f, &geometry), s.robustness);
    polyline(&mut svg, &fr, &pts, "#1e88e5", false);
    dots(&mut svg, &fr, &pts, "#1e88e5");
    activation_markers(&mut svg, &fr, &pts, &acts);
    if let Some(p) = pts.first() {
        start_marker(&mut svg, &fr, p);
    }
    legend(
        &mut svg,
        &fr,
        &[
            ("#e53935", "unsafe (dashed: bloated)"),
            ("#43a047", "goal (dashed: shrunk)"),
            ("#1e88e5", "trajectory"),
            ("#fb8c00", "activated constraint"),
        ],
    );
    svg.push_str("</svg>\n");
    let target = out.map_or_else(|| dir.join("plot.svg"), Path::to_path_buf);
    fs::write(&target, svg).with_context(|| format!("writing {}", target.display()))?;
    println!("wrote {}", target.display());
    if !steps.is_empty() {
        println!(
            "wrote {} frames to {}",
            steps.len(),
            dir.join("frames").display()
        );
    }
    Ok(())
}
