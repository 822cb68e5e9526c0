use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::container::{Archive, NamedArray};
use crate::error::{Error, Result};
use crate::hoi_core::{forward_kinematics, transform_object, KinematicBody, ObjectGeometry};
use crate::interactor::CorrectionTrace;

use super::synth::Synthesis;
use super::train::Workspace;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Container,
    ObjSequence,
    CsvTrace,
}

impl ExportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "container" => Ok(Self::Container),
            "obj-sequence" => Ok(Self::ObjSequence),
            "csv-trace" => Ok(Self::CsvTrace),
            _ => Err(Error::Config(format!("unknown export format `{s}`"))),
        }
    }
}

/// Generated sequences as a `synthesis` archive.
pub fn synthesis_archive(samples: &[Synthesis], texts: &[String]) -> Result<Archive> {
    let first = samples.first().ok_or_else(|| Error::Argument("nothing to export".into()))?;
    let (n, w) = first.body.body.frames.dim();
    let mut a = Archive::new("synthesis", serde_json::json!({ "texts": texts, "frames": n }));
    let body: Vec<f64> = samples.iter().flat_map(|s| s.body.body.frames.iter().copied()).collect();
    let object: Vec<f64> = samples.iter().flat_map(|s| s.object.frames.iter().copied()).collect();
    a.push("motion", NamedArray::f64("motion/body", vec![samples.len(), n, w], body));
    a.push("motion", NamedArray::f64("motion/object", vec![samples.len(), n, 6], object));
    if let Some(p) = first.contact.as_ref().map(Vec::len) {
        let maps: Vec<f64> = samples.iter().flat_map(|s| s.contact.clone().unwrap_or_else(|| vec![f64::NAN; p])).collect();
        a.push("contact", NamedArray::f64("contact/probs", vec![samples.len(), p], maps));
    }
    Ok(a)
}

/// One Wavefront OBJ per frame holding the posed object points and the body
/// joints, with bones as line elements.
pub fn write_obj_sequence(sample: &Synthesis, geometry: &ObjectGeometry, skel: &KinematicBody, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let joints = forward_kinematics(&sample.body.body, skel)?.all;
    let points = transform_object(geometry, &sample.object);
    let mut files = Vec::new();
    for f in 0..joints.shape()[0] {
        let mut s = String::from("o object\n");
        for p in 0..points.shape()[1] {
            let _ = writeln!(s, "v {:.6} {:.6} {:.6}", points[[f, p, 0]], points[[f, p, 1]], points[[f, p, 2]]);
        }
        let base = points.shape()[1];
        let _ = writeln!(s, "o body");
        for j in 0..joints.shape()[1] {
            let _ = writeln!(s, "v {:.6} {:.6} {:.6}", joints[[f, j, 0]], joints[[f, j, 1]], joints[[f, j, 2]]);
        }
        for (j, parent) in skel.parents.iter().enumerate() {
            if let Some(p) = parent {
                let _ = writeln!(s, "l {} {}", base + p + 1, base + j + 1);
            }
        }
        let path = dir.join(format!("frame_{f:04}.obj"));
        std::fs::write(&path, s)?;
        files.push(path);
    }
    Ok(files)
}

/// The guidance trace as CSV, diagnostics as trailing `#` lines.
pub fn trace_csv(trace: &CorrectionTrace) -> String {
    let mut s = String::from("sample,call,remaining,step,l_before,l_after,eta,halvings,accepted\n");
    for t in &trace.steps {
        let _ = writeln!(
            s,
            "{},{},{},{},{:e},{:e},{:e},{},{}",
            t.sample, t.call, t.remaining, t.step, t.before, t.after, t.eta, t.halvings, t.accepted
        );
    }
    for d in &trace.diagnostics {
        let _ = writeln!(s, "# {}", d.replace('\n', " "));
    }
    s
}

fn read_curve(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.rsplit(',').next().and_then(|v| v.parse().ok()).ok_or_else(|| Error::Data(format!("{}: bad row `{l}`", path.display())))
        })
        .collect()
}

/// Small-multiple SVG of every training log in the workspace, log-scaled.
pub fn plot_logs(ws: &Workspace) -> Result<PathBuf> {
    let mut logs: Vec<(String, Vec<f64>)> = Vec::new();
    let dir = ws.logs();
    if dir.is_dir() {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for p in paths.into_iter().filter(|p| p.extension().is_some_and(|e| e == "csv")) {
            let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            logs.push((name, read_curve(&p)?));
        }
    }
    if logs.is_empty() {
        return Err(Error::MissingDependency(format!("no training logs under {}; train first", dir.display())));
    }
    let (w, h, pad) = (320.0, 200.0, 30.0);
    let cols = 2usize;
    let rows = logs.len().div_ceil(cols);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">\n",
        w * cols as f64,
        h * rows as f64
    );
    for (i, (name, ys)) in logs.iter().enumerate() {
        let (ox, oy) = ((i % cols) as f64 * w, (i / cols) as f64 * h);
        let vals: Vec<f64> = ys.iter().map(|y| y.max(1e-12).log10()).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-9);
        let n = vals.len().max(2) - 1;
        let mut pts = String::new();
        for (k, v) in vals.iter().enumerate() {
            let x = ox + pad + (w - 2.0 * pad) * k as f64 / n as f64;
            let y = oy + h - pad - (h - 2.0 * pad) * (v - lo) / span;
            let _ = write!(pts, "{x:.1},{y:.1} ");
        }
        let _ = writeln!(
            svg,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#999\"/>",
            ox + pad,
            oy + pad,
            w - 2.0 * pad,
            h - 2.0 * pad
        );
        let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{:.1}\">{name} (log10 loss {:.2}..{:.2})</text>", ox + pad, oy + pad - 6.0, lo, hi);
        let _ = writeln!(svg, "<polyline fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"1\" points=\"{}\"/>", pts.trim_end());
    }
    svg.push_str("</svg>\n");
    std::fs::create_dir_all(ws.reports())?;
    let path = ws.reports().join("losses.svg");
    std::fs::write(&path, svg)?;
    Ok(path)
}
