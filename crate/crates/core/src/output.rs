//! CSV, JSON and SVG artifacts.
//!
//! Every CSV starts with `#`-prefixed metadata lines (schema version, seed,
//! config as single-line JSON) followed by an ordinary header row. JSON
//! objects have sorted keys.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::config::{RunConfig, RunKind, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::runner::{run_evolve, run_sweeps, EvolveReport, ModelContext, SweepSet};
use crate::svg::{line_chart, Series};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Float with 12 significant digits.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.11e}")
    }
}

fn preamble(cfg: &RunConfig) -> String {
    format!(
        "# schema_version: {SCHEMA_VERSION}\n# software_version: {VERSION}\n# seed: {}\n# config: {}\n",
        cfg.seed,
        cfg.echo()
    )
}

fn csv(cfg: &RunConfig, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut out = preamble(cfg);
    out.push_str(&header.join(","));
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

fn metadata(cfg: &RunConfig) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "software_version": VERSION,
        "seed": cfg.seed,
        "config": cfg.echo(),
    })
}

fn svg_desc(cfg: &RunConfig) -> String {
    format!("schema_version={SCHEMA_VERSION} seed={} config={}", cfg.seed, cfg.echo())
}

/// Collects written files; single writer per file.
struct Writer<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        self.files.push(path);
        Ok(())
    }
}

fn pretty(v: &Value) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

pub fn write_spectrum(cfg: &RunConfig, ctx: &ModelContext, w: &mut impl FnMut(&str, String) -> Result<()>) -> Result<()> {
    let spec = &ctx.spectrum;
    let loc = ctx.localization();
    let label_of = |i: usize| match ctx.labels {
        Some(l) if l.left == Some(i) => "left",
        Some(l) if l.right == Some(i) => "right",
        _ => "",
    };
    let header: Vec<String> = ["index", "eigenvalue", "edge_localization", "label"].map(String::from).to_vec();
    let rows = (0..spec.len()).map(|k| {
        vec![
            (k + 1).to_string(),
            fmt_float(spec.eigenvalues[k]),
            fmt_float(loc[k]),
            label_of(k + 1).to_string(),
        ]
    });
    w("spectrum.csv", csv(cfg, &header, rows))?;

    let n = spec.sites;
    let mut edges = serde_json::Map::new();
    for (name, idx) in [("left", ctx.labels.and_then(|l| l.left)), ("right", ctx.labels.and_then(|l| l.right))] {
        let Some(idx) = idx else { continue };
        let u = spec.mode(idx)?;
        let header: Vec<String> = ["site", "x_re", "x_im", "y_re", "y_im"].map(String::from).to_vec();
        let rows = (0..n).map(|j| {
            vec![
                (j + 1).to_string(),
                fmt_float(u[j].re),
                fmt_float(u[j].im),
                fmt_float(u[n + j].re),
                fmt_float(u[n + j].im),
            ]
        });
        w(&format!("edge_{name}.csv"), csv(cfg, &header, rows))?;
        edges.insert(
            name.into(),
            json!({"index": idx, "eigenvalue": spec.eigenvalues[idx - 1], "edge_localization": loc[idx - 1]}),
        );
    }
    let mut summary = metadata(cfg);
    summary["kind"] = json!("spectrum");
    summary["statistics"] = json!(spec.statistics);
    summary["modes"] = json!(spec.len());
    summary["edge_modes"] = Value::Object(edges);
    w("summary.json", pretty(&summary)?)?;

    if cfg.output.svg {
        let x: Vec<f64> = (1..=spec.len()).map(|i| i as f64).collect();
        let y: Vec<f64> = spec.eigenvalues.iter().copied().collect();
        w(
            "spectrum.svg",
            line_chart(
                "Spectrum",
                "index",
                "eigenvalue",
                &[Series {
                    name: "eigenvalue",
                    x: &x,
                    y: &y,
                }],
                &svg_desc(cfg),
            ),
        )?;
    }
    Ok(())
}

pub fn write_evolve(cfg: &RunConfig, rep: &EvolveReport, w: &mut impl FnMut(&str, String) -> Result<()>) -> Result<()> {
    let traj = &rep.trajectory;
    let k = traj.fields.first().map_or(0, Vec::len);
    let edge_cols: Vec<&str> = ["O_l", "O_r"]
        .into_iter()
        .filter(|n| traj.observable_names.iter().any(|o| o == n))
        .collect();
    let edges: Vec<Vec<f64>> = edge_cols.iter().map(|n| traj.observable(n).unwrap()).collect();

    let mut header = vec!["t".to_string()];
    header.extend((1..=k).map(|i| format!("f_{i}")));
    header.push("V".into());
    if traj.eta.is_some() {
        header.push("eta".into());
    }
    header.extend(edge_cols.iter().map(|s| s.to_string()));
    header.push("fidelity".into());
    let rows = (0..traj.len()).map(|r| {
        let mut row = vec![fmt_float(traj.times[r])];
        row.extend(traj.fields[r].iter().map(|f| fmt_float(*f)));
        row.push(fmt_float(traj.lyapunov[r]));
        if let Some(eta) = &traj.eta {
            row.push(fmt_float(eta[r]));
        }
        row.extend(edges.iter().map(|e| fmt_float(e[r])));
        row.push(fmt_float(rep.fidelity[r]));
        row
    });
    w("trajectory.csv", csv(cfg, &header, rows))?;

    let mut occ = serde_json::Map::new();
    for (name, e) in edge_cols.iter().zip(&edges) {
        occ.insert(name.to_string(), num(*e.last().unwrap()));
    }
    let mut summary = metadata(cfg);
    summary["kind"] = json!("evolve");
    summary["final_time"] = num(traj.final_time());
    summary["steps"] = json!(traj.diagnostics.steps);
    summary["final_occupations"] = Value::Object(occ);
    summary["final_fidelity"] = num(rep.final_fidelity());
    summary["fidelity_targets"] = json!(rep.prepared.fidelity_indices);
    summary["final_fields"] = json!(traj.final_fields().iter().map(|f| num(*f)).collect::<Vec<_>>());
    summary["final_lyapunov"] = num(*traj.lyapunov.last().unwrap_or(&f64::NAN));
    summary["final_eta"] = traj.eta.as_ref().and_then(|e| e.last()).map_or(Value::Null, |e| num(*e));
    summary["stop_fidelity"] = rep.stop_fidelity.map_or(Value::Null, num);
    summary["stop_condition_met"] = json!(rep.stop_met);
    summary["stop_time"] = if rep.trajectory.stopped_early {
        num(traj.final_time())
    } else {
        Value::Null
    };
    summary["max_norm_deviation"] = num(traj.diagnostics.max_norm_deviation);
    summary["max_lyapunov_rise"] = num(traj.diagnostics.max_lyapunov_rise);
    w("summary.json", pretty(&summary)?)?;

    if cfg.output.svg {
        let desc = svg_desc(cfg);
        let mut series: Vec<Series> = edge_cols
            .iter()
            .zip(&edges)
            .map(|(n, e)| Series {
                name: n,
                x: &traj.times,
                y: e,
            })
            .collect();
        series.push(Series {
            name: "fidelity",
            x: &traj.times,
            y: &rep.fidelity,
        });
        w("occupations.svg", line_chart("Occupations", "t", "occupation", &series, &desc))?;
        let fields: Vec<Vec<f64>> = (0..k).map(|i| traj.fields.iter().map(|f| f[i]).collect()).collect();
        let names: Vec<String> = (1..=k).map(|i| format!("f_{i}")).collect();
        let series: Vec<Series> = fields
            .iter()
            .zip(&names)
            .map(|(y, n)| Series {
                name: n,
                x: &traj.times,
                y,
            })
            .collect();
        w("fields.svg", line_chart("Control fields", "t", "f", &series, &desc))?;
        w(
            "lyapunov.svg",
            line_chart(
                "Lyapunov function",
                "t",
                "V",
                &[Series {
                    name: "V",
                    x: &traj.times,
                    y: &traj.lyapunov,
                }],
                &desc,
            ),
        )?;
    }
    Ok(())
}

pub fn write_sweeps(cfg: &RunConfig, set: &SweepSet, w: &mut impl FnMut(&str, String) -> Result<()>) -> Result<()> {
    let mut entries = Vec::new();
    for s in &set.sweeps {
        let r = &s.result;
        let header: Vec<String> = ["value", "mean_fidelity", "min", "max", "std", "runs", "failures", "max_norm_deviation"]
            .map(String::from)
            .to_vec();
        let rows = (0..r.axis.len()).map(|i| {
            vec![
                fmt_float(r.axis[i]),
                fmt_float(r.mean[i]),
                fmt_float(r.min[i]),
                fmt_float(r.max[i]),
                fmt_float(r.std[i]),
                r.runs_per_point.to_string(),
                r.failures[i].to_string(),
                fmt_float(r.max_norm_deviation[i]),
            ]
        });
        let file = format!("sweep_{}.csv", s.name);
        w(&file, csv(cfg, &header, rows))?;
        if cfg.output.svg {
            w(
                &format!("sweep_{}.svg", s.name),
                line_chart(
                    &format!("Sweep {}", s.name),
                    "perturbation",
                    "mean fidelity",
                    &[Series {
                        name: "mean",
                        x: &r.axis,
                        y: &r.mean,
                    }],
                    &svg_desc(cfg),
                ),
            )?;
        }
        entries.push(json!({
            "name": s.name,
            "perturbation": serde_json::to_value(s.perturbation).unwrap_or(Value::Null),
            "horizon": num(s.horizon),
            "clean_stop_reached": s.clean_stop_reached.map_or(Value::Null, |b| json!(b)),
            "points": r.axis.len(),
            "runs_per_point": r.runs_per_point,
            "total_failures": r.failures.iter().sum::<usize>(),
            "file": file,
        }));
    }
    let mut meta = metadata(cfg);
    meta["kind"] = json!("sweep");
    meta["master_seed"] = json!(cfg.seed);
    meta["seed_rule"] = json!(
        "sweep i uses master splitmix64(splitmix64(splitmix64(seed) ^ i) ^ u64::MAX); run r at axis point a uses splitmix64(splitmix64(splitmix64(master) ^ a) ^ r)"
    );
    meta["sweeps"] = Value::Array(entries);
    w("sweep.json", pretty(&meta)?)
}

/// Run `cfg` as `kind` and write every artifact into `out`.
pub fn run_to_dir(cfg: &RunConfig, kind: RunKind, out: &Path) -> Result<Vec<PathBuf>> {
    let mut cfg = cfg.clone();
    cfg.kind = kind;
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;
    let mut writer = Writer {
        dir: out,
        files: Vec::new(),
    };
    let mut w = |name: &str, contents: String| writer.put(name, &contents);
    match kind {
        RunKind::Spectrum => write_spectrum(&cfg, &ModelContext::new(&cfg.model)?, &mut w)?,
        RunKind::Evolve => write_evolve(&cfg, &run_evolve(&cfg)?, &mut w)?,
        RunKind::Sweep => write_sweeps(&cfg, &run_sweeps(&cfg)?, &mut w)?,
    }
    Ok(writer.files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt_float(0.5814), "5.81400000000e-1");
        assert_eq!(fmt_float(-1.0 / 3.0), "-3.33333333333e-1");
        assert_eq!(fmt_float(f64::NAN), "NaN");
        let digits = fmt_float(std::f64::consts::PI);
        assert_eq!(digits.split('e').next().unwrap().replace(['.', '-'], "").len(), 12);
    }
}
