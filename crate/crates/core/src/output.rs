//! Trajectory export: RFC-4180 CSV and minimal SVG line plots.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::network::PowerNetwork;
use crate::scenarios::BaseSpec;
use crate::simulate::Trajectory;

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Column names in export order. Multiplier columns for the line limits appear only
/// when the run enforces them.
pub fn csv_header(net: &PowerNetwork, thermal_limits: bool) -> Vec<String> {
    let buses: Vec<usize> = (1..=net.n_buses()).collect();
    let lines: Vec<String> = net.lines().iter().map(|l| l.label()).collect();
    let mut h = vec!["t".to_string()];
    h.extend(buses.iter().map(|b| format!("omega_{b}")));
    h.extend(buses.iter().map(|b| format!("d_{b}")));
    h.extend(lines.iter().map(|l| format!("P_{l}")));
    h.extend(buses.iter().map(|b| format!("theta_{b}")));
    h.extend(buses.iter().map(|b| format!("mu_{b}")));
    if thermal_limits {
        h.extend(lines.iter().map(|l| format!("nu_minus_{l}")));
        h.extend(lines.iter().map(|l| format!("nu_plus_{l}")));
    }
    h.push("g".to_string());
    h
}

/// Writes one row per sample. The angle columns hold the controller's virtual angles,
/// which exist in both modes.
pub fn write_csv<W: Write>(w: W, net: &PowerNetwork, traj: &Trajectory) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(csv_header(net, traj.thermal_limits))
        .map_err(csv_err)?;
    let mut row: Vec<String> = Vec::new();
    for s in &traj.samples {
        row.clear();
        row.push(s.t.to_string());
        let cols = [
            &s.omega,
            &s.ctrl.d,
            &s.line_flow,
            &s.ctrl.theta_hat,
            &s.ctrl.mu,
        ];
        for v in cols {
            row.extend(v.iter().map(f64::to_string));
        }
        if traj.thermal_limits {
            row.extend(s.ctrl.nu_minus.iter().map(f64::to_string));
            row.extend(s.ctrl.nu_plus.iter().map(f64::to_string));
        }
        row.push(s.g.to_string());
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, net: &PowerNetwork, traj: &Trajectory) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_csv(std::io::BufWriter::new(f), net, traj)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Polyline plot of several series sharing one time axis.
pub fn svg_plot(title: &str, y_label: &str, t: &[f64], series: &[(String, Vec<f64>)]) -> String {
    let (w, h, m) = (720.0, 420.0, 60.0);
    let t0 = t.first().copied().unwrap_or(0.0);
    let t1 = t.last().copied().unwrap_or(1.0).max(t0 + 1e-12);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (_, v) in series {
        for &y in v.iter().filter(|y| y.is_finite()) {
            lo = lo.min(y);
            hi = hi.max(y);
        }
    }
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let px = |x: f64| m + (x - t0) / (t1 - t0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - lo) / (hi - lo) * (h - 2.0 * m);

    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{title}</text>\n",
        w / 2.0
    );
    s += &format!(
        "<rect x=\"{m}\" y=\"{m}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        w - 2.0 * m,
        h - 2.0 * m
    );
    for (y, v) in [(m + 4.0, hi), (h - m, lo)] {
        s += &format!(
            "<text x=\"{}\" y=\"{y}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{v:.6}</text>\n",
            m - 4.0
        );
    }
    for (x, v) in [(m, t0), (w - m, t1)] {
        s += &format!(
            "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{v:.1}</text>\n",
            h - m + 16.0
        );
    }
    s += &format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">t [s]</text>\n",
        w / 2.0,
        h - 16.0
    );
    s += &format!(
        "<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{y_label}</text>\n",
        h / 2.0,
        h / 2.0
    );
    for (k, (name, v)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = t
            .iter()
            .zip(v)
            .filter(|(_, y)| y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
            .collect();
        s += &format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{}\"><title>{name}</title></polyline>\n",
            pts.join(" ")
        );
    }
    s += "</svg>\n";
    s
}

/// Frequency in Hz for display, or the raw per-unit value when the case says otherwise.
pub fn display_frequency(base: &BaseSpec, omega: f64) -> f64 {
    if base.per_unit_frequency {
        base.nominal_hz + omega * base.nominal_hz
    } else {
        omega
    }
}

/// Writes frequency, load and line-flow plots next to `stem` and returns their paths.
pub fn write_svgs(
    dir: &Path,
    stem: &str,
    net: &PowerNetwork,
    base: &BaseSpec,
    traj: &Trajectory,
) -> Result<Vec<PathBuf>> {
    let t = traj.times();
    let per_bus = |f: &dyn Fn(&crate::simulate::Sample, usize) -> f64| -> Vec<(String, Vec<f64>)> {
        (0..net.n_buses())
            .map(|i| {
                (
                    format!("bus {}", i + 1),
                    traj.samples.iter().map(|s| f(s, i)).collect(),
                )
            })
            .collect()
    };
    let freq = per_bus(&|s, i| display_frequency(base, s.omega[i]));
    let loads = per_bus(&|s, i| s.ctrl.d[i]);
    let flows: Vec<(String, Vec<f64>)> = net
        .lines()
        .iter()
        .enumerate()
        .map(|(e, l)| {
            (
                format!("line {}", l.label()),
                traj.samples.iter().map(|s| s.line_flow[e]).collect(),
            )
        })
        .collect();
    let f_label = if base.per_unit_frequency {
        "frequency [Hz]"
    } else {
        "frequency deviation [p.u.]"
    };
    let mut paths = Vec::new();
    for (suffix, title, label, series) in [
        ("frequency", "Bus frequency", f_label, freq),
        ("loads", "Controllable loads", "d [p.u.]", loads),
        ("flows", "Line flows", "P [p.u.]", flows),
    ] {
        let p = dir.join(format!("{stem}_{suffix}.svg"));
        std::fs::write(&p, svg_plot(title, label, &t, &series))?;
        paths.push(p);
    }
    Ok(paths)
}
