//! CSV tables for plotting.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::baselines::{ComparisonReport, MethodReport};
use crate::error::{Error, Result};
use crate::io::export::fmt_num;
use crate::solver::TrajectorySolution;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Per node: mean, min and max of x, y and z across drones.
    PositionEnvelope,
    /// Per drone and node: speed.
    SpeedProfile,
    /// Per drone and node: position.
    Path3d,
    /// One row per quantity, one column per method.
    Comparison,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [
        PlotKind::PositionEnvelope,
        PlotKind::SpeedProfile,
        PlotKind::Path3d,
        PlotKind::Comparison,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::PositionEnvelope => "position-envelope",
            PlotKind::SpeedProfile => "speed-profile",
            PlotKind::Path3d => "3d-path",
            PlotKind::Comparison => "comparison",
        }
    }
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            Error::InvalidInput(format!("unknown plot kind \"{s}\"; expected one of {}", names.join(", ")))
        })
    }
}

/// What a plot is drawn from.
#[derive(Debug, Clone, Copy)]
pub enum PlotSource<'a> {
    Solutions(&'a [TrajectorySolution]),
    Report(&'a ComparisonReport),
}

/// A header and rows of already formatted cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn write(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(e) => Error::io(path, e),
            other => Error::InvalidState(format!("{other:?}")),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j].as_str()).collect())
    }
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn same_grid(sols: &[TrajectorySolution]) -> Result<()> {
    let Some(first) = sols.first() else {
        return Err(Error::InvalidInput("no trajectories to plot".into()));
    };
    if sols.iter().any(|s| s.nodes() != first.nodes() || s.dt != first.dt) {
        return Err(Error::InvalidInput("trajectories are on different grids".into()));
    }
    Ok(())
}

fn envelope(sols: &[TrajectorySolution]) -> Result<Table> {
    same_grid(sols)?;
    let mut h = vec!["t".to_string()];
    for axis in ["x", "y", "z"] {
        for stat in ["mean", "min", "max"] {
            h.push(format!("{axis}_{stat}"));
        }
    }
    let q = sols.len() as f64;
    let rows = (0..sols[0].nodes())
        .map(|k| {
            let mut r = vec![fmt_num(sols[0].time(k))];
            for a in 0..3 {
                let vals = sols.iter().map(|s| s.states[k].p[a]);
                let mean = vals.clone().sum::<f64>() / q;
                let min = vals.clone().fold(f64::INFINITY, f64::min);
                let max = vals.fold(f64::NEG_INFINITY, f64::max);
                r.extend([mean, min, max].map(fmt_num));
            }
            r
        })
        .collect();
    Ok(Table { header: h, rows })
}

fn per_node(sols: &[TrajectorySolution], names: &[&str], f: impl Fn(&TrajectorySolution, usize) -> Vec<f64>) -> Result<Table> {
    same_grid(sols)?;
    let mut rows = Vec::new();
    for (i, s) in sols.iter().enumerate() {
        for k in 0..s.nodes() {
            let mut r = vec![i.to_string(), k.to_string(), fmt_num(s.time(k))];
            r.extend(f(s, k).into_iter().map(fmt_num));
            rows.push(r);
        }
    }
    Ok(Table {
        header: header(names),
        rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

fn comparison(report: &ComparisonReport) -> Table {
    let m = report.methods();
    let row = |name: &str, f: &dyn Fn(&MethodReport) -> String| {
        let mut r = vec![name.to_string()];
        r.extend(m.iter().map(|x| f(x)));
        r
    };
    let drones = m.iter().map(|x| x.arrival_times.len()).max().unwrap_or(0);
    let mut rows = vec![
        row("method", &|x| x.method.clone()),
        row("status", &|x| x.status.to_string()),
        row("total_arrival_time", &|x| opt(x.total_arrival_time)),
    ];
    for i in 0..drones {
        rows.push(row(&format!("arrival_time_{i}"), &|x| opt(x.arrival_times.get(i).copied())));
    }
    rows.push(row("min_distance_sq", &|x| opt(x.min_distance_sq)));
    rows.push(row("min_residual", &|x| opt(x.min_residual)));
    rows.push(row("first_collision_time", &|x| opt(x.first_collision_time)));
    rows.push(row("lag", &|x| opt(x.lag)));
    Table {
        header: header(&["quantity", "joint", "independent", "lag"]),
        rows,
    }
}

/// Builds the table for `kind` from `source`.
pub fn plot_table(source: PlotSource<'_>, kind: PlotKind) -> Result<Table> {
    match (kind, source) {
        (PlotKind::PositionEnvelope, PlotSource::Solutions(s)) => envelope(s),
        (PlotKind::SpeedProfile, PlotSource::Solutions(s)) => {
            per_node(s, &["drone_id", "k", "t", "speed"], |s, k| vec![s.states[k].v.norm()])
        }
        (PlotKind::Path3d, PlotSource::Solutions(s)) => per_node(s, &["drone_id", "k", "t", "x", "y", "z"], |s, k| {
            s.states[k].p.iter().copied().collect()
        }),
        (PlotKind::Comparison, PlotSource::Report(r)) => Ok(comparison(r)),
        (PlotKind::Comparison, PlotSource::Solutions(_)) => {
            Err(Error::InvalidInput("the comparison plot needs a comparison report".into()))
        }
        (k, PlotSource::Report(_)) => Err(Error::InvalidInput(format!("the {k} plot needs a solution"))),
    }
}

pub fn emit_plot_data(source: PlotSource<'_>, kind: PlotKind, path: &Path) -> Result<Table> {
    let t = plot_table(source, kind)?;
    t.write(path)?;
    Ok(t)
}
