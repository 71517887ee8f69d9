//! Static SVG charts of the report tables.

use std::path::{Path, PathBuf};

use plotters::prelude::*;
use thiserror::Error;

use super::report::{quantile, DeviationRow, SampleRow, StopRow};

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("drawing {path} failed: {msg}")]
    Draw { path: PathBuf, msg: String },
}

const SIZE: (u32, u32) = (720, 420);
const PALETTE: [RGBColor; 4] = [
    RGBColor(0x4c, 0x72, 0xb0),
    RGBColor(0xdd, 0x84, 0x52),
    RGBColor(0x55, 0xa8, 0x68),
    RGBColor(0xc4, 0x4e, 0x52),
];

fn draw_err<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> PlotError + '_ {
    move |e| PlotError::Draw {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

fn unique<'a>(xs: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for x in xs {
        if !out.iter().any(|o| o == x) {
            out.push(x.to_string());
        }
    }
    out
}

/// Bars of `(label, value)` on a [0, y_max] axis.
fn bars(path: &Path, title: &str, y_desc: &str, items: &[(String, f64)], y_max: f64) -> Result<(), PlotError> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err(path))?;
    let n = items.len().max(1);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0f64..n as f64, 0f64..y_max)
        .map_err(draw_err(path))?;
    let labels: Vec<String> = items.iter().map(|(l, _)| l.clone()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| {
            let k = (x - 0.5).round();
            if (x - 0.5 - k).abs() < 1e-6 && k >= 0.0 {
                labels.get(k as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc(y_desc)
        .draw()
        .map_err(draw_err(path))?;
    chart
        .draw_series(items.iter().enumerate().map(|(k, (_, v))| {
            let x = k as f64;
            Rectangle::new([(x + 0.2, 0.0), (x + 0.8, *v)], PALETTE[k % PALETTE.len()].filled())
        }))
        .map_err(draw_err(path))?;
    root.present().map_err(draw_err(path))
}

pub fn plot_deviation(path: &Path, rows: &[DeviationRow]) -> Result<(), PlotError> {
    let items: Vec<(String, f64)> = rows
        .iter()
        .filter(|r| r.planner != "nc")
        .map(|r| (r.planner.clone(), r.deviating_share))
        .collect();
    bars(path, "Runs with a deviating crossing order", "share", &items, 1.0)
}

pub fn plot_stops(path: &Path, rows: &[StopRow]) -> Result<(), PlotError> {
    let items: Vec<(String, f64)> = rows
        .iter()
        .map(|r| (format!("{} {}", r.planner, r.road_type), r.stopped_share))
        .collect();
    bars(path, "Vehicles that stopped", "share", &items, 1.0)
}

/// Box plots (5th/25th/50th/75th/95th percentiles) per planner and road type.
pub fn plot_boxes(path: &Path, title: &str, y_desc: &str, rows: &[SampleRow]) -> Result<(), PlotError> {
    let groups: Vec<(String, Vec<f64>)> = unique(rows.iter().map(|r| r.planner.as_str()))
        .into_iter()
        .flat_map(|p| {
            unique(rows.iter().map(|r| r.road_type.as_str()))
                .into_iter()
                .map(move |road| (p.clone(), road))
        })
        .map(|(p, road)| {
            let xs = rows
                .iter()
                .filter(|r| r.planner == p && r.road_type == road)
                .map(|r| r.value)
                .collect();
            (format!("{p} {road}"), xs)
        })
        .filter(|(_, xs): &(String, Vec<f64>)| !xs.is_empty())
        .collect();
    let lo = rows.iter().map(|r| r.value).fold(0.0, f64::min);
    let hi = rows.iter().map(|r| r.value).fold(0.0, f64::max);
    let pad = ((hi - lo) * 0.05).max(0.5);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err(path))?;
    let n = groups.len().max(1);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0f64..n as f64, (lo - pad)..(hi + pad))
        .map_err(draw_err(path))?;
    let labels: Vec<String> = groups.iter().map(|(l, _)| l.clone()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| {
            let k = (x - 0.5).round();
            if (x - 0.5 - k).abs() < 1e-6 && k >= 0.0 {
                labels.get(k as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc(y_desc)
        .draw()
        .map_err(draw_err(path))?;
    for (k, (_, xs)) in groups.iter().enumerate() {
        let q = |p| quantile(xs, p).unwrap_or(0.0);
        let (p05, p25, p50, p75, p95) = (q(0.05), q(0.25), q(0.5), q(0.75), q(0.95));
        let x = k as f64;
        let color = PALETTE[k % PALETTE.len()];
        let style = ShapeStyle::from(&color).stroke_width(2);
        chart
            .draw_series([
                Rectangle::new([(x + 0.25, p25), (x + 0.75, p75)], color.mix(0.35).filled()),
                Rectangle::new([(x + 0.25, p25), (x + 0.75, p75)], style),
            ])
            .map_err(draw_err(path))?;
        chart
            .draw_series([
                PathElement::new(vec![(x + 0.25, p50), (x + 0.75, p50)], style),
                PathElement::new(vec![(x + 0.5, p05), (x + 0.5, p25)], style),
                PathElement::new(vec![(x + 0.5, p75), (x + 0.5, p95)], style),
            ])
            .map_err(draw_err(path))?;
    }
    chart
        .draw_series([PathElement::new(vec![(0.0, 0.0), (n as f64, 0.0)], BLACK.mix(0.5))])
        .map_err(draw_err(path))?;
    root.present().map_err(draw_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_svg_files() {
        let dir = std::env::temp_dir().join(format!("coop-plot-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let rows = vec![
            SampleRow {
                planner: "opt".into(),
                road_type: "minor".into(),
                value: -3.0,
            },
            SampleRow {
                planner: "opt".into(),
                road_type: "minor".into(),
                value: 1.0,
            },
        ];
        let p = dir.join("box.svg");
        plot_boxes(&p, "t", "s", &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("<svg"));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
