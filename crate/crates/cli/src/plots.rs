//! SVG charts from sweep and comparison tables.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use clap::ValueEnum;
use plotters::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum PlotKind {
    /// Window upper bound against relative speed, from a `rel_speed` sweep.
    LatencyBound,
    /// Baseline and dlt-controlled CO2 and NOx per tick, from a comparison.
    EmissionsCompare,
    /// Success probability against the swept parameter.
    SuccessSweep,
}

impl PlotKind {
    pub fn file_name(self) -> &'static str {
        match self {
            PlotKind::LatencyBound => "latency_bound.svg",
            PlotKind::EmissionsCompare => "emissions_compare.svg",
            PlotKind::SuccessSweep => "success_sweep.svg",
        }
    }
}

/// Reads the named numeric columns of a CSV table.
pub fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("cannot read table {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == *n)
                .ok_or_else(|| anyhow!("malformed table {}: missing column {n:?}", path.display()))
        })
        .collect::<Result<_>>()?;
    let mut cols = vec![Vec::new(); names.len()];
    for (row_no, row) in rdr.records().enumerate() {
        let row = row.with_context(|| format!("malformed table {} at row {}", path.display(), row_no + 2))?;
        for (c, &i) in idx.iter().enumerate() {
            let cell = row.get(i).unwrap_or_default();
            let v: f64 = cell
                .parse()
                .with_context(|| format!("malformed table {}: {cell:?} is not a number", path.display()))?;
            cols[c].push(v);
        }
    }
    ensure!(!cols[0].is_empty(), "table {} is empty", path.display());
    Ok(cols)
}

struct Series<'a> {
    name: &'a str,
    points: Vec<(f64, f64)>,
    color: RGBColor,
}

fn bounds(series: &[Series]) -> ((f64, f64), (f64, f64)) {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    let span = |it: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let x = span(&mut xs.into_iter());
    let (ylo, yhi) = span(&mut ys.into_iter());
    let pad = 0.05 * (yhi - ylo);
    (x, (ylo.min(0.0).min(ylo - pad), yhi + pad))
}

fn draw_panel<DB: DrawingBackend>(
    area: &DrawingArea<DB, plotters::coord::Shift>,
    title: &str,
    x_desc: &str,
    y_desc: &str,
    series: &[Series],
) -> Result<()>
where
    DB::ErrorType: 'static,
{
    let ((x0, x1), (y0, y1)) = bounds(series);
    let err = |e: DrawingAreaErrorKind<DB::ErrorType>| anyhow!("plot rendering failed: {e:?}");
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(err)?;
    chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw().map_err(err)?;
    for s in series {
        let color = s.color;
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
            .map_err(err)?
            .label(s.name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(err)?;
    Ok(())
}

fn zip(x: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    x.iter().copied().zip(y.iter().copied()).collect()
}

/// Renders `kind` from the table at `input` into `out_dir`. Returns the image path.
pub fn emit_plot(kind: PlotKind, input: &Path, out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let out = out_dir.join(kind.file_name());
    let blue = RGBColor(31, 119, 180);
    let orange = RGBColor(255, 127, 14);
    match kind {
        PlotKind::LatencyBound => {
            let c = read_columns(input, &["value", "l_total"])?;
            if c[0].windows(2).any(|w| w[1] <= w[0]) {
                bail!("malformed table {}: relative speeds must increase", input.display());
            }
            let root = SVGBackend::new(&out, (800, 500)).into_drawing_area();
            root.fill(&WHITE).map_err(|e| anyhow!("{e:?}"))?;
            draw_panel(
                &root,
                "Upper bound of total latency",
                "relative speed (km/h)",
                "L_total bound (s)",
                &[Series {
                    name: "bound",
                    points: zip(&c[0], &c[1]),
                    color: blue,
                }],
            )?;
            root.present().map_err(|e| anyhow!("{e:?}"))?;
        }
        PlotKind::SuccessSweep => {
            let c = read_columns(input, &["value", "p_mc", "p_closed_form"])?;
            let root = SVGBackend::new(&out, (800, 500)).into_drawing_area();
            root.fill(&WHITE).map_err(|e| anyhow!("{e:?}"))?;
            draw_panel(
                &root,
                "Trade success probability",
                "swept parameter",
                "P(success)",
                &[
                    Series {
                        name: "Monte Carlo",
                        points: zip(&c[0], &c[1]),
                        color: blue,
                    },
                    Series {
                        name: "closed form",
                        points: zip(&c[0], &c[2]),
                        color: orange,
                    },
                ],
            )?;
            root.present().map_err(|e| anyhow!("{e:?}"))?;
        }
        PlotKind::EmissionsCompare => {
            let c = read_columns(input, &["t", "baseline_co2_g", "dlt_co2_g", "baseline_nox_g", "dlt_nox_g"])?;
            let hours: Vec<f64> = c[0].iter().map(|t| t / 3600.0).collect();
            let root = SVGBackend::new(&out, (800, 900)).into_drawing_area();
            root.fill(&WHITE).map_err(|e| anyhow!("{e:?}"))?;
            let panels = root.split_evenly((2, 1));
            for (panel, (title, ylab, b, d)) in panels.iter().zip([
                ("CO2 per tick", "CO2 (g)", &c[1], &c[2]),
                ("NOx proxy per tick", "NOx (g)", &c[3], &c[4]),
            ]) {
                draw_panel(
                    panel,
                    title,
                    "time (h)",
                    ylab,
                    &[
                        Series {
                            name: "baseline",
                            points: zip(&hours, b),
                            color: orange,
                        },
                        Series {
                            name: "dlt-controlled",
                            points: zip(&hours, d),
                            color: blue,
                        },
                    ],
                )?;
            }
            root.present().map_err(|e| anyhow!("{e:?}"))?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_is_an_error_and_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("sweep.csv");
        std::fs::write(&input, "value,l_total,p_mc,p_closed_form\n").unwrap();
        let out = dir.path().join("plots");
        let err = emit_plot(PlotKind::LatencyBound, &input, &out).unwrap_err();
        assert!(err.to_string().contains("empty"), "{err}");
        assert!(!out.join("latency_bound.svg").exists());
    }

    #[test]
    fn missing_column_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("t.csv");
        std::fs::write(&input, "value\n1\n").unwrap();
        let err = emit_plot(PlotKind::SuccessSweep, &input, dir.path()).unwrap_err();
        assert!(err.to_string().contains("malformed"));
    }

    #[test]
    fn renders_svg() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("t.csv");
        let mut text = String::from("value,l_total\n");
        for v in [10.0, 20.0, 40.0, 80.0] {
            text.push_str(&format!("{v},{}\n", 300.0 / (1.8 * v)));
        }
        std::fs::write(&input, text).unwrap();
        let path = emit_plot(PlotKind::LatencyBound, &input, dir.path()).unwrap();
        let svg = std::fs::read_to_string(path).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline") || svg.contains("path"));
    }
}
