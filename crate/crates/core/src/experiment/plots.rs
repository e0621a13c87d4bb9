use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;
use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::synthgen::PixelBox;

/// One bar: median point estimate with a lower and upper interval bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub group: String,
    pub series: String,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

fn ordered(items: impl Iterator<Item = String>) -> Vec<String> {
    super::results::distinct(items)
}

/// Grouped bar chart with interval whiskers, one panel per metric.
pub fn bar_chart(path: &Path, panels: &[(&str, Vec<Bar>)]) -> Result<()> {
    let groups = ordered(
        panels
            .iter()
            .flat_map(|(_, bars)| bars.iter().map(|b| b.group.clone())),
    );
    let series = ordered(
        panels
            .iter()
            .flat_map(|(_, bars)| bars.iter().map(|b| b.series.clone())),
    );
    let width = (220 + 90 * groups.len() * series.len().max(1)).clamp(480, 1600) as u32;
    let root = SVGBackend::new(path, (width, 420 * panels.len().max(1) as u32)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let areas = root.split_evenly((panels.len().max(1), 1));
    let slot = 0.8 / series.len().max(1) as f64;
    for ((title, bars), area) in panels.iter().zip(&areas) {
        let mut chart = ChartBuilder::on(area)
            .caption(*title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(48)
            .build_cartesian_2d(0f64..groups.len() as f64, 0f64..1.05f64)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(0)
            .y_desc("AUROC")
            .draw()
            .map_err(plot_err)?;
        for (s, name) in series.iter().enumerate() {
            let color = Palette99::pick(s).to_rgba();
            let mine: Vec<(f64, &Bar)> = bars
                .iter()
                .filter(|b| &b.series == name)
                .map(|b| {
                    let g = groups.iter().position(|x| *x == b.group).unwrap() as f64;
                    (g + 0.1 + slot * s as f64, b)
                })
                .collect();
            chart
                .draw_series(mine.iter().map(|(x, b)| {
                    Rectangle::new([(*x, 0.0), (x + slot * 0.9, b.value)], color.filled())
                }))
                .map_err(plot_err)?
                .label(name.as_str())
                .legend(move |(x, y)| {
                    Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled())
                });
            chart
                .draw_series(mine.iter().map(|(x, b)| {
                    ErrorBar::new_vertical(
                        x + slot * 0.45,
                        b.lower,
                        b.value,
                        b.upper,
                        BLACK.filled(),
                        6,
                    )
                }))
                .map_err(plot_err)?;
        }
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::LowerRight)
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        for (g, name) in groups.iter().enumerate() {
            let (px, py) = chart.backend_coord(&(g as f64 + 0.5, 0.0));
            root.draw(&Text::new(
                name.clone(),
                (px, py + 8),
                ("sans-serif", 13)
                    .into_font()
                    .style(FontStyle::Normal)
                    .color(&BLACK)
                    .pos(plotters::style::text_anchor::Pos::new(
                        plotters::style::text_anchor::HPos::Center,
                        plotters::style::text_anchor::VPos::Top,
                    )),
            ))
            .map_err(plot_err)?;
        }
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// A line with interval whiskers at each point.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub name: String,
    /// `(x, value, lower, upper)`.
    pub points: Vec<(f64, f64, f64, f64)>,
}

pub fn line_chart(path: &Path, title: &str, x_desc: &str, lines: &[Line]) -> Result<()> {
    let xs = lines.iter().flat_map(|l| l.points.iter().map(|p| p.0));
    let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
        (a.min(x), b.max(x))
    });
    let (lo, hi) = if lo < hi { (lo, hi) } else { (-1.0, 1.0) };
    let pad = (hi - lo) * 0.05;
    let root = SVGBackend::new(path, (720, 460)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(48)
        .build_cartesian_2d((lo - pad)..(hi + pad), 0f64..1.05f64)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc("AUROC")
        .draw()
        .map_err(plot_err)?;
    for (i, line) in lines.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(
                line.points.iter().map(|p| (p.0, p.1)),
                color.stroke_width(2),
            ))
            .map_err(plot_err)?
            .label(line.name.as_str())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 14, y)], color.stroke_width(2))
            });
        chart
            .draw_series(
                line.points
                    .iter()
                    .map(|&(x, v, l, u)| ErrorBar::new_vertical(x, l, v, u, color.filled(), 6)),
            )
            .map_err(plot_err)?;
        chart
            .draw_series(
                line.points
                    .iter()
                    .map(|&(x, v, _, _)| Circle::new((x, v), 3, color.filled())),
            )
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

fn heat(v: f64) -> [f64; 3] {
    let ramp = |c: f64| (1.5 - (4.0 * v - c).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

/// Writes the image with the map blended on top as an RGB PNG; an optional
/// box is outlined in green.
pub fn write_overlay(
    path: &Path,
    image: &Array2<f64>,
    cam: &Array2<f64>,
    outline: Option<PixelBox>,
    alpha: f64,
) -> Result<()> {
    if image.dim() != cam.dim() {
        return Err(Error::Shape(format!(
            "image {:?} and map {:?} differ",
            image.dim(),
            cam.dim()
        )));
    }
    let (h, w) = image.dim();
    let mut out = RgbImage::new(w as u32, h as u32);
    for ((y, x), &g) in image.indexed_iter() {
        let c = heat(cam[[y, x]].clamp(0.0, 1.0));
        let px = c.map(|c| ((1.0 - alpha) * g.clamp(0.0, 1.0) + alpha * c) * 255.0);
        out.put_pixel(x as u32, y as u32, Rgb(px.map(|v| v.round() as u8)));
    }
    if let Some([top, left, bottom, right]) = outline {
        let (bottom, right) = (bottom.min(h).max(1) - 1, right.min(w).max(1) - 1);
        for x in left..=right {
            for y in [top, bottom] {
                out.put_pixel(x as u32, y as u32, Rgb([0, 255, 0]));
            }
        }
        for y in top..=bottom {
            for x in [left, right] {
                out.put_pixel(x as u32, y as u32, Rgb([0, 255, 0]));
            }
        }
    }
    out.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_render_to_svg() {
        let dir = tempfile::tempdir().unwrap();
        let bars: Vec<Bar> = ["skewed", "unskewed"]
            .iter()
            .flat_map(|g| {
                ["all_layers", "last_layer_mc_a"].iter().map(move |s| Bar {
                    group: g.to_string(),
                    series: s.to_string(),
                    value: 0.7,
                    lower: 0.6,
                    upper: 0.8,
                })
            })
            .collect();
        let path = dir.path().join("bars.svg");
        bar_chart(&path, &[("target", bars.clone()), ("attribute", bars)]).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert!(
            svg.starts_with("<svg") && svg.contains("unskewed") && svg.contains("last_layer_mc_a")
        );

        let path = dir.path().join("line.svg");
        let line = Line {
            name: "last_layer_mc_a".into(),
            points: (0..11)
                .map(|i| (-1.0 + 0.2 * i as f64, 0.7, 0.65, 0.75))
                .collect(),
        };
        line_chart(&path, "sweep", "source phi", &[line]).unwrap();
        assert!(std::fs::read_to_string(&path)
            .unwrap()
            .contains("<polyline"));
    }

    #[test]
    fn overlay_marks_the_box() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.png");
        let image = Array2::from_elem((8, 8), 0.5);
        let cam = Array2::from_shape_fn((8, 8), |(y, _)| y as f64 / 7.0);
        write_overlay(&path, &image, &cam, Some([1, 1, 4, 4]), 0.5).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.get_pixel(1, 1).0, [0, 255, 0]);
        assert_ne!(img.get_pixel(6, 6).0, [0, 255, 0]);
    }
}
