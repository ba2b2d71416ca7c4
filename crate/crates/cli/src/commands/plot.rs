use std::path::{Path, PathBuf};
use std::str::FromStr;

use metachex::analysis::EmbeddingExport;
use metachex::labels::pathology_index;
use metachex::metrics::{bland_altman, roc_auc, BlandAltmanResult, RocResult};
use metachex::model::Variant;
use metachex::preprocess::unscale_age;
use plotters::prelude::*;

use super::Outcome;
use crate::config::Loaded;
use crate::error::{CliError, Result};
use crate::io::{default_path, read_text, stamp_svg, write_file, Datasets, PredictionFile};

const SIZE: (u32, u32) = (640, 480);
type RowFilter = dyn Fn(&metachex::analysis::EmbeddingRow) -> bool;

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(23, 190, 207),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorBy {
    Gender,
    Position,
    Age,
}

impl FromStr for ColorBy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gender" => Ok(ColorBy::Gender),
            "position" => Ok(ColorBy::Position),
            "age" => Ok(ColorBy::Age),
            other => Err(format!("expected gender, position or age, got `{other}`")),
        }
    }
}

fn plot_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Plot(e.to_string())
}

fn svg_path(path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("svg") => Ok(()),
        _ => Err(CliError::Config(format!("figures are written as SVG; {} needs a .svg extension", path.display()))),
    }
}

fn finish(l: &Loaded, svg: String, path: &Path, outcome: &mut Outcome) -> Result<()> {
    write_file(path, stamp_svg(&svg, &l.hash))?;
    outcome.artifact(path);
    Ok(())
}

pub fn roc_svg(curves: &[(String, RocResult)]) -> Result<String> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("ROC", ("sans-serif", 20))
            .margin(10)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d(0f64..1f64, 0f64..1f64)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("False positive rate")
            .y_desc("True positive rate")
            .draw()
            .map_err(plot_err)?;
        chart
            .draw_series(LineSeries::new([(0.0, 0.0), (1.0, 1.0)], BLACK.mix(0.3)))
            .map_err(plot_err)?;
        for (i, (name, roc)) in curves.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(roc.fpr.iter().copied().zip(roc.tpr.iter().copied()), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(format!("{name} (AUC = {:.3})", roc.auc))
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::LowerRight)
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

pub fn bland_altman_svg(ba: &BlandAltmanResult) -> Result<String> {
    let xs = ba.pairs.iter().map(|p| p.0);
    let ys = ba.pairs.iter().map(|p| p.1);
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (y0, y1) = ys
        .chain([ba.loa_low, ba.loa_high])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let pad = |a: f64, b: f64| {
        let m = ((b - a) * 0.1).max(1.0);
        (a - m)..(b + m)
    };
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let xr = pad(x0, x1);
        let mut chart = ChartBuilder::on(&root)
            .caption("Bland-Altman: predicted vs labelled age", ("sans-serif", 20))
            .margin(10)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d(xr.clone(), pad(y0, y1))
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("Mean of predicted and labelled age (years)")
            .y_desc("Predicted - labelled (years)")
            .draw()
            .map_err(plot_err)?;
        chart
            .draw_series(ba.pairs.iter().map(|&(m, d)| Circle::new((m, d), 3, PALETTE[0].filled())))
            .map_err(plot_err)?;
        for (v, name, color) in [
            (ba.bias, format!("bias {:.2}", ba.bias), PALETTE[1]),
            (ba.loa_low, format!("-1.96 SD {:.2}", ba.loa_low), PALETTE[2]),
            (ba.loa_high, format!("+1.96 SD {:.2}", ba.loa_high), PALETTE[2]),
        ] {
            chart
                .draw_series(LineSeries::new([(xr.start, v), (xr.end, v)], color.stroke_width(2)))
                .map_err(plot_err)?
                .label(name)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

pub fn tsne_svg(export: &EmbeddingExport, color_by: ColorBy) -> Result<String> {
    if !export.is_projected() {
        return Err(CliError::Config("embedding file has no x,y columns; run `analyze embed --project`".into()));
    }
    let pts: Vec<[f64; 2]> = export.rows.iter().filter_map(|r| r.xy).collect();
    let bounds = |k: usize| {
        let (a, b) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[k]), b.max(p[k])));
        let m = ((b - a) * 0.05).max(1e-6);
        (a - m)..(b + m)
    };
    let max_age = export.rows.iter().map(|r| r.age_years).fold(1.0, f64::max);
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let title = match color_by {
            ColorBy::Gender => "t-SNE of backbone features by gender",
            ColorBy::Position => "t-SNE of backbone features by view position",
            ColorBy::Age => "t-SNE of backbone features by age",
        };
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(40)
            .build_cartesian_2d(bounds(0), bounds(1))
            .map_err(plot_err)?;
        chart.configure_mesh().disable_mesh().draw().map_err(plot_err)?;
        match color_by {
            ColorBy::Age => {
                chart
                    .draw_series(export.rows.iter().filter_map(|r| {
                        let t = (r.age_years / max_age).clamp(0.0, 1.0);
                        let c = RGBColor((255.0 * t) as u8, 40, (255.0 * (1.0 - t)) as u8);
                        r.xy.map(|[x, y]| Circle::new((x, y), 3, c.filled()))
                    }))
                    .map_err(plot_err)?
                    .label(format!("age: blue 0 .. red {max_age:.0} years"))
                    .legend(|(x, y)| Circle::new((x + 8, y), 3, PALETTE[3].filled()));
            }
            _ => {
                let groups: [(&str, Box<RowFilter>); 2] = match color_by {
                    ColorBy::Gender => [
                        ("female", Box::new(|r| r.gender == metachex::labels::Gender::Female)),
                        ("male", Box::new(|r| r.gender == metachex::labels::Gender::Male)),
                    ],
                    _ => [
                        ("AP", Box::new(|r| r.position == metachex::labels::ViewPosition::AP)),
                        ("PA", Box::new(|r| r.position == metachex::labels::ViewPosition::PA)),
                    ],
                };
                for (i, (name, keep)) in groups.iter().enumerate() {
                    let color = PALETTE[i];
                    chart
                        .draw_series(
                            export
                                .rows
                                .iter()
                                .filter(|r| keep(r))
                                .filter_map(|r| r.xy.map(|[x, y]| Circle::new((x, y), 3, color.filled()))),
                        )
                        .map_err(plot_err)?
                        .label(*name)
                        .legend(move |(x, y)| Circle::new((x + 8, y), 3, color.filled()));
                }
            }
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

fn scores_for(file: &PredictionFile, label: Option<&str>, data: &Datasets) -> Result<(Vec<f64>, Vec<u8>)> {
    if file.variant == Variant::Tb {
        return crate::commands::evaluate::tb_scores(file, data);
    }
    let label = label.ok_or_else(|| CliError::Config("ROC of pathology predictions needs --label NAME".into()))?;
    let recs = data.cxr_records(&file.ids())?;
    let pick = |r: &metachex::model::PredictionRecord| -> Option<f64> {
        match label {
            "gender" => r.gender_prob,
            "position" => r.position_prob,
            name => pathology_index(name).and_then(|k| r.pathology_probs.map(|p| p[k])),
        }
    };
    let scores = file
        .records
        .iter()
        .map(|r| pick(r).ok_or_else(|| CliError::Config(format!("predictions have no `{label}` output"))))
        .collect::<Result<Vec<_>>>()?;
    let labels = recs
        .iter()
        .map(|r| match label {
            "gender" => r.gender.target() as u8,
            "position" => r.position.target() as u8,
            name => pathology_index(name).map_or(0, |k| r.pathology[k]),
        })
        .collect();
    Ok((scores, labels))
}

pub fn roc(l: &Loaded, predictions: &[PathBuf], label: Option<&str>, out: Option<PathBuf>) -> Result<Outcome> {
    if predictions.is_empty() {
        return Err(CliError::Config("at least one --predictions file is required".into()));
    }
    let path = default_path(l, out, "figures/roc.svg");
    svg_path(&path)?;
    let data = Datasets::load(l)?;
    let mut curves = Vec::new();
    for p in predictions {
        let file = PredictionFile::read(p)?;
        let (scores, labels) = scores_for(&file, label, &data)?;
        let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("predictions").to_string();
        curves.push((name, roc_auc(&scores, &labels)?));
    }
    let mut outcome = Outcome::new("plot", Some(&l.hash));
    finish(l, roc_svg(&curves)?, &path, &mut outcome)?;
    outcome.details = serde_json::json!(curves.iter().map(|(n, r)| (n.clone(), r.auc)).collect::<std::collections::BTreeMap<_, _>>());
    Ok(outcome)
}

pub fn bland_altman_plot(l: &Loaded, predictions: &Path, out: Option<PathBuf>) -> Result<Outcome> {
    let path = default_path(l, out, "figures/bland_altman.svg");
    svg_path(&path)?;
    let data = Datasets::load(l)?;
    let file = PredictionFile::read(predictions)?;
    if file.variant != Variant::Metachexnet {
        return Err(CliError::Mismatch(format!("Bland-Altman needs metachexnet predictions, got {}", file.variant)));
    }
    let recs = data.cxr_records(&file.ids())?;
    let predicted: Vec<f64> = file
        .records
        .iter()
        .map(|r| unscale_age(r.age_scaled.unwrap_or(f64::NAN), &l.config.preprocess))
        .collect();
    let labelled: Vec<f64> = recs.iter().map(|r| r.age_years).collect();
    let ba = bland_altman(&predicted, &labelled)?;
    let mut outcome = Outcome::new("plot", Some(&l.hash));
    finish(l, bland_altman_svg(&ba)?, &path, &mut outcome)?;
    outcome.details = serde_json::json!({ "bias": ba.bias, "loa_low": ba.loa_low, "loa_high": ba.loa_high });
    Ok(outcome)
}

pub fn tsne(l: &Loaded, embeddings: &Path, color_by: ColorBy, out: Option<PathBuf>) -> Result<Outcome> {
    let name = match color_by {
        ColorBy::Gender => "gender",
        ColorBy::Position => "position",
        ColorBy::Age => "age",
    };
    let path = default_path(l, out, &format!("figures/tsne_{name}.svg"));
    svg_path(&path)?;
    let export = EmbeddingExport::from_csv(read_text(embeddings)?.as_bytes())?;
    let mut outcome = Outcome::new("plot", Some(&l.hash));
    finish(l, tsne_svg(&export, color_by)?, &path, &mut outcome)?;
    Ok(outcome)
}
