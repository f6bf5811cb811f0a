//! Ablation matrices: train × evaluate every requested (topology, RIB
//! kind, strategy) cell across the config's seeds, then emit per-run and
//! summary CSVs plus an SVG with the relevant validation curves.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{ExperimentConfig, RibKindName, StrategyName, TaskKind, TopologyName};
use crate::error::Result;
use crate::metrics;

use super::eval::EvalReport;
use super::train::{cmd_train, TrainRequest};
use super::{CONFIG_FILE, METRICS_FILE};

pub struct RunSummary {
    pub final_metric: f64,
    pub eval: EvalReport,
    /// Per-epoch validation accuracy (shapes only).
    pub epoch_curve: Vec<f64>,
}

pub struct CellResult {
    pub topology: TopologyName,
    pub rib: RibKindName,
    pub strategy: StrategyName,
    /// One entry per seed: the run summary, or the error that stopped it.
    pub runs: Vec<(u64, std::result::Result<RunSummary, String>)>,
}

impl CellResult {
    pub fn label(&self) -> String {
        format!(
            "{}-{}-{}",
            self.topology.label(),
            self.rib.label(),
            self.strategy.letter()
        )
    }

    fn metrics(&self) -> Vec<f64> {
        self.runs
            .iter()
            .filter_map(|(_, r)| r.as_ref().ok().map(|s| s.final_metric))
            .collect()
    }
}

pub struct AblateOutcome {
    pub cells: Vec<CellResult>,
    pub runs_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub curves_svg: PathBuf,
}

fn axis<T: Copy>(requested: &[T], fallback: T) -> Vec<T> {
    if requested.is_empty() {
        vec![fallback]
    } else {
        requested.to_vec()
    }
}

pub fn cmd_ablate(cfg: &ExperimentConfig, config_text: &str, out: &Path) -> Result<AblateOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(CONFIG_FILE), config_text)?;
    let section = cfg.ablate.clone().unwrap_or_default();
    let topologies = axis(&section.topologies, cfg.topology);
    let ribs = axis(&section.rib_kinds, cfg.rib.kind);
    let strategies = axis(&section.strategies, cfg.strategy);

    let mut cells = Vec::new();
    for &topology in &topologies {
        for &rib in &ribs {
            for &strategy in &strategies {
                let mut derived = cfg.clone();
                derived.topology = topology;
                derived.rib.kind = rib;
                derived.strategy = strategy;
                derived.ablate = None;
                derived.out = None;
                let mut cell = CellResult {
                    topology,
                    rib,
                    strategy,
                    runs: Vec::new(),
                };
                // A cell that fails validation (e.g. pose + fusion) is
                // reported per seed rather than silently dropped.
                let derived_ok = derived.validate().map(|_| derived);
                for &seed in &cfg.seeds {
                    let run = match &derived_ok {
                        Ok(derived) => run_cell(derived, out, &cell_dir_name(&cell, seed), seed),
                        Err(e) => Err(e.to_string()),
                    };
                    cell.runs.push((seed, run));
                }
                cells.push(cell);
            }
        }
    }

    let runs_csv = out.join("runs.csv");
    std::fs::write(&runs_csv, runs_csv_text(&cells))?;
    let summary_csv = out.join("summary.csv");
    std::fs::write(&summary_csv, summary_csv_text(&cells))?;
    let curves_svg = out.join("curves.svg");
    std::fs::write(&curves_svg, curves_svg_text(cfg.task, &cells))?;
    Ok(AblateOutcome {
        cells,
        runs_csv,
        summary_csv,
        curves_svg,
    })
}

fn cell_dir_name(cell: &CellResult, seed: u64) -> String {
    format!("{}-seed{}", cell.label(), seed)
}

fn run_cell(
    derived: &ExperimentConfig,
    out: &Path,
    dir_name: &str,
    seed: u64,
) -> std::result::Result<RunSummary, String> {
    let run_dir = out.join("cells").join(dir_name);
    let text = derived.to_toml_string().map_err(|e| e.to_string())?;
    let outcome = cmd_train(&TrainRequest {
        config: derived,
        config_text: &text,
        seed,
        out: &run_dir,
    })
    .map_err(|e| e.to_string())?;
    let eval = outcome
        .final_eval
        .ok_or_else(|| "cell trained for 0 epochs".to_string())?;
    let epoch_curve = match derived.task {
        TaskKind::Shapes => metrics::parse_file(&run_dir.join(METRICS_FILE))
            .map_err(|e| e.to_string())?
            .iter()
            .filter_map(|r| r.get_f64("val_accuracy"))
            .collect(),
        TaskKind::Pose => Vec::new(),
    };
    Ok(RunSummary {
        final_metric: eval.final_metric(),
        eval,
        epoch_curve,
    })
}

fn sanitize(msg: &str) -> String {
    msg.chars()
        .map(|c| if c == ',' || c.is_whitespace() { '_' } else { c })
        .collect()
}

fn runs_csv_text(cells: &[CellResult]) -> String {
    let mut out = String::from("topology,rib,strategy,seed,metric,status\n");
    for cell in cells {
        for (seed, run) in &cell.runs {
            let (metric, status) = match run {
                Ok(s) => (s.final_metric.to_string(), "ok".to_string()),
                Err(e) => (String::new(), format!("error:{}", sanitize(e))),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                cell.topology.label(),
                cell.rib.label(),
                cell.strategy.letter(),
                seed,
                metric,
                status
            );
        }
    }
    out
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn summary_csv_text(cells: &[CellResult]) -> String {
    let mut out = String::from("topology,rib,strategy,n,mean,std\n");
    for cell in cells {
        let metrics = cell.metrics();
        let (mean, std) = if metrics.is_empty() {
            (String::new(), String::new())
        } else {
            let (m, s) = mean_std(&metrics);
            (m.to_string(), s.to_string())
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            cell.topology.label(),
            cell.rib.label(),
            cell.strategy.letter(),
            metrics.len(),
            mean,
            std
        );
    }
    out
}

/// Mean of aligned series; panics if lengths differ (callers pass curves
/// produced by identical configs).
fn mean_curve(curves: &[&Vec<f64>]) -> Vec<f64> {
    let len = curves[0].len();
    (0..len)
        .map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / curves.len() as f64)
        .collect()
}

struct Series {
    label: String,
    dashed: bool,
    points: Vec<(f64, f64)>,
}

fn curves_svg_text(task: TaskKind, cells: &[CellResult]) -> String {
    let mut series = Vec::new();
    for cell in cells {
        let ok: Vec<&RunSummary> = cell
            .runs
            .iter()
            .filter_map(|(_, r)| r.as_ref().ok())
            .collect();
        if ok.is_empty() {
            continue;
        }
        match task {
            TaskKind::Shapes => {
                let curves: Vec<&Vec<f64>> = ok.iter().map(|s| &s.epoch_curve).collect();
                if curves[0].is_empty() {
                    continue;
                }
                let mean = mean_curve(&curves);
                series.push(Series {
                    label: cell.label(),
                    dashed: false,
                    points: indexed(&mean),
                });
            }
            TaskKind::Pose => {
                let heats: Vec<&Vec<f64>> = ok
                    .iter()
                    .map(|s| match &s.eval {
                        EvalReport::Pose {
                            mse_heatmap_steps, ..
                        } => mse_heatmap_steps,
                        _ => unreachable!("pose cells produce pose reports"),
                    })
                    .collect();
                let fields: Vec<&Vec<f64>> = ok
                    .iter()
                    .map(|s| match &s.eval {
                        EvalReport::Pose {
                            mse_field_steps, ..
                        } => mse_field_steps,
                        _ => unreachable!("pose cells produce pose reports"),
                    })
                    .collect();
                series.push(Series {
                    label: format!("{}:heatmap", cell.label()),
                    dashed: false,
                    points: indexed(&mean_curve(&heats)),
                });
                series.push(Series {
                    label: format!("{}:field", cell.label()),
                    dashed: true,
                    points: indexed(&mean_curve(&fields)),
                });
            }
        }
    }
    let (title, x_label, y_label) = match task {
        TaskKind::Shapes => ("validation accuracy", "epoch", "accuracy"),
        TaskKind::Pose => ("validation MSE by timestep", "step", "mse"),
    };
    svg_plot(title, x_label, y_label, &series)
}

fn indexed(values: &[f64]) -> Vec<(f64, f64)> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| ((i + 1) as f64, *v))
        .collect()
}

const PALETTE: [&str; 8] = [
    "#1b6ca8", "#d1495b", "#3e8914", "#7768ae", "#c77f1a", "#2e4057", "#8c5e58", "#52817f",
];

/// A minimal deterministic line plot; fixed canvas, numeric formats pinned
/// so reruns produce byte-identical files.
fn svg_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (width, height) = (760.0, 440.0);
    let (left, right, top, bottom) = (64.0, 220.0, 44.0, 52.0);
    let (pw, ph) = (width - left - right, height - top - bottom);
    let points: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.clone()).collect();
    let (mut x0, mut x1) = bounds(points.iter().map(|p| p.0));
    let (mut y0, mut y1) = bounds(points.iter().map(|p| p.1));
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = (y1 - y0) * 0.05;
    y0 -= pad;
    y1 += pad;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    );
    let _ = writeln!(
        svg,
        "  <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        svg,
        "  <text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{title}</text>",
        left + pw / 2.0
    );
    // Axes.
    let _ = writeln!(
        svg,
        "  <line x1=\"{left:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        top + ph,
        left + pw,
        top + ph
    );
    let _ = writeln!(
        svg,
        "  <line x1=\"{left:.1}\" y1=\"{top:.1}\" x2=\"{left:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        top + ph
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            sx(fx),
            top + ph + 16.0,
            tick(fx)
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>",
            left - 6.0,
            sy(fy) + 4.0,
            tick(fy)
        );
    }
    let _ = writeln!(
        svg,
        "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{x_label}</text>",
        left + pw / 2.0,
        height - 14.0
    );
    let _ = writeln!(
        svg,
        "  <text x=\"18\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">{y_label}</text>",
        top + ph / 2.0,
        top + ph / 2.0
    );
    // Series and legend.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dash = if s.dashed {
            " stroke-dasharray=\"6 3\""
        } else {
            ""
        };
        let pts = s
            .points
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            svg,
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"{dash} points=\"{pts}\"/>"
        );
        let ly = top + 8.0 + i as f64 * 18.0;
        let _ = writeln!(
            svg,
            "  <line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"1.6\"{dash}/>",
            left + pw + 14.0,
            left + pw + 40.0
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            left + pw + 46.0,
            ly + 4.0,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_row_counts_match_cells_times_seeds() {
        let cell = |t, r, s, runs: Vec<(u64, std::result::Result<RunSummary, String>)>| {
            CellResult {
                topology: t,
                rib: r,
                strategy: s,
                runs,
            }
        };
        let ok = |m: f64| {
            Ok(RunSummary {
                final_metric: m,
                eval: EvalReport::Shapes {
                    accuracy: m,
                    samples: 10,
                },
                epoch_curve: vec![m],
            })
        };
        let cells = vec![
            cell(
                TopologyName::Coupled,
                RibKindName::Rib,
                StrategyName::C,
                vec![(1, ok(0.9)), (2, ok(0.8))],
            ),
            cell(
                TopologyName::NonCoupled,
                RibKindName::Srib,
                StrategyName::A,
                vec![(1, Err("boom, with comma".into())), (2, ok(0.5))],
            ),
        ];
        let runs = runs_csv_text(&cells);
        assert_eq!(runs.lines().count(), 2 * 2 + 1);
        assert!(runs.contains("error:boom__with_comma"));
        assert!(!runs.lines().any(|l| l.split(',').count() != 6));
        let summary = summary_csv_text(&cells);
        assert_eq!(summary.lines().count(), 2 + 1);
        let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[3], "2");
        let mean: f64 = row[4].parse().unwrap();
        assert!((mean - 0.85).abs() < 1e-12);
    }

    #[test]
    fn mean_std_over_seeds() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - std::f64::consts::SQRT_2).abs() < 1e-12);
        let (m1, s1) = mean_std(&[4.0]);
        assert_eq!((m1, s1), (4.0, 0.0));
    }

    #[test]
    fn svg_is_deterministic_and_well_formed() {
        let series = vec![
            Series {
                label: "alpha".into(),
                dashed: false,
                points: vec![(1.0, 0.2), (2.0, 0.4), (3.0, 0.9)],
            },
            Series {
                label: "beta".into(),
                dashed: true,
                points: vec![(1.0, 0.1), (2.0, 0.1), (3.0, 0.3)],
            },
        ];
        let one = svg_plot("t", "x", "y", &series);
        let two = svg_plot("t", "x", "y", &series);
        assert_eq!(one, two);
        assert!(one.starts_with("<svg"));
        assert!(one.ends_with("</svg>\n"));
        assert_eq!(one.matches("<polyline").count(), 2);
        assert!(one.contains("stroke-dasharray"));
    }
}
