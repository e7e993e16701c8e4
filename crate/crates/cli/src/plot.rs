//! SVG figures: value field overlay, ε-convergence and residual trace.

use std::path::Path;

use impulse_qvi::config::Config;
use impulse_qvi::levy::lambda_norms;
use plotters::prelude::*;

use crate::artifacts::{prepare_dir, read_manifest, Table, VALUE_FIELD_HEADER};
use crate::commands::SWEEP_HEADER;
use crate::{code, Failure};

const SIZE: (u32, u32) = (900, 560);
const TRACE_HEADER: [&str; 5] = ["iteration", "increment", "excess", "active", "inner_iterations"];

fn draw_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure {
        code: code::NUMERICAL,
        message: format!("{}: {e}", path.display()),
    }
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = 0.05 * (hi - lo).max(1e-12);
    (lo - pad, hi + pad)
}

fn log_span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite() && *v > 0.0).fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.1, 1.0);
    }
    (lo / 1.5, hi * 1.5)
}

/// Short tick label for log axes.
fn tick(v: f64) -> String {
    if (1e-3..1e3).contains(&v.abs()) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.0e}")
    }
}

/// Maximal runs of action nodes as `[first, last]` index pairs.
pub fn action_runs(region: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &a) in region.iter().enumerate() {
        match (a, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, region.len() - 1));
    }
    runs
}

fn overlay(path: &Path, x: &[f64], u: &[f64], mu: &[f64], action: &[bool]) -> Result<(), Box<dyn std::error::Error>> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let (x0, x1) = span(x.iter().copied());
    let (y0, y1) = span(u.iter().chain(mu).copied());
    let mut chart = ChartBuilder::on(&root)
        .caption("value function u and intervention Mu", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)?;
    chart.configure_mesh().x_desc("x").y_desc("value").draw()?;
    let h = if x.len() > 1 { x[1] - x[0] } else { 0.0 };
    let shade = RGBColor(255, 165, 0).mix(0.25).filled();
    let runs = action_runs(action);
    let mut shaded = chart.draw_series(
        runs.iter().map(|&(a, b)| Rectangle::new([(x[a] - h / 2.0, y0), (x[b] + h / 2.0, y1)], shade)),
    )?;
    if !runs.is_empty() {
        shaded = shaded.label("action region");
        shaded.legend(move |(px, py)| Rectangle::new([(px, py - 5), (px + 20, py + 5)], shade));
    }
    chart
        .draw_series(LineSeries::new(x.iter().copied().zip(u.iter().copied()), BLUE.stroke_width(2)))?
        .label("u")
        .legend(|(px, py)| PathElement::new(vec![(px, py), (px + 20, py)], BLUE));
    chart
        .draw_series(LineSeries::new(x.iter().copied().zip(mu.iter().copied()), RED))?
        .label("Mu")
        .legend(|(px, py)| PathElement::new(vec![(px, py), (px + 20, py)], RED));
    chart.configure_series_labels().border_style(BLACK).background_style(WHITE.mix(0.8)).draw()?;
    root.present()?;
    Ok(())
}

type Curve = (&'static str, RGBColor, Vec<(f64, f64)>);

fn convergence(path: &Path, curves: &[Curve]) -> Result<(), Box<dyn std::error::Error>> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let (x0, x1) = log_span(curves.iter().flat_map(|c| c.2.iter().map(|p| p.0)));
    let (y0, y1) = log_span(curves.iter().flat_map(|c| c.2.iter().map(|p| p.1)));
    let mut chart = ChartBuilder::on(&root)
        .caption("truncation convergence", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d((x0..x1).log_scale(), (y0..y1).log_scale())?;
    chart
        .configure_mesh()
        .x_desc("eps")
        .y_desc("size")
        .x_label_formatter(&|v| tick(*v))
        .y_label_formatter(&|v| tick(*v))
        .draw()?;
    for (label, color, pts) in curves {
        let color = *color;
        let pts: Vec<(f64, f64)> = pts.iter().copied().filter(|p| p.0 > 0.0 && p.1 > 0.0).collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))?
            .label(*label)
            .legend(move |(px, py)| PathElement::new(vec![(px, py), (px + 20, py)], color));
        chart.draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled())))?;
    }
    chart.configure_series_labels().border_style(BLACK).background_style(WHITE.mix(0.8)).draw()?;
    root.present()?;
    Ok(())
}

fn residual_trace(path: &Path, increments: &[(f64, f64)], excess: &[(f64, f64)]) -> Result<(), Box<dyn std::error::Error>> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let n = increments.len().max(1) as f64;
    let (y0, y1) = log_span(increments.iter().chain(excess).map(|p| p.1));
    let mut chart = ChartBuilder::on(&root)
        .caption("outer iteration trace", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(0.5..n + 0.5, (y0..y1).log_scale())?;
    chart
        .configure_mesh()
        .x_desc("iteration")
        .y_desc("sup norm")
        .x_label_formatter(&|v| format!("{v:.0}"))
        .y_label_formatter(&|v| tick(*v))
        .draw()?;
    let inc: Vec<(f64, f64)> = increments.iter().copied().filter(|p| p.1 > 0.0).collect();
    chart
        .draw_series(LineSeries::new(inc.clone(), BLUE.stroke_width(2)))?
        .label("|u_k - u_(k-1)|")
        .legend(|(px, py)| PathElement::new(vec![(px, py), (px + 20, py)], BLUE));
    chart.draw_series(inc.into_iter().map(|p| Circle::new(p, 3, BLUE.filled())))?;
    let exc: Vec<(f64, f64)> = excess.iter().copied().filter(|p| p.1 > 0.0).collect();
    if !exc.is_empty() {
        chart
            .draw_series(exc.into_iter().map(|p| Cross::new(p, 4, RED)))?
            .label("max (u_k - u_(k-1))+")
            .legend(|(px, py)| Cross::new((px + 10, py), 4, RED));
    }
    chart.configure_series_labels().border_style(BLACK).background_style(WHITE.mix(0.8)).draw()?;
    root.present()?;
    Ok(())
}

/// Λ(ε) on a log grid between the smallest resolvable level and the jump reach.
fn lambda_curve(cfg: &Config) -> Result<Vec<(f64, f64)>, Failure> {
    let spec = cfg.problem_spec()?;
    let reach = spec.jump.bound_scale() * spec.levy.support_radius();
    if !(reach > 0.0) || !reach.is_finite() {
        return Ok(Vec::new());
    }
    let levels: Vec<f64> = (0..24).map(|k| reach * 0.5 * 10f64.powf(-2.5 * k as f64 / 23.0)).collect();
    let quad = cfg.quadrature_for_levels(&levels)?;
    let grid = cfg.grid()?;
    let xs: Vec<f64> = (0..32).map(|i| grid.x(i * (grid.n - 1) / 31)).collect();
    Ok(levels
        .iter()
        .filter_map(|&e| lambda_norms(&spec.jump, e, &quad, &xs).ok().map(|r| (e, r.lambda)))
        .collect())
}

pub fn plot(manifest: &Path, out: Option<&Path>) -> Result<u8, Failure> {
    let (m, dir) = read_manifest(manifest)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| dir.clone());
    prepare_dir(&out)?;
    let locate = |name: &str| {
        m.outputs
            .get(name)
            .map(|p| dir.join(p))
            .ok_or_else(|| Failure::input(format!("manifest has no {name} output")))
    };

    let field_path = locate("value_field")?;
    let field = Table::read(&field_path, &VALUE_FIELD_HEADER)?;
    let x = field.numbers("x", &field_path)?;
    let u = field.numbers("u", &field_path)?;
    let mu = field.numbers("Mu", &field_path)?;
    let region = field.column("region").unwrap();
    let action = field
        .rows
        .iter()
        .enumerate()
        .map(|(k, r)| match r[region].as_str() {
            "A" => Ok(true),
            "C" => Ok(false),
            other => Err(Failure::input(format!("{}: row {}: region {other:?} is not C or A", field_path.display(), k + 1))),
        })
        .collect::<Result<Vec<bool>, Failure>>()?;
    if x.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Failure::input(format!("{}: x is not strictly increasing", field_path.display())));
    }

    let trace_path = locate("trace")?;
    let trace = Table::read(&trace_path, &TRACE_HEADER)?;
    let it = trace.numbers("iteration", &trace_path)?;
    let inc = trace.numbers("increment", &trace_path)?;
    let exc = trace.numbers("excess", &trace_path)?;

    let cfg = Config::from_toml_str(&m.config)?;
    let mut curves: Vec<Curve> = vec![("Lambda(eps)", BLUE, lambda_curve(&cfg)?)];
    let sweep_path = m.outputs.get("sweep").map(|p| dir.join(p)).unwrap_or_else(|| dir.join("sweep.csv"));
    if sweep_path.is_file() {
        let sweep = Table::read(&sweep_path, &SWEEP_HEADER)?;
        let eps = sweep.numbers("eps", &sweep_path)?;
        let bound = sweep.numbers("c_eps", &sweep_path)?;
        let diff = sweep.numbers("diff_prev", &sweep_path)?;
        curves.push(("C(eps)", RED, eps.iter().copied().zip(bound).collect()));
        curves.push(("|u_eps - u_eps'|", GREEN, eps.iter().copied().zip(diff).filter(|p| p.1.is_finite()).collect()));
    }

    let files = [out.join("value_overlay.svg"), out.join("eps_convergence.svg"), out.join("residual_trace.svg")];
    overlay(&files[0], &x, &u, &mu, &action).map_err(|e| draw_failure(&files[0], e))?;
    convergence(&files[1], &curves).map_err(|e| draw_failure(&files[1], e))?;
    let pts = |ys: &[f64]| it.iter().copied().zip(ys.iter().copied()).collect::<Vec<_>>();
    residual_trace(&files[2], &pts(&inc), &pts(&exc)).map_err(|e| draw_failure(&files[2], e))?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(code::OK)
}

#[cfg(test)]
mod tests {
    use super::action_runs;

    #[test]
    fn runs_of_action_nodes() {
        assert!(action_runs(&[false, false]).is_empty());
        assert_eq!(action_runs(&[true, true, false, true]), vec![(0, 1), (3, 3)]);
        assert_eq!(action_runs(&[false, true, true]), vec![(1, 2)]);
    }
}
