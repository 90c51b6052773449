//! Report emission: the models-by-datasets AUC table and plot-data files for
//! the scaling curves.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use super::cv::CvReport;
use super::powerlaw::PowerLawFit;

/// Renders mean +/- standard-error AUC percentages as a columnar text table,
/// models as rows and datasets as columns.
pub fn render_auc_table(reports: &[CvReport]) -> String {
    let datasets: Vec<String> = reports
        .iter()
        .map(|r| r.dataset_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut models: Vec<String> = Vec::new();
    for r in reports {
        if !models.contains(&r.model_id) {
            models.push(r.model_id.clone());
        }
    }

    let cell = |model: &str, dataset: &str| -> String {
        reports
            .iter()
            .find(|r| r.model_id == model && r.dataset_id == dataset)
            .map(|r| {
                format!(
                    "{:.1} +- {:.1}",
                    100.0 * r.mean_auc,
                    100.0 * r.se_auc
                )
            })
            .unwrap_or_else(|| "-".into())
    };

    let width = 16usize;
    let mut out = String::new();
    let _ = write!(out, "{:<12}", "model");
    for d in &datasets {
        let _ = write!(out, "{d:>width$}");
    }
    out.push('\n');
    for m in &models {
        let _ = write!(out, "{m:<12}");
        for d in &datasets {
            let _ = write!(out, "{:>width$}", cell(m, d));
        }
        out.push('\n');
    }
    out
}

/// Writes (x, y, err) triples, one point per line, plus commented fit
/// parameters and the fitted curve sampled on a log grid.
pub fn write_scaling_plot_data(
    points: &[(f64, f64, f64)],
    fit: Option<&PowerLawFit>,
    path: &Path,
) -> std::io::Result<()> {
    let mut out = String::new();
    out.push_str("# n\tmetric\tstderr\n");
    for &(x, y, e) in points {
        let _ = writeln!(out, "{x}\t{y}\t{e}");
    }
    if let Some(fit) = fit {
        let _ = writeln!(
            out,
            "# fit: asymptote={:.6} alpha={:.6} beta={:.6} r2={:.6} converged={}",
            fit.asymptote, fit.alpha, fit.beta, fit.r_squared, fit.converged
        );
        if let Some(ndb) = fit.n_db {
            let _ = writeln!(out, "# n_db={ndb:.1}");
        }
        if let (Some(&first), Some(&last)) = (points.first(), points.last()) {
            let (lo, hi) = (first.0.max(1.0), last.0 * 10.0);
            out.push_str("# curve\n");
            for i in 0..=60 {
                let x = lo * (hi / lo).powf(i as f64 / 60.0);
                let _ = writeln!(out, "# {x:.1}\t{:.6}", fit.evaluate(x));
            }
        }
    }
    std::fs::write(path, out)
}

pub fn write_reports_json(reports: &[CvReport], dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for r in reports {
        let path = dir.join(format!("cv_{}_{}.json", r.model_id, r.dataset_id));
        std::fs::write(path, serde_json::to_string_pretty(r).expect("report serializes"))?;
    }
    Ok(())
}

pub fn read_reports_json(dir: &Path) -> std::io::Result<Vec<CvReport>> {
    let mut out = Vec::new();
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("cv_") && n.ends_with(".json"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    for p in paths {
        let text = std::fs::read_to_string(&p)?;
        if let Ok(report) = serde_json::from_str::<CvReport>(&text) {
            out.push(report);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::cv::StepResult;

    fn report(model: &str, dataset: &str, auc: f64) -> CvReport {
        let steps: Vec<StepResult> = (0..6)
            .map(|s| StepResult {
                step: s,
                test_auc: auc,
                test_acc: auc - 0.05,
                selection: 1,
            })
            .collect();
        CvReport {
            model_id: model.into(),
            dataset_id: dataset.into(),
            steps,
            mean_auc: auc,
            sd_auc: 0.01,
            se_auc: 0.004,
            mean_acc: auc - 0.05,
            sd_acc: 0.01,
        }
    }

    #[test]
    fn table_lists_models_by_datasets() {
        let reports = vec![
            report("GBE", "ref", 0.97),
            report("META", "ref", 0.98),
            report("GBE", "null", 0.52),
        ];
        let table = render_auc_table(&reports);
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].contains("null") && lines[0].contains("ref"));
        assert!(lines[1].starts_with("GBE"));
        assert!(lines[1].contains("97.0"));
        assert!(lines[2].starts_with("META"));
        assert!(lines[2].contains('-'), "missing cell renders as a dash");
    }

    #[test]
    fn reports_roundtrip_through_json_files() {
        let dir = tempfile::tempdir().unwrap();
        let reports = vec![report("GBE", "ref", 0.9), report("RF", "ref", 0.8)];
        write_reports_json(&reports, dir.path()).unwrap();
        let back = read_reports_json(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].model_id, "GBE");
        assert_eq!(back[0].mean_auc, 0.9);
    }

    #[test]
    fn plot_data_has_one_line_per_point() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scaling.tsv");
        let pts = vec![(1000.0, 80.0, 0.5), (2000.0, 85.0, 0.4)];
        write_scaling_plot_data(&pts, None, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let data_lines = text.lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(data_lines, 2);
    }
}
