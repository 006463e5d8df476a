use std::path::Path;
use std::process::Command;

use moment_knockoffs::harness::plot::{family_chart, QUINTILE_MIN_FEATURES};
use moment_knockoffs::harness::report::SummarySource;
use moment_knockoffs::harness::timegrid::write_grid_csv;
use moment_knockoffs::harness::trace::{read_detail_trace, DetailEntry, TRACE_HEADER};
use moment_knockoffs::harness::{self, emit_plots, run_experiment, ExperimentConfig, Report};
use moment_knockoffs::marginals::{fit_marginals, MarginalKind};
use moment_knockoffs::moments::{aggregate_residuals, build_constraints, MomentFamily, Variant};
use moment_knockoffs::optimizer::{OptimizerConfig, PenalizedObjective, PenaltyWeights};
use moment_knockoffs::{synth, DataMatrix};

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n)
}

fn corr(x: &[f64], y: &[f64]) -> f64 {
    let (mx, vx) = mean_var(x);
    let (my, vy) = mean_var(y);
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / x.len() as f64 / (vx * vy).sqrt()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn copy_detail(features: &DataMatrix) -> (Vec<DetailEntry>, moment_knockoffs::moments::ConstraintSet) {
    let m = fit_marginals(features, MarginalKind::Normal).unwrap();
    let cs = build_constraints(features).unwrap();
    let problem = PenalizedObjective::new(features, &m, &cs, PenaltyWeights::default(), 1.0).unwrap();
    let values = problem.constraint_values(features).unwrap();
    let detail = (0..3).map(|iteration| DetailEntry { iteration, values: values.clone() }).collect();
    (detail, cs)
}

#[test]
fn report_matches_recomputation_from_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::synthetic(4, 100, 11, dir.path());
    cfg.optimizer.max_iterations = 5;
    cfg.optimizer.tolerance = f64::MIN_POSITIVE;
    cfg.optimizer.detail_trace = true;
    run_experiment(&cfg).unwrap();
    let out = dir.path();

    let report: Report =
        serde_json::from_str(&std::fs::read_to_string(out.join(harness::REPORT_JSON)).unwrap()).unwrap();
    let features = DataMatrix::read_csv_path(out.join(harness::DATA_CSV)).unwrap();
    let model = harness::read_copula(&out.join(harness::COPULA_JSON)).unwrap();
    assert_eq!(report.marginals, model.marginals);
    assert_eq!((report.n, report.p), (100, 4));
    assert_eq!(report.num_pairs, 6);
    assert_eq!(report.num_constraints, 108);

    for (j, s) in report.features.iter().enumerate() {
        let (m, v) = mean_var(features.col(j));
        assert!(close(s.mean, m, 1e-12) && close(s.variance, v, 1e-12));
    }

    let cs = build_constraints(&features).unwrap();
    let sources: Vec<(SummarySource, usize)> = report.summaries.iter().map(|s| (s.source, s.iteration)).collect();
    assert_eq!(sources[0], (SummarySource::Initial, 0));
    assert_eq!(sources[1], (SummarySource::Snapshot, 3));
    assert_eq!(sources[2], (SummarySource::Final, report.best_iteration));
    for summary in &report.summaries {
        let file = match summary.source {
            SummarySource::Initial => harness::INITIAL_CSV.to_string(),
            SummarySource::Snapshot => harness::snapshot_csv(summary.iteration),
            SummarySource::Final => harness::KNOCKOFF_CSV.to_string(),
        };
        let k = DataMatrix::read_csv_path(out.join(file)).unwrap();
        for (j, ks) in summary.knockoffs.iter().enumerate() {
            let (m, v) = mean_var(k.col(j));
            assert!(close(ks.mean, m, 1e-12) && close(ks.variance, v, 1e-12));
            assert!(close(ks.feature_correlation, corr(features.col(j), k.col(j)), 1e-10));
            let d = moment_knockoffs::kstest::ks_statistic(k.col(j), &model.marginals[j]).unwrap();
            assert!(close(ks.ks_statistic, d, 1e-12));
        }
        let r = aggregate_residuals(&features, &k, &cs).unwrap().as_array();
        let got = summary.residuals.as_array();
        for f in 0..3 {
            assert!(close(got[f], r[f], 1e-10));
        }
    }

    let text = std::fs::read_to_string(out.join(harness::TRACE_CSV)).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), TRACE_HEADER.join(","));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), report.constraint_trace.len());
    assert_eq!(rows.len(), report.iterations_run + 1);
    for (row, t) in rows.iter().zip(&report.constraint_trace) {
        let r = t.residuals.as_array();
        assert_eq!(row[0] as usize, t.iteration);
        assert_eq!(&row[1..6], &[t.objective, r[0], r[1], r[2], t.ks_penalty]);
    }

    let detail = read_detail_trace(out.join(harness::DETAIL_JSON)).unwrap();
    assert_eq!(detail.len(), rows.len());
    for name in ["correlation", "coskewness", "cokurtosis"] {
        assert!(out.join(harness::PLOTS_DIR).join(format!("{name}.svg")).exists());
    }
}

#[test]
fn plotting_without_detail_writes_nothing() {
    let f = synth::generate(3, 40, 1, None).unwrap();
    let cs = build_constraints(&f).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("plots");
    let err = emit_plots(&[], &cs, 40, &target).unwrap_err();
    assert!(err.to_string().contains("--detail-trace"));
    assert!(!target.exists());
}

#[test]
fn small_problems_plot_every_pair() {
    let f = synth::generate(4, 60, 2, None).unwrap();
    let (detail, cs) = copy_detail(&f);
    for family in MomentFamily::ALL {
        let chart = family_chart(&detail, &cs, family).unwrap();
        assert_eq!(chart.pairs.len(), 6);
        // one curve per slot and variant
        let per_pair = 3 * (family.order() as usize - 1);
        assert_eq!(chart.curves.len(), 6 * per_pair);
        let dashed = chart.curves.iter().filter(|c| c.variant == Variant::BothKnockoff).count();
        assert_eq!(dashed, chart.curves.len() / 3);
    }
}

#[test]
fn target_lines_sit_at_the_targets() {
    // copy knockoffs achieve every target exactly, so each curve point lies on a target line
    let f = synth::generate(3, 60, 3, None).unwrap();
    let (detail, cs) = copy_detail(&f);
    let chart = family_chart(&detail, &cs, MomentFamily::Coskewness).unwrap();
    for &(pair, slot, target) in &chart.targets {
        let want = cs.pairs().iter().find(|t| (t.left, t.right) == pair).map(|t| t.values[slot]).unwrap();
        assert_eq!(target, want);
    }
    let svg = chart.to_svg("t");
    let attr = |line: &str, name: &str| -> String {
        let start = line.find(&format!(" {name}=\"")).unwrap() + name.len() + 3;
        line[start..].split('"').next().unwrap().to_string()
    };
    let target_ys: Vec<String> =
        svg.lines().filter(|l| l.contains(r#"class="target""#)).map(|l| attr(l, "y1")).collect();
    assert_eq!(target_ys.len(), chart.targets.len());
    for line in svg.lines().filter(|l| l.starts_with("<polyline")) {
        for pt in attr(line, "points").split(' ') {
            let y = pt.split(',').nth(1).unwrap();
            assert!(target_ys.iter().any(|t| t == y), "{y} not on a target line");
        }
    }
}

#[test]
fn large_problems_plot_quintile_pairs() {
    let f = synth::generate(QUINTILE_MIN_FEATURES, 60, 4, None).unwrap();
    let m = fit_marginals(&f, MarginalKind::Normal).unwrap();
    let cs = build_constraints(&f).unwrap();
    let problem = PenalizedObjective::new(&f, &m, &cs, PenaltyWeights::default(), 1.0).unwrap();
    let k = synth::generate_normal(QUINTILE_MIN_FEATURES, 60, 5).unwrap();
    let detail = vec![DetailEntry { iteration: 0, values: problem.constraint_values(&k).unwrap() }];
    let chart = family_chart(&detail, &cs, MomentFamily::Correlation).unwrap();
    assert!((2..=6).contains(&chart.pairs.len()), "{:?}", chart.pairs);
    assert!(chart.pairs.len() < cs.pairs().len());
}

#[test]
fn empty_grid_writes_header_only() {
    let mut buf = Vec::new();
    write_grid_csv(&[], &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
}

#[test]
fn larger_run_reduces_every_residual_family() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::synthetic(8, 1000, 5, dir.path());
    cfg.optimizer = OptimizerConfig { max_iterations: 3, seed: 5, ..Default::default() };
    cfg.plots = false;
    let out = run_experiment(&cfg).unwrap();
    let mut prev = out.result.initial.residuals.as_array();
    for t in &out.result.trace {
        let r = t.residuals.as_array();
        assert!(r[0] < prev[0] && r[1] < prev[1], "{prev:?} -> {r:?}");
        prev = r;
    }
}

fn cli(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_knockoffs")).args(args).arg("--out").arg(out).output().unwrap()
}

#[test]
fn cli_stages_chain_through_one_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    for args in [
        &["synth", "--p", "3", "--n", "60", "--seed", "2"][..],
        &["fit", "--marginal", "normal"],
        &["init", "--seed", "2"],
        &["optimize", "--iters", "3", "--detail-trace"],
        &["plot"],
    ] {
        let o = cli(args, out);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in
        [harness::DATA_CSV, harness::COPULA_JSON, harness::INITIAL_CSV, harness::KNOCKOFF_CSV, harness::REPORT_JSON]
    {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(out.join(harness::PLOTS_DIR).join("cokurtosis.svg").exists());
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(cli(&["run", "--p", "3", "--n", "50", "--iters", "2"], out).status.code(), Some(0));
    assert_eq!(cli(&["run", "--p", "3", "--n", "50", "--weights", "1,2"], out).status.code(), Some(2));
    assert_eq!(cli(&["run", "--p", "3", "--n", "50", "--marginal", "cauchy"], out).status.code(), Some(2));
    assert_eq!(cli(&["optimize", "--data", "/nonexistent/data.csv"], out).status.code(), Some(2));

    // a constant column cannot be standardized
    let flat = dir.path().join("flat");
    std::fs::create_dir(&flat).unwrap();
    let rows: String = (0..20).map(|i| format!("{i},1\n")).collect();
    std::fs::write(flat.join("data.csv"), format!("a,b\n{rows}")).unwrap();
    assert_eq!(cli(&["fit", "--marginal", "normal"], &flat).status.code(), Some(3));
}

#[test]
fn cli_plot_requires_detail_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert!(cli(&["run", "--p", "3", "--n", "50", "--iters", "2"], out).status.success());
    let o = cli(&["plot"], out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--detail-trace"));
}
