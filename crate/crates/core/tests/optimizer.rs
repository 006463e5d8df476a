use moment_knockoffs::copula::{fit_copula, initial_guess};
use moment_knockoffs::marginals::{fit_marginals, MarginalKind, MarginalModel};
use moment_knockoffs::moments::build_constraints;
use moment_knockoffs::optimizer::{
    objective, optimize, optimize_with_sink, IterationTrace, Method, OptimizerConfig, PenalizedObjective,
    PenaltyWeights, TraceSink,
};
use moment_knockoffs::{synth, DataMatrix, KnockoffError};

struct Setup {
    features: DataMatrix,
    marginals: Vec<MarginalModel>,
    guess: DataMatrix,
}

fn setup(p: usize, n: usize, seed: u64) -> Setup {
    let features = synth::generate(p, n, seed, None).unwrap();
    let marginals = fit_marginals(&features, MarginalKind::StudentT).unwrap();
    let model = fit_copula(&features, &marginals).unwrap();
    let guess = initial_guess(&features, &model, seed).unwrap();
    Setup { features, marginals, guess }
}

fn run(s: &Setup, cfg: &OptimizerConfig) -> moment_knockoffs::optimizer::KnockoffResult {
    let cs = build_constraints(&s.features).unwrap();
    optimize(&s.features, &s.guess, &s.marginals, &cs, cfg).unwrap()
}

#[derive(Default)]
struct Collect(Vec<IterationTrace>);

impl TraceSink for Collect {
    fn record(&mut self, entry: &IterationTrace) -> moment_knockoffs::Result<()> {
        self.0.push(entry.clone());
        Ok(())
    }
}

#[test]
fn independent_knockoffs_have_small_objective() {
    let (p, n) = (4, 10_000);
    let f = synth::generate_normal(p, n, 1).unwrap();
    let k = synth::generate_normal(p, n, 2).unwrap();
    assert!(objective(&f, &k).unwrap() < p as f64 * 4.0 / n as f64);
}

#[test]
fn zero_rate_returns_initial_guess() {
    let s = setup(3, 60, 2);
    let cfg = OptimizerConfig { max_iterations: 1, learning_rate: 0.0, ..Default::default() };
    for method in [Method::GaussNewton, Method::GradientDescent] {
        let r = run(&s, &OptimizerConfig { method, ..cfg.clone() });
        assert_eq!(r.knockoffs, s.guess);
        assert_eq!(r.best_iteration, 0);
    }
}

#[test]
fn best_iterate_is_lowest_traced() {
    let s = setup(4, 100, 4);
    let cfg = OptimizerConfig { max_iterations: 8, ..Default::default() };
    let r = run(&s, &cfg);
    let cs = build_constraints(&s.features).unwrap();
    let problem =
        PenalizedObjective::new(&s.features, &s.marginals, &cs, cfg.penalty_weights, cfg.objective_weight).unwrap();
    let best = problem.evaluate(&r.knockoffs, false).unwrap().penalized;
    assert!(best <= r.initial.penalized);
    for t in &r.trace {
        assert!(best <= t.penalized);
    }
    assert!(r.trace.len() <= cfg.max_iterations);
    assert!(r.trace.iter().enumerate().all(|(i, t)| t.iteration == i + 1));
}

#[test]
fn disabled_tolerance_runs_every_iteration() {
    let s = setup(3, 80, 5);
    let cfg = OptimizerConfig { max_iterations: 5, tolerance: f64::MIN_POSITIVE, ..Default::default() };
    let cs = build_constraints(&s.features).unwrap();
    let mut sink = Collect::default();
    let r = optimize_with_sink(&s.features, &s.guess, &s.marginals, &cs, &cfg, &mut sink).unwrap();
    assert_eq!(r.trace.len(), 5);
    assert_eq!(sink.0.len(), 6);
    assert_eq!(sink.0[0].iteration, 0);
    let snaps: Vec<usize> = r.snapshots.iter().map(|s| s.iteration).collect();
    assert_eq!(snaps, vec![3]);
}

#[test]
fn objective_only_run_decreases_strictly() {
    let s = setup(3, 80, 6);
    for method in [Method::GaussNewton, Method::GradientDescent] {
        let cfg = OptimizerConfig {
            max_iterations: 5,
            penalty_weights: PenaltyWeights::zero(),
            tolerance: f64::MIN_POSITIVE,
            method,
            ..Default::default()
        };
        let r = run(&s, &cfg);
        let mut prev = r.initial.objective;
        assert!(!r.trace.is_empty());
        for t in &r.trace {
            assert!(t.objective < prev, "{method:?}: {} !< {prev}", t.objective);
            prev = t.objective;
        }
    }
}

#[test]
fn runs_are_bit_reproducible() {
    let s = setup(4, 100, 7);
    let cfg = OptimizerConfig { max_iterations: 4, ..Default::default() };
    let a = run(&s, &cfg);
    let b = run(&s, &cfg);
    assert_eq!(a.knockoffs, b.knockoffs);
    let pa: Vec<f64> = a.trace.iter().map(|t| t.penalized).collect();
    let pb: Vec<f64> = b.trace.iter().map(|t| t.penalized).collect();
    assert_eq!(pa, pb);
}

#[test]
fn optimizer_reduces_moment_residuals() {
    let s = setup(4, 100, 3);
    let r = run(&s, &OptimizerConfig::default());
    let last = r.trace.last().unwrap();
    let before = r.initial.residuals.as_array();
    let after = last.residuals.as_array();
    for fam in 0..3 {
        assert!(after[fam] < 0.1 * before[fam], "family {fam}: {} -> {}", before[fam], after[fam]);
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let s = setup(3, 40, 8);
    let cs = build_constraints(&s.features).unwrap();
    let bad = OptimizerConfig { learning_rate: -1.0, ..Default::default() };
    assert!(matches!(optimize(&s.features, &s.guess, &s.marginals, &cs, &bad), Err(KnockoffError::Config(_))));
    let bad = OptimizerConfig { tolerance: 0.0, ..Default::default() };
    assert!(optimize(&s.features, &s.guess, &s.marginals, &cs, &bad).is_err());
    let mut guess = s.guess.clone();
    guess.set(0, 0, f64::NAN);
    assert!(optimize(&s.features, &guess, &s.marginals, &cs, &OptimizerConfig::default()).is_err());
    let short = DataMatrix::zeros(39, 3);
    assert!(optimize(&s.features, &short, &s.marginals, &cs, &OptimizerConfig::default()).is_err());
}

#[test]
fn config_json_rejects_unknown_fields() {
    let text = serde_json::to_string(&OptimizerConfig::default()).unwrap();
    let back: OptimizerConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, OptimizerConfig::default());
    assert!(serde_json::from_str::<OptimizerConfig>(r#"{"max_iterations":3,"bogus":1}"#).is_err());
}
