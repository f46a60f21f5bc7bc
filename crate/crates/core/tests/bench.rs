mod common;

use common::{rng, tiny_config};
use fma_eta::bench::{bench_latency, fit_log_curve, BenchConfig};
use fma_eta::models::{count_parameters, matched_config, EtaModel, ModelConfig, Normalization, Variant};
use proptest::prelude::*;

fn model(cfg: ModelConfig) -> EtaModel {
    EtaModel::new(cfg, Normalization::default(), &mut rng(0)).unwrap()
}

#[test]
fn report_has_every_sample_and_fit() {
    let fma = model(tiny_config(Variant::Fma));
    let lstm_cfg = matched_config(&tiny_config(Variant::Fma), Variant::WdrLstm, count_parameters(&fma)).unwrap();
    let models = [fma, model(lstm_cfg), model(tiny_config(Variant::RouteEta))];
    let cfg = BenchConfig {
        lengths: vec![2, 4, 8],
        reps: 5,
        warmup: 1,
        seed: 3,
        threads: 1,
    };
    let report = bench_latency(&models, &cfg).unwrap();
    assert_eq!(report.samples.len(), 3 * 3 * 5);
    assert!(report.samples.iter().all(|s| s.wall_time_ms > 0.0));
    assert_eq!(report.summaries.len(), 9);
    assert_eq!(report.fits.len(), 3);
    assert_eq!(report.threads, 1);
    for s in &report.summaries {
        assert_eq!(s.n, 5);
        assert!(s.p50_ms <= s.p99_ms);
    }
    let mut csv = Vec::new();
    report.write_samples_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "variant,T,rep,wall_time_ms");
    assert_eq!(text.lines().count(), 46);
    assert!(text.lines().nth(1).unwrap().starts_with("fma,2,0,"));
}

#[test]
fn unmatched_models_are_refused() {
    let big = ModelConfig {
        d_model: 64,
        ..tiny_config(Variant::WdrLstm)
    };
    let models = [model(tiny_config(Variant::Fma)), model(big)];
    let cfg = BenchConfig {
        lengths: vec![2],
        reps: 1,
        warmup: 0,
        ..Default::default()
    };
    assert!(bench_latency(&models, &cfg).is_err());
    let zero = BenchConfig { reps: 0, ..cfg };
    assert!(bench_latency(&models[..1], &zero).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_fit_matches_normal_equations(points in prop::collection::vec((1u32..600, -5.0f64..50.0), 2..30)) {
        let pts: Vec<(f64, f64)> = points.iter().map(|&(t, y)| (t as f64, y)).collect();
        let distinct = pts.iter().any(|p| p.0 != pts[0].0);
        let fit = fit_log_curve(&pts);
        prop_assert_eq!(fit.is_ok(), distinct);
        if let Ok(fit) = fit {
            // Solve [Σx² Σx; Σx n]·[a b]ᵀ = [Σxy Σy]ᵀ by Cramer's rule.
            let (mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0);
            for &(t, y) in &pts {
                let x = t.ln();
                sx += x;
                sxx += x * x;
                sy += y;
                sxy += x * y;
            }
            let n = pts.len() as f64;
            let det = sxx * n - sx * sx;
            let a = (sxy * n - sx * sy) / det;
            let b = (sxx * sy - sx * sxy) / det;
            let tol = 1e-9 * (1.0 + a.abs() + b.abs());
            prop_assert!((fit.a - a).abs() <= tol, "a {} vs {}", fit.a, a);
            prop_assert!((fit.b - b).abs() <= tol, "b {} vs {}", fit.b, b);
        }
    }
}
