use super::*;
use crate::data::{generate_density_map, synth_scene, SynthConfig};
use crate::rng::{rng_from_seed, uniform_in};

#[test]
fn count_clamps_negatives_and_conserves_gt() {
    assert_eq!(count_from_values(&[0.0; 8]), 0.0);
    assert_eq!(count_from_values(&[-0.5, 2.0]), 2.0);

    let cfg = DensityConfig::new(2.0, 1e-3).unwrap();
    let pts: Vec<(f64, f64)> = (0..7).map(|i| (4.0 + 3.0 * i as f64, 10.0 + i as f64)).collect();
    let d = generate_density_map(&pts, 32, 32, &cfg).unwrap();
    assert!((count_from_density(&d) - 7.0).abs() <= 1e-9);
}

#[test]
fn metric_worked_example_and_degenerate_cases() {
    let y = [10.0, 20.0];
    let y_hat = [12.0, 17.0];
    assert!((mae(&y, &y_hat).unwrap() - 2.5).abs() <= 1e-15);
    assert!((mse(&y, &y_hat).unwrap() - 6.5f64.sqrt()).abs() <= 1e-15);

    assert_eq!(mae(&y, &y).unwrap(), 0.0);
    assert_eq!(mse(&y, &y).unwrap(), 0.0);

    // single sample: MAE == MSE == |y - y'|
    assert_eq!(mae(&[5.0], &[8.5]).unwrap(), 3.5);
    assert_eq!(mse(&[5.0], &[8.5]).unwrap(), 3.5);

    assert!(matches!(mae(&[], &[]), Err(Error::Data(_))));
    assert!(matches!(mae(&[1.0], &[1.0, 2.0]), Err(Error::Dim(_))));
}

#[test]
fn metrics_match_loop_oracles_and_rms_inequality() {
    let mut rng = rng_from_seed(41);
    for _ in 0..100 {
        let n = 1 + (uniform_in(&mut rng, 0.0, 20.0) as usize);
        let y: Vec<f64> = (0..n).map(|_| uniform_in(&mut rng, 0.0, 100.0)).collect();
        let y_hat: Vec<f64> = (0..n).map(|_| uniform_in(&mut rng, 0.0, 100.0)).collect();

        let mut abs_sum = 0.0;
        let mut sq_sum = 0.0;
        for i in 0..n {
            abs_sum += (y[i] - y_hat[i]).abs();
            sq_sum += (y[i] - y_hat[i]).powi(2);
        }
        let mae_v = mae(&y, &y_hat).unwrap();
        let mse_v = mse(&y, &y_hat).unwrap();
        assert!((mae_v - abs_sum / n as f64).abs() <= 1e-12);
        assert!((mse_v - (sq_sum / n as f64).sqrt()).abs() <= 1e-12);
        assert!(mae_v <= mse_v + 1e-12);
    }
}

#[test]
fn perfect_model_stub_scores_zero() {
    let mut rng = rng_from_seed(42);
    let scfg = SynthConfig::default();
    let images: Vec<AnnotatedImage> = (0..5)
        .map(|i| {
            let mut img = synth_scene(&mut rng, &scfg);
            img.id = format!("img{i}");
            img
        })
        .collect();
    let dcfg = DensityConfig::new(2.0, 1e-3).unwrap();
    let report = evaluate_with(&images, |img| {
        generate_density_map(&img.points, img.height, img.width, &dcfg)
    })
    .unwrap();
    assert!(report.mae <= 1e-9, "mae {}", report.mae);
    assert!(report.mse <= 1e-9, "mse {}", report.mse);
    for (s, img) in report.samples.iter().zip(&images) {
        // per-sample errors equal the direct |y - y'| recomputation
        assert_eq!(s.abs_err, (s.y - s.y_hat).abs());
        assert_eq!(s.y, img.points.len() as f64);
        assert!(s.abs_err <= 1e-9);
    }
}

#[test]
fn evaluate_is_read_only_on_params() {
    let mut rng = rng_from_seed(43);
    let cfg = crate::model::IADCCNConfig::tiny();
    let params: ModelParams<f64> = ModelParams::init(&cfg, &mut rng).unwrap();
    let before: Vec<Vec<f64>> = params.iter().map(|(_, t)| t.data().to_vec()).collect();

    let scfg = SynthConfig {
        height: 32,
        width: 32,
        ..SynthConfig::default()
    };
    let images: Vec<AnnotatedImage> = (0..3).map(|_| synth_scene(&mut rng, &scfg)).collect();
    let report = evaluate(&params, &images).unwrap();
    assert_eq!(report.samples.len(), 3);
    assert!(report.ms_per_image >= 0.0);

    let after: Vec<Vec<f64>> = params.iter().map(|(_, t)| t.data().to_vec()).collect();
    assert_eq!(before, after);
}

#[test]
fn eval_report_serialization() {
    let report = EvalReport {
        samples: vec![SampleResult {
            id: "a".into(),
            y: 5.0,
            y_hat: 6.5,
            abs_err: 1.5,
        }],
        mae: 1.5,
        mse: 1.5,
        ms_per_image: 2.0,
    };
    let csv = report.to_csv();
    assert!(csv.starts_with("id,y,y_hat,abs_err\n"));
    assert!(csv.contains("a,5,6.5,1.5"));
    let json = report.summary_json();
    assert!(json.contains("\"mae\": 1.5"));
    assert!(json.contains("\"n\": 1"));
}

#[test]
fn ablation_rows_differ_only_in_studied_flags() {
    let base = IADCCNConfig::tiny();
    let tcfg = TrainConfig::default();
    let rows = ablation_configs(&base, &tcfg);
    let names: Vec<&str> = rows.iter().map(|(n, _, _)| n.as_str()).collect();
    assert_eq!(names, ["base", "base+s", "base+iab", "base+iab+hsm"]);

    for (name, m, t) in &rows {
        // everything except the three studied flags matches the base
        let mut normalized = m.clone();
        normalized.iab_enabled = false;
        normalized.seg_head_enabled = false;
        let mut base_plain = base.clone();
        base_plain.iab_enabled = false;
        base_plain.seg_head_enabled = false;
        assert_eq!(normalized, base_plain, "{name}");
        assert_eq!(t.seed, tcfg.seed);
        assert_eq!(t.lr, tcfg.lr);
    }
    assert!(!rows[0].1.iab_enabled && !rows[0].1.seg_head_enabled && !rows[0].2.hsm_enabled);
    assert!(rows[1].1.seg_head_enabled && !rows[1].1.iab_enabled);
    assert!(rows[2].1.iab_enabled && !rows[2].1.seg_head_enabled && !rows[2].2.hsm_enabled);
    assert!(rows[3].1.iab_enabled && rows[3].2.hsm_enabled);
}

#[test]
fn improvement_percentages_follow_the_previous_row() {
    // percentage improvement is (prev - cur)/prev * 100 against the row above
    let table = AblationTable {
        rows: vec![
            AblationRow {
                config: "base".into(),
                mae: 10.0,
                mse: 20.0,
                mae_improvement_pct: None,
                mse_improvement_pct: None,
            },
            AblationRow {
                config: "base+s".into(),
                mae: 8.0,
                mse: 19.0,
                mae_improvement_pct: Some((10.0 - 8.0) / 10.0 * 100.0),
                mse_improvement_pct: Some((20.0 - 19.0) / 20.0 * 100.0),
            },
        ],
    };
    let csv = table.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[1], "base,10,20,,");
    assert_eq!(lines[2], "base+s,8,19,20.00,5.00");
}
