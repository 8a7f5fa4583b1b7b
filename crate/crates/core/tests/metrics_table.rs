mod common;

use wavesono::metrics::{psnr_from_mse, MetricReport};
use wavesono::pipeline::{report_metrics, MetricsTable};
use wavesono::io::{save_image, ImageFormat};
use wavesono::Execution;

#[test]
fn reported_psnr_is_consistent_with_mse() {
    let rows = common::reported_scores();
    assert_eq!(rows.len(), 9);
    for row in &rows {
        let psnr = psnr_from_mse(row.mse, 1.0).unwrap();
        assert!((psnr - row.psnr).abs() <= 0.01, "{}: {psnr:.4} vs {}", row.experiment, row.psnr);
        // the spread column follows the same mapping
        let spread = psnr_from_mse(row.mse_std, 1.0).unwrap();
        assert!((spread - row.psnr_std).abs() <= 0.01, "{}: {spread:.4} vs {}", row.experiment, row.psnr_std);
        assert!((0.0..=1.0).contains(&row.ssim) && row.ssim_std >= 0.0);
    }
}

#[test]
fn metrics_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let a = common::random_grid(24, 24, 1);
    let b = common::random_grid(24, 24, 2);
    let c = a.map(|v| (v * 0.9 + 0.05).clamp(0.0, 1.0));
    let paths: Vec<_> = [("a", &a), ("b", &b), ("c", &c)]
        .iter()
        .map(|(n, g)| {
            let p = dir.path().join(format!("{n}.f32"));
            save_image(g, &p, ImageFormat::F32Raw).unwrap();
            p
        })
        .collect();
    let pairs = vec![
        (paths[0].clone(), paths[0].clone()),
        (paths[1].clone(), paths[0].clone()),
        (paths[2].clone(), paths[0].clone()),
    ];
    let table = report_metrics(&pairs, 1.0, Execution::default()).unwrap();
    assert_eq!(table.rows.len(), 3);
    let identical = &table.rows[0];
    assert_eq!((identical.mse, identical.psnr, identical.ssim), (0.0, f64::INFINITY, 1.0));
    let f32_rounded = |g: &wavesono::ImageGrid| g.map(|v| v as f32 as f64);
    let direct = MetricReport::compute(&f32_rounded(&b), &f32_rounded(&a), 1.0).unwrap();
    assert!((table.rows[1].mse - direct.mse).abs() < 1e-12);

    let back = MetricsTable::from_csv(&table.to_csv().unwrap()).unwrap();
    assert_eq!(back.rows.len(), table.rows.len());
    for (x, y) in back.rows.iter().chain([&back.mean, &back.std]).zip(table.rows.iter().chain([&table.mean, &table.std])) {
        assert_eq!(x.recon, y.recon);
        for (p, q) in [(x.mse, y.mse), (x.psnr, y.psnr), (x.ssim, y.ssim)] {
            assert!(p == q || (p - q).abs() <= 1e-9 || (p.is_nan() && q.is_nan()), "{p} vs {q}");
        }
    }
}

#[test]
fn summary_is_arithmetic_mean() {
    let dir = tempfile::tempdir().unwrap();
    let truth = common::random_grid(16, 16, 3);
    let t = dir.path().join("t.f32");
    save_image(&truth, &t, ImageFormat::F32Raw).unwrap();
    let mut pairs = Vec::new();
    for k in 0..2 {
        let g = truth.map(|v| (v + 0.05 * (k + 1) as f64).min(1.0));
        let p = dir.path().join(format!("r{k}.f32"));
        save_image(&g, &p, ImageFormat::F32Raw).unwrap();
        pairs.push((p, t.clone()));
    }
    let table = report_metrics(&pairs, 1.0, Execution::Sequential).unwrap();
    let mean = |f: fn(&wavesono::pipeline::MetricRow) -> f64| (f(&table.rows[0]) + f(&table.rows[1])) / 2.0;
    assert!((table.mean.mse - mean(|r| r.mse)).abs() < 1e-15);
    assert!((table.mean.psnr - mean(|r| r.psnr)).abs() < 1e-12);
    assert!((table.mean.ssim - mean(|r| r.ssim)).abs() < 1e-15);
    let half_gap = (table.rows[0].mse - table.rows[1].mse).abs() / 2.0;
    assert!((table.std.mse - half_gap).abs() < 1e-15);
}
