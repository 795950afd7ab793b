//! End-to-end use of the public API: sample, export, reload, fit, evaluate.

use stereo_wavelets::estimator::{admissible, Estimator, EstimatorConfig, ThresholdConstant};
use stereo_wavelets::sampling::{sample_streams, DensityOnSphere, TestDensity};
use stereo_wavelets::sphere::{evaluation_grid, read_points_csv, write_points_csv, EVALUATION_GRID_SIZE};

#[test]
fn sample_fit_and_evaluate() {
    let density = DensityOnSphere::new(TestDensity::F2).unwrap();
    let sample = sample_streams(&density, 3000, 21, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sample.csv");
    write_points_csv(&path, &sample.points).unwrap();
    let points = read_points_csv(&path).unwrap();
    assert_eq!(points, sample.points);

    let config = EstimatorConfig {
        c_s: ThresholdConstant::Fixed(50.0),
        quad_order: 128,
        ..EstimatorConfig::paper_s5()
    };
    let est = Estimator::new(config, points.len()).unwrap();
    let run = est.lepski_select(&points).unwrap();
    assert_eq!((run.j_min, run.j_max), (2, 3));
    assert!(admissible(run.j_n, &run.pairwise_norms));

    let grid = evaluation_grid();
    assert_eq!(grid.len(), EVALUATION_GRID_SIZE);
    let values = run.evaluate_selected(est.frame(), &grid).unwrap();
    // mass concentrates in the northern cap where the density lives
    let (mut north, mut south) = (0.0, 0.0);
    for (p, v) in grid.iter().zip(&values) {
        if p.z() > 0.8 {
            north += v;
        } else if p.z() < -0.5 {
            south += v.abs();
        }
    }
    assert!(north > 10.0 * south, "{north} {south}");

    // the estimator integrates to about one
    let nodes = est.rule().nodes();
    let at_nodes = run.evaluate_selected(est.frame(), nodes).unwrap();
    let mass = est.rule().sum_weighted(&at_nodes);
    assert!((mass - 1.0).abs() < 0.05, "{mass}");
}
