use explstab::conditioning::{
    build_kernel_matrix, condition_number, run_simulation, singular_values, KernelMatrix,
    ProximityWeight, SimulationConfig,
};
use explstab::seed;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn to_nalgebra(a: &KernelMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(a.rows(), a.cols(), |i, j| a.row(i)[j])
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> KernelMatrix {
    let mut rng = seed::rng(seed);
    KernelMatrix::from_rows(
        (0..rows)
            .map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect(),
    )
    .unwrap()
}

#[test]
fn kappa_agrees_with_svd() {
    for (i, (rows, cols)) in [(5, 3), (12, 12), (40, 10), (200, 20), (60, 40)]
        .into_iter()
        .enumerate()
    {
        let a = random_matrix(rows, cols, i as u64);
        let sv = to_nalgebra(&a).singular_values();
        let oracle = sv.max() / sv.min();
        let kappa = condition_number(&a).unwrap();
        assert!(
            (kappa - oracle).abs() <= 1e-6 * oracle,
            "{kappa} vs {oracle}"
        );
    }
}

#[test]
fn singular_values_agree_with_svd() {
    let a = random_matrix(30, 8, 99);
    let mut ours = singular_values(&a);
    let mut oracle: Vec<f64> = to_nalgebra(&a).singular_values().iter().copied().collect();
    ours.sort_by(f64::total_cmp);
    oracle.sort_by(f64::total_cmp);
    for (x, y) in ours.iter().zip(&oracle) {
        assert!((x - y).abs() < 1e-9, "{x} vs {y}");
    }
}

#[test]
fn kernel_matrix_kappa_agrees_with_svd() {
    for weight in [
        ProximityWeight::CosineDistance,
        ProximityWeight::CosineSimilarity,
    ] {
        let a = build_kernel_matrix(20, 200, 5, weight).unwrap();
        let sv = to_nalgebra(&a).singular_values();
        let oracle = sv.max() / sv.min();
        let kappa = condition_number(&a).unwrap();
        assert!((kappa - oracle).abs() <= 1e-6 * oracle);
    }
}

#[test]
fn draws_do_not_depend_on_other_lengths() {
    let base = SimulationConfig {
        lengths: vec![20, 30],
        iterations: 20,
        ..SimulationConfig::default()
    };
    let both = run_simulation(&base).unwrap();
    let only = run_simulation(&SimulationConfig {
        lengths: vec![30],
        ..base.clone()
    })
    .unwrap();
    assert_eq!(both.kappas(30), only.kappas(30));
}

#[test]
fn csv_files_have_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let config = SimulationConfig {
        lengths: vec![20, 40],
        iterations: 25,
        ..SimulationConfig::default()
    };
    let report = run_simulation(&config).unwrap();
    report.write_csv(dir.path()).unwrap();
    let kappa = std::fs::read_to_string(dir.path().join("kappa.csv")).unwrap();
    let mut lines = kappa.lines();
    assert_eq!(lines.next(), Some("length,iteration,kappa"));
    assert_eq!(lines.count(), 50);
    assert!(!kappa.contains('\r'));

    let bins = std::fs::read_to_string(dir.path().join("kappa_bins.csv")).unwrap();
    let mut lines = bins.lines();
    assert_eq!(lines.next(), Some("length,bin_lo,bin_hi,count"));
    let mut per_length = std::collections::BTreeMap::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        *per_length.entry(f[0].to_string()).or_insert(0usize) += f[3].parse::<usize>().unwrap();
    }
    assert_eq!(
        per_length.values().copied().collect::<Vec<_>>(),
        vec![25, 25]
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kappa_is_scale_invariant(seed in any::<u64>(), c in 1e-3f64..1e3) {
        let a = random_matrix(25, 6, seed);
        let k1 = condition_number(&a).unwrap();
        let k2 = condition_number(&a.scaled(c)).unwrap();
        prop_assert!((k1 - k2).abs() <= 1e-9 * k1);
        prop_assert!(k1 >= 1.0);
    }
}
