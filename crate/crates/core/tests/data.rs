use std::f64::consts::PI;

use hybridflow::data::{
    circles_point, gen_circles, gen_moons, load_table, moons_point, read_dataset, standardize,
    write_dataset, Dataset, Preprocess, Standardization,
};
use proptest::prelude::*;

#[test]
fn moon_formula_examples() {
    assert_eq!(moons_point(0.0, false), [1.0, 0.0]);
    let p = moons_point(PI / 2.0, true);
    assert!((p[0] - 1.0).abs() < 1e-15 && (p[1] + 0.5).abs() < 1e-15);
}

#[test]
fn circle_formula_examples() {
    assert_eq!(circles_point(0.0, false, 0.5), [1.0, 0.0]);
    let p = circles_point(PI, true, 0.5);
    assert!((p[0] + 0.5).abs() < 1e-15 && p[1].abs() < 1e-15);
}

#[test]
fn moons_are_balanced_at_benchmark_size() {
    let ds = gen_moons(16384, 0.05, 0).unwrap();
    assert_eq!(ds.len(), 16384);
    assert_eq!(ds.x.iter().filter(|x| x[0] == 1.0).count(), 8192);
}

#[test]
fn noiseless_points_lie_on_their_curves() {
    let moons = gen_moons(400, 0.0, 3).unwrap();
    for (y, x) in moons.y.iter().zip(&moons.x) {
        let (cx, cy) = if x[0] == 1.0 { (1.0, 0.5) } else { (0.0, 0.0) };
        let r = ((y[0] - cx).powi(2) + (y[1] - cy).powi(2)).sqrt();
        assert!((r - 1.0).abs() < 1e-12);
        // outer moon above its centre, inner moon below
        if x[0] == 1.0 {
            assert!(y[1] <= cy + 1e-12);
        } else {
            assert!(y[1] >= -1e-12);
        }
    }
    let circles = gen_circles(400, 0.0, 0.3, 4).unwrap();
    for (y, x) in circles.y.iter().zip(&circles.x) {
        let r = (y[0] * y[0] + y[1] * y[1]).sqrt();
        let expected = if x[0] == 1.0 { 0.3 } else { 1.0 };
        assert!((r - expected).abs() < 1e-12);
    }
}

#[test]
fn circles_reject_bad_factor() {
    assert!(gen_circles(10, 0.0, 1.0, 0).is_err());
    assert!(gen_circles(10, 0.0, 0.0, 0).is_err());
}

#[test]
fn generators_are_seed_deterministic() {
    assert_eq!(
        gen_moons(500, 0.1, 9).unwrap(),
        gen_moons(500, 0.1, 9).unwrap()
    );
    assert_ne!(
        gen_moons(500, 0.1, 9).unwrap().y,
        gen_moons(500, 0.1, 10).unwrap().y
    );
    assert_eq!(
        gen_circles(500, 0.1, 0.5, 9).unwrap(),
        gen_circles(500, 0.1, 0.5, 9).unwrap()
    );
}

#[test]
fn hand_written_table_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    std::fs::write(&path, "a,b,c\n1.5,-2,0.1\n3,4.25,1\n-0.000001,7,0\n").unwrap();
    let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let ds = load_table(&path, &names(&["a", "b"]), &names(&["c"])).unwrap();
    assert_eq!(
        ds.y,
        vec![vec![1.5, -2.0], vec![3.0, 4.25], vec![-0.000001, 7.0]]
    );
    assert_eq!(ds.x, vec![vec![0.1], vec![1.0], vec![0.0]]);

    let out = dir.path().join("copy.csv");
    write_dataset(&ds, &out).unwrap();
    assert_eq!(read_dataset(&out).unwrap(), ds);
}

#[test]
fn bad_cells_report_coordinates() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    std::fs::write(&path, "a,b\n1,2\n3,x\n").unwrap();
    let err = load_table(&path, &["a".into(), "b".into()], &[])
        .unwrap_err()
        .to_string();
    assert!(err.contains("row 2") && err.contains('b'), "{err}");
    let err = load_table(&path, &["z".into()], &[])
        .unwrap_err()
        .to_string();
    assert!(err.contains('z'), "{err}");
}

#[test]
fn standardized_columns_have_unit_moments() {
    let ds = gen_moons(2000, 0.1, 1).unwrap();
    let st = standardize(&ds, Preprocess::Standardize).unwrap();
    let n = st.len() as f64;
    for c in 0..2 {
        let mean = st.y.iter().map(|r| r[c]).sum::<f64>() / n;
        let var = st.y.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12, "{mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-12);
    }
    let back = st.restored().unwrap();
    for (a, b) in back.y.iter().zip(&ds.y) {
        for c in 0..2 {
            assert!((a[c] - b[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn non_finite_rows_are_rejected() {
    assert!(Dataset::new(vec![vec![f64::NAN]], vec![vec![]]).is_err());
}

proptest! {
    #[test]
    fn standardization_inverts(rows in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 3), 2..30)) {
        prop_assume!((0..3).all(|c| rows.iter().any(|r| (r[c] - rows[0][c]).abs() > 1e-6)));
        for method in [Preprocess::Standardize, Preprocess::MinMax, Preprocess::Isotropic { target: 0.5 }] {
            let Ok(s) = Standardization::fit(&rows, method) else { continue };
            for r in &rows {
                let back = s.invert(&s.apply(r).unwrap()).unwrap();
                for c in 0..3 {
                    prop_assert!((back[c] - r[c]).abs() < 1e-9 * (1.0 + r[c].abs()));
                }
            }
        }
    }
}
