mod common;

use common::{metrics_oracle, surface_oracle};
use dico::metrics::{
    asd, dsc, evaluate_case, nsd, surface_voxels, CaseMetrics, Connectivity, MetricConfig, MetricReport,
};
use dico::volume::LabelMask;
use proptest::prelude::*;

fn mask(ext: [usize; 3], voxels: &[[usize; 3]]) -> LabelMask {
    let mut data = vec![0u8; ext.iter().product()];
    for v in voxels {
        data[common::at(ext, v[0], v[1], v[2])] = 1;
    }
    LabelMask::new([1, 1, ext[0], ext[1], ext[2]], data).unwrap()
}

fn cube(ext: [usize; 3], lo: [usize; 3], side: usize) -> LabelMask {
    let mut vox = Vec::new();
    for x in lo[0]..lo[0] + side {
        for y in lo[1]..lo[1] + side {
            for z in lo[2]..lo[2] + side {
                vox.push([x, y, z]);
            }
        }
    }
    mask(ext, &vox)
}

#[test]
fn dsc_hand_examples() {
    let e = [4, 4, 4];
    let a = mask(e, &[[0, 0, 0], [1, 1, 1]]);
    assert_eq!(dsc(&a, &a).unwrap(), 1.0);
    assert_eq!(dsc(&a, &mask(e, &[[3, 3, 3]])).unwrap(), 0.0);
    assert_eq!(dsc(&a, &mask(e, &[[0, 0, 0], [2, 2, 2]])).unwrap(), 0.5);
    assert_eq!(dsc(&mask(e, &[]), &mask(e, &[])).unwrap(), 1.0);
    assert!(dsc(&a, &mask([4, 4, 3], &[])).is_err());
}

#[test]
fn surface_examples() {
    let e = [5, 5, 5];
    assert_eq!(surface_voxels(&mask(e, &[[2, 2, 2]]), Connectivity::Six).unwrap(), vec![[2, 2, 2]]);
    let shell = surface_voxels(&cube(e, [1, 1, 1], 3), Connectivity::Six).unwrap();
    assert_eq!(shell.len(), 26);
    assert!(!shell.contains(&[2, 2, 2]));
    assert!(surface_voxels(&mask(e, &[]), Connectivity::Six).unwrap().is_empty());
}

#[test]
fn surface_distance_examples() {
    let e = [8, 3, 3];
    let a = mask(e, &[[1, 1, 1]]);
    let b = mask(e, &[[4, 1, 1]]);
    assert_eq!(asd(&a, &a, Connectivity::Six).unwrap(), Some(0.0));
    assert_eq!(asd(&a, &b, Connectivity::Six).unwrap(), Some(3.0));
    assert_eq!(nsd(&a, &a, 0.5, Connectivity::Six).unwrap(), Some(1.0));
    assert_eq!(nsd(&a, &b, 1.0, Connectivity::Six).unwrap(), Some(0.0));
    assert_eq!(asd(&a, &mask(e, &[]), Connectivity::Six).unwrap(), None);
    assert!(nsd(&a, &b, 0.0, Connectivity::Six).is_err());
}

#[test]
fn asd_of_translated_cube_is_the_shift() {
    let e = [12, 10, 10];
    for shift in 1..4 {
        let a = cube(e, [2, 3, 3], 4);
        let b = cube(e, [2 + shift, 3, 3], 4);
        let v = asd(&a, &b, Connectivity::Six).unwrap().unwrap();
        // Only the faces perpendicular to the shift move by the full amount;
        // the side faces overlap their counterparts. Compare with the
        // exhaustive oracle instead of a closed form.
        let o = metrics_oracle(&a, &b, 1.0).asd.unwrap();
        assert!((v - o).abs() < 1e-9);
        assert!(v > 0.0 && v <= shift as f64);
    }
    // Single-voxel-thick plates: every surface voxel moves by the shift.
    let a = mask(e, &[[3, 4, 4], [3, 5, 5], [3, 4, 5], [3, 5, 4]]);
    let b = mask(e, &[[6, 4, 4], [6, 5, 5], [6, 4, 5], [6, 5, 4]]);
    assert_eq!(asd(&a, &b, Connectivity::Six).unwrap(), Some(3.0));
}

#[test]
fn twenty_six_connectivity_surface_matches_oracle() {
    let m = cube([6, 6, 6], [1, 1, 1], 4);
    let mut fast = surface_voxels(&m, Connectivity::TwentySix).unwrap();
    let mut slow = surface_oracle(m.data(), [6, 6, 6], true);
    fast.sort();
    slow.sort();
    assert_eq!(fast, slow);
}

#[test]
fn csv_has_summary_and_missing_rows() {
    let mut r = MetricReport::default();
    let e = [4, 4, 4];
    let a = mask(e, &[[1, 1, 1]]);
    r.push("a", evaluate_case(&a, &a, [1.0; 3], &MetricConfig::default()).unwrap());
    r.push("b", evaluate_case(&mask(e, &[]), &a, [1.0; 3], &MetricConfig::default()).unwrap());
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "case_id,dsc,nsd,asd");
    assert_eq!(lines[1], "a,1.000000,1.000000,0.000000");
    assert_eq!(lines[2], "b,0.000000,NA,NA");
    assert_eq!(lines[3], "mean,0.500000,1.000000,0.000000");
    assert_eq!(lines[4], "missing,0,1,1");
    let s = r.summary().unwrap();
    assert_eq!(s.missing, 1);
    assert!(MetricReport::default().summary().is_none());
    let _ = CaseMetrics { dsc: 1.0, nsd: None, asd: None };
}

#[test]
fn spacing_scales_distances_when_enabled() {
    let e = [8, 3, 3];
    let a = mask(e, &[[1, 1, 1]]);
    let b = mask(e, &[[4, 1, 1]]);
    let cfg = MetricConfig { use_spacing: true, ..MetricConfig::default() };
    let m = evaluate_case(&a, &b, [0.5, 1.0, 1.0], &cfg).unwrap();
    assert_eq!(m.asd, Some(1.5));
    let m = evaluate_case(&a, &b, [0.5, 1.0, 1.0], &MetricConfig::default()).unwrap();
    assert_eq!(m.asd, Some(3.0));
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() < 1e-12,
        (x, y) => x == y,
    }
}

fn mask_pair(max: usize) -> impl Strategy<Value = (LabelMask, LabelMask)> {
    (1..=max, 1..=max, 1..=max, 0.05f64..0.7).prop_flat_map(|(h, w, d, density)| {
        let n = h * w * d;
        let bits = proptest::collection::vec(proptest::bool::weighted(density), n);
        (bits.clone(), bits).prop_map(move |(a, b)| {
            let to = |v: Vec<bool>| LabelMask::new([1, 1, h, w, d], v.into_iter().map(u8::from).collect()).unwrap();
            (to(a), to(b))
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fast_metrics_match_brute_force((p, g) in mask_pair(8)) {
        let o = metrics_oracle(&p, &g, 1.0);
        let m = evaluate_case(&p, &g, [1.0; 3], &MetricConfig::default()).unwrap();
        prop_assert!((m.dsc - o.dsc).abs() < 1e-6);
        match (m.asd, o.asd) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-6, "asd {} vs {}", a, b),
            (None, None) => {}
            other => prop_assert!(false, "asd definedness differs: {:?}", other),
        }
        match (m.nsd, o.nsd) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-6, "nsd {} vs {}", a, b),
            (None, None) => {}
            other => prop_assert!(false, "nsd definedness differs: {:?}", other),
        }
    }

    #[test]
    fn metrics_are_symmetric((p, g) in mask_pair(6)) {
        let cfg = MetricConfig::default();
        let a = evaluate_case(&p, &g, [1.0; 3], &cfg).unwrap();
        let b = evaluate_case(&g, &p, [1.0; 3], &cfg).unwrap();
        prop_assert_eq!(a.dsc, b.dsc);
        prop_assert_eq!(a.nsd, b.nsd);
        prop_assert!(close(a.asd, b.asd));
    }

    #[test]
    fn dsc_and_nsd_invariant_under_axis_permutation((p, g) in mask_pair(6)) {
        let perm = |m: &LabelMask| {
            let [h, w, d] = m.spatial();
            let mut out = vec![0u8; h * w * d];
            for x in 0..h { for y in 0..w { for z in 0..d {
                out[(z * w + y) * h + x] = m.data()[common::at([h, w, d], x, y, z)];
            }}}
            LabelMask::new([1, 1, d, w, h], out).unwrap()
        };
        let cfg = MetricConfig::default();
        let a = evaluate_case(&p, &g, [1.0; 3], &cfg).unwrap();
        let b = evaluate_case(&perm(&p), &perm(&g), [1.0; 3], &cfg).unwrap();
        prop_assert!((a.dsc - b.dsc).abs() < 1e-12);
        prop_assert!(close(a.nsd, b.nsd));
    }

    #[test]
    fn ranges_hold((p, g) in mask_pair(6)) {
        let m = evaluate_case(&p, &g, [1.0; 3], &MetricConfig::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.dsc));
        if let Some(n) = m.nsd { prop_assert!((0.0..=1.0).contains(&n)); }
        if let Some(a) = m.asd { prop_assert!(a >= 0.0 && a.is_finite()); }
    }
}
