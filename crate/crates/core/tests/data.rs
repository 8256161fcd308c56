use std::collections::HashSet;

use dico::data::{
    default_header, generate_phantom, load_case, make_split, normalize, parse_manifest, read_nifti, sample_crop,
    write_nifti, CaseRecord, CropMode, Dataset, Normalization, PhantomSpec, SplitTag,
};
use dico::error::DicoError;
use dico::volume::{LabelMask, Volume};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn records(n: usize) -> Vec<CaseRecord> {
    (0..n)
        .map(|i| {
            CaseRecord::new(format!("c{i}"), format!("c{i}.nii.gz"), Some(format!("c{i}_l.nii.gz").into()), SplitTag::UnlabeledTrain)
                .unwrap()
        })
        .collect()
}

fn count(recs: &[CaseRecord], tag: SplitTag) -> usize {
    recs.iter().filter(|r| r.split == tag).count()
}

#[test]
fn nifti_round_trip_keeps_values_and_affine() {
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let data: Vec<f32> = (0..16 * 16 * 16).map(|_| rng.gen_range(-100.0..100.0)).collect();
    let mut header = default_header([0.5, 0.75, 1.25]);
    header.srow_x[3] = -12.0;
    header.srow_z[3] = 40.5;
    for name in ["a.nii", "a.nii.gz"] {
        let path = dir.path().join(name);
        write_nifti(&path, &data, [16, 16, 16], &header, [0, 1, 2]).unwrap();
        let img = read_nifti(&path).unwrap();
        assert_eq!(img.extents, [16, 16, 16]);
        assert_eq!(img.data, data);
        assert_eq!(img.spacing, [0.5, 0.75, 1.25]);
        assert_eq!(img.header.srow_x, header.srow_x);
        assert_eq!(img.header.srow_z, header.srow_z);
    }
}

#[test]
fn depth_axis_follows_scanner_z() {
    // Stored axis 0 points along z: it must come back as the last axis.
    let dir = TempDir::new().unwrap();
    let mut header = default_header([1.0, 1.0, 1.0]);
    header.srow_x = [0.0, 0.0, 1.0, 0.0];
    header.srow_z = [2.0, 0.0, 0.0, 0.0];
    header.pixdim[1] = 2.0;
    let stored: Vec<f32> = (0..3 * 4 * 5).map(|v| v as f32).collect();
    let path = dir.path().join("z.nii.gz");
    write_nifti(&path, &stored, [3, 4, 5], &header, [0, 1, 2]).unwrap();
    let img = read_nifti(&path).unwrap();
    assert_eq!(img.extents, [4, 5, 3]);
    assert_eq!(img.spacing[2], 2.0);
    for x in 0..3 {
        for y in 0..4 {
            for z in 0..5 {
                assert_eq!(img.data[(y * 5 + z) * 3 + x], stored[(x * 4 + y) * 5 + z]);
            }
        }
    }
    // Writing back through the template restores the stored order.
    let back = dir.path().join("back.nii.gz");
    img.write_like(&back, &img.data).unwrap();
    let again = read_nifti(&back).unwrap();
    assert_eq!(again.data, img.data);
}

fn write_case(dir: &TempDir, id: &str, image: &[f32], label: &[f32]) -> CaseRecord {
    let h = default_header([1.0; 3]);
    let ip = dir.path().join(format!("{id}_image.nii.gz"));
    let lp = dir.path().join(format!("{id}_label.nii.gz"));
    write_nifti(&ip, image, [4, 4, 2], &h, [0, 1, 2]).unwrap();
    write_nifti(&lp, label, [4, 4, 2], &h, [0, 1, 2]).unwrap();
    CaseRecord::new(id, ip, Some(lp), SplitTag::LabeledTrain).unwrap()
}

#[test]
fn load_case_normalises_and_validates_labels() {
    let dir = TempDir::new().unwrap();
    let constant = write_case(&dir, "flat", &[7.0; 32], &[0.0; 32]);
    let case = load_case(&constant, Normalization::ZScore).unwrap();
    assert!(case.image.data().iter().all(|&v| v == 0.0));

    let mut label = vec![0.0; 32];
    label[5] = 2.0;
    let bad = write_case(&dir, "bad", &[1.0; 32], &label);
    let err = load_case(&bad, Normalization::ZScore).unwrap_err();
    assert!(matches!(err, DicoError::Ingestion { .. }));
    assert!(err.to_string().contains("label value 2"), "{err}");

    let missing = CaseRecord::new("gone", dir.path().join("none.nii.gz"), None, SplitTag::UnlabeledTrain).unwrap();
    let err = load_case(&missing, Normalization::ZScore).unwrap_err();
    assert!(err.to_string().contains("none.nii.gz"), "{err}");
}

#[test]
fn label_grid_must_match_image() {
    let dir = TempDir::new().unwrap();
    let h = default_header([1.0; 3]);
    let ip = dir.path().join("i.nii.gz");
    let lp = dir.path().join("l.nii.gz");
    write_nifti(&ip, &[0.0; 32], [4, 4, 2], &h, [0, 1, 2]).unwrap();
    write_nifti(&lp, &[0.0; 16], [4, 2, 2], &h, [0, 1, 2]).unwrap();
    let rec = CaseRecord::new("g", ip, Some(lp), SplitTag::Val).unwrap();
    assert!(load_case(&rec, Normalization::ZScore).unwrap_err().to_string().contains("grid"));
}

#[test]
fn normalisation_modes() {
    let mut v = vec![1.0, 2.0, 3.0, 4.0];
    normalize(&mut v, Normalization::ZScore);
    let mean: f32 = v.iter().sum::<f32>() / 4.0;
    let var: f32 = v.iter().map(|x| (x - mean).powi(2)).sum::<f32>() / 4.0;
    assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-5);
    let mut w = vec![-1000.0, -200.0, 300.0, 800.0, 2000.0];
    normalize(&mut w, Normalization::Window { low: -200.0, high: 800.0 });
    assert_eq!(w, vec![0.0, 0.0, 0.5, 1.0, 1.0]);
}

#[test]
fn manifest_parsing() {
    let base = std::path::Path::new("/data");
    let text = "# comment\n\na img/a.nii.gz lab/a.nii.gz labeled-train\nb /abs/b.nii.gz - unlabeled-train\nc c.nii c_l.nii val\n";
    let recs = parse_manifest(text, base).unwrap();
    assert_eq!(recs.len(), 3);
    assert_eq!(recs[0].image, base.join("img/a.nii.gz"));
    assert_eq!(recs[1].image, std::path::PathBuf::from("/abs/b.nii.gz"));
    assert_eq!(recs[1].label, None);
    assert_eq!(recs[2].split, SplitTag::Val);
    let round = parse_manifest(&dico::data::format_manifest(&recs), base).unwrap();
    assert_eq!(round, recs);

    let err = parse_manifest("a x - labeled-train\na y y train\nb z\n", base).unwrap_err().to_string();
    assert!(err.contains("line 1") && err.contains("needs a label"), "{err}");
    assert!(err.contains("line 2") && err.contains("unknown split"), "{err}");
    assert!(err.contains("line 3") && err.contains("4 fields"), "{err}");
}

#[test]
fn split_counts_match_reported_cohorts() {
    let s = make_split(&records(90), 0.05, 0).unwrap();
    assert_eq!((count(&s, SplitTag::LabeledTrain), count(&s, SplitTag::UnlabeledTrain)), (5, 85));
    let s = make_split(&records(900), 0.05, 0).unwrap();
    assert_eq!((count(&s, SplitTag::LabeledTrain), count(&s, SplitTag::UnlabeledTrain)), (45, 855));
    let s = make_split(&records(12), 1.0, 0).unwrap();
    assert_eq!(count(&s, SplitTag::LabeledTrain), 12);
    assert!(make_split(&records(10), 0.0, 0).is_err());
    assert!(make_split(&records(10), 0.01, 0).is_err());
}

proptest! {
    #[test]
    fn split_is_a_deterministic_partition(n in 1usize..60, frac in 0.05f64..=1.0, seed in 0u64..1000, extra in 0usize..5) {
        let mut recs = records(n);
        for i in 0..extra {
            recs.push(CaseRecord::new(format!("v{i}"), "v.nii", Some("l.nii".into()), SplitTag::Val).unwrap());
        }
        let expected = (n as f64 * frac).round() as usize;
        let a = make_split(&recs, frac, seed);
        if expected == 0 {
            prop_assert!(a.is_err());
            return Ok(());
        }
        let a = a.unwrap();
        prop_assert_eq!(&a, &make_split(&recs, frac, seed).unwrap());
        prop_assert_eq!(a.len(), recs.len());
        let ids: HashSet<_> = a.iter().map(|r| r.id.clone()).collect();
        prop_assert_eq!(ids.len(), recs.len());
        prop_assert_eq!(count(&a, SplitTag::LabeledTrain), expected);
        prop_assert_eq!(count(&a, SplitTag::LabeledTrain) + count(&a, SplitTag::UnlabeledTrain), n);
        prop_assert_eq!(count(&a, SplitTag::Val), extra);
    }
}

#[test]
fn random_crops_stay_in_bounds_and_keep_alignment() {
    let data: Vec<f32> = (0..8 * 6 * 5).map(|v| v as f32).collect();
    let vol = Volume::from_data([1, 1, 8, 6, 5], data.clone()).unwrap();
    let mask = LabelMask::new([1, 1, 8, 6, 5], data.iter().map(|&v| (v as usize % 3 == 0) as u8).collect()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (img, m) = sample_crop(&vol, Some(&mask), [4, 4, 5], CropMode::Random, &mut rng);
        let m = m.unwrap();
        // The values encode their source index, so alignment is checkable.
        for (v, &b) in img.data().iter().zip(m.data()) {
            assert!(*v >= 0.0);
            assert_eq!(b, (*v as usize % 3 == 0) as u8);
        }
        let first = img.data()[0] as usize;
        let (x, y, z) = (first / 30, first / 5 % 6, first % 5);
        assert!(x + 4 <= 8 && y + 4 <= 6 && z == 0);
    }
    let (c, _) = sample_crop(&vol, None, [4, 4, 5], CropMode::Center, &mut rng);
    assert_eq!(c.data()[0], ((2 * 6) + 1) as f32 * 5.0);
}

fn components_26(mask: &[u8], grid: [usize; 3]) -> usize {
    let [h, w, d] = grid;
    let mut seen = vec![false; mask.len()];
    let mut n = 0;
    for start in 0..mask.len() {
        if mask[start] == 0 || seen[start] {
            continue;
        }
        n += 1;
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            let (x, y, z) = ((i / (w * d)) as isize, (i / d % w) as isize, (i % d) as isize);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let (a, b, c) = (x + dx, y + dy, z + dz);
                        if a < 0 || b < 0 || c < 0 || a >= h as isize || b >= w as isize || c >= d as isize {
                            continue;
                        }
                        let j = (a as usize * w + b as usize) * d + c as usize;
                        if mask[j] == 1 && !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
    }
    n
}

#[test]
fn phantoms_are_deterministic_and_tubes_connected() {
    for seed in 0..20 {
        let spec = PhantomSpec { seed, ..PhantomSpec::default() };
        let p = generate_phantom(&spec).unwrap();
        let q = generate_phantom(&spec).unwrap();
        assert_eq!(p.image.data(), q.image.data());
        assert_eq!(p.mask.data(), q.mask.data());
        for (t, tm) in p.tube_masks.iter().enumerate() {
            assert_eq!(components_26(tm, spec.grid), 1, "seed {seed} tube {t}");
        }
    }
}

#[test]
fn noiseless_phantom_is_mask_plus_background() {
    let spec = PhantomSpec { noise_sigma: 0.0, contrast: 1.0, seed: 4, ..PhantomSpec::default() };
    let p = generate_phantom(&spec).unwrap();
    for ((&v, &m), &b) in p.image.data().iter().zip(p.mask.data()).zip(&p.background) {
        let expected = if m == 1 { 1.0 + b } else { b };
        assert!((v - expected).abs() < 1e-6);
    }
}

#[test]
fn tube_volume_matches_swept_cylinder_estimate() {
    for seed in 0..20 {
        let spec = PhantomSpec { seed, ..PhantomSpec::default() };
        let p = generate_phantom(&spec).unwrap();
        for (tube, tm) in p.tubes.iter().zip(&p.tube_masks) {
            let r2: f32 = tube.radii.iter().map(|r| r * r).sum::<f32>() / tube.radii.len() as f32;
            let r3: f32 = tube.radii.iter().map(|r| r * r * r).sum::<f32>() / tube.radii.len() as f32;
            // Cylinder plus two hemispherical caps.
            let estimate = std::f32::consts::PI * r2 * tube.length() + 4.0 / 3.0 * std::f32::consts::PI * r3;
            let actual = tm.iter().map(|&v| v as f32).sum::<f32>();
            let ratio = actual / estimate;
            assert!((0.5..=1.5).contains(&ratio), "seed {seed}: {actual} vs {estimate}");
        }
    }
}

#[test]
fn phantom_dataset_splits() {
    let ds = Dataset::phantoms(&PhantomSpec { grid: [16, 16, 16], ..PhantomSpec::default() }, 2, 3, 1).unwrap();
    assert_eq!((ds.labeled.len(), ds.unlabeled.len(), ds.val.len()), (2, 3, 1));
    assert!(ds.unlabeled.iter().all(|c| c.label.is_none()));
    assert!(ds.labeled.iter().chain(&ds.val).all(|c| c.label.is_some()));
    assert_eq!(ds.split(SplitTag::Val)[0].id, "phantom005");
}
