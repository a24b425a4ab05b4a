use std::fs;

use proptest::prelude::*;

use super::*;
use crate::model::{pearson_connectome, LevelOutputs};
use crate::tensor::Tensor;
use crate::Error;

fn m(rows: &[&[f64]]) -> Tensor<f64> {
    Tensor::from_f64_rows(rows).unwrap()
}

fn write_manifest(dir: &std::path::Path, series_len: usize, scans: &[(&str, &str, &str)]) -> std::path::PathBuf {
    let manifest = DatasetManifest {
        classes: vec!["NC".into(), "AD".into()],
        n_rois: 6,
        series_len,
        scans: scans
            .iter()
            .map(|&(id, label, file)| ScanRecord {
                id: id.into(),
                subject: format!("sub-{id}"),
                label: label.into(),
                path: file.into(),
            })
            .collect(),
    };
    let path = dir.join("manifest.json");
    manifest.write(&path).unwrap();
    path
}

fn series(n: usize, len: usize, offset: f64) -> Tensor<f64> {
    let data = (0..n * len).map(|k| (k as f64 * 0.37 + offset).sin()).collect();
    Tensor::new(vec![n, len], data).unwrap()
}

#[test]
fn empty_manifest_loads_as_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_manifest(dir.path(), 20, &[]);
    let ds = load_dataset::<f64>(&path, LoadOptions::default()).unwrap();
    assert!(ds.samples.is_empty());
}

#[test]
fn single_series_round_trip_and_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let a = series(6, 20, 0.1);
    let b = series(6, 20, 0.7);
    write_series(&a, &dir.path().join("a.csv")).unwrap();
    write_series(&b, &dir.path().join("b.csv")).unwrap();
    let path = write_manifest(dir.path(), 20, &[("z9", "AD", "b.csv"), ("a1", "NC", "a.csv")]);
    let ds = load_dataset::<f64>(&path, LoadOptions::default()).unwrap();
    assert_eq!(ds.samples.len(), 2);
    assert_eq!(ds.samples[0].scan_id, "a1");
    assert_eq!(ds.samples[0].series, a);
    assert_eq!(ds.samples[1].label, 1);
    assert_eq!(ds.samples[1].series.shape(), &[6, 20]);
}

#[test]
fn load_errors_name_the_record() {
    let dir = tempfile::tempdir().unwrap();
    write_series(&series(6, 5, 0.0), &dir.path().join("short.csv")).unwrap();
    write_series(&series(6, 20, 0.0), &dir.path().join("ok.csv")).unwrap();

    let path = write_manifest(dir.path(), 20, &[("scan-short", "NC", "short.csv")]);
    let err = load_dataset::<f64>(&path, LoadOptions::default()).unwrap_err();
    assert!(matches!(&err, Error::Load { record, .. } if record == "scan-short"), "{err}");

    let path = write_manifest(dir.path(), 20, &[("scan-missing", "NC", "nope.csv")]);
    let err = load_dataset::<f64>(&path, LoadOptions::default()).unwrap_err();
    assert!(err.to_string().contains("scan-missing"), "{err}");

    let path = write_manifest(dir.path(), 20, &[("scan-label", "MCI", "ok.csv")]);
    let err = load_dataset::<f64>(&path, LoadOptions::default()).unwrap_err();
    assert!(err.to_string().contains("scan-label"), "{err}");

    fs::write(dir.path().join("nan.csv"), "1,2\nNaN,4\n").unwrap();
    let path = write_manifest(dir.path(), 2, &[("scan-nan", "NC", "nan.csv")]);
    assert!(load_dataset::<f64>(&path, LoadOptions::default()).is_err());
}

#[test]
fn truncate_to_min_accepts_ragged_lengths() {
    let dir = tempfile::tempdir().unwrap();
    write_series(&series(6, 12, 0.0), &dir.path().join("a.csv")).unwrap();
    write_series(&series(6, 20, 0.0), &dir.path().join("b.csv")).unwrap();
    let path = write_manifest(dir.path(), 20, &[("a", "NC", "a.csv"), ("b", "AD", "b.csv")]);
    assert!(load_dataset::<f64>(&path, LoadOptions::default()).is_err());
    let ds = load_dataset::<f64>(&path, LoadOptions { truncate_to_min: true }).unwrap();
    assert_eq!(ds.series_len, 12);
    assert!(ds.samples.iter().all(|s| s.series.shape() == [6, 12]));
    assert_eq!(ds.samples[1].series.row(2), &series(6, 20, 0.0).row(2)[..12]);
}

#[test]
fn synthetic_is_deterministic_and_shaped() {
    let spec = SyntheticSpec {
        samples_per_class: 4,
        seed: 3,
        ..SyntheticSpec::default()
    };
    let a = generate_synthetic::<f64>(&spec).unwrap();
    let b = generate_synthetic::<f64>(&spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.samples.len(), 12);
    assert!(a.samples.iter().all(|s| s.series.shape() == [20, 200]));
    assert_eq!(a.hubs.len(), 2);
    for c in &a.connectomes {
        assert_eq!(c.get2(0, 0), 1.0);
        assert_eq!(c.get2(3, 5), c.get2(5, 3));
    }
    assert_ne!(a.connectomes[0], a.connectomes[1]);
    let other = generate_synthetic::<f64>(&SyntheticSpec { seed: 4, ..spec }).unwrap();
    assert_ne!(a.samples[0].series, other.samples[0].series);
}

#[test]
fn sample_correlation_converges_to_latent_connectome() {
    let spec = SyntheticSpec {
        classes: 3,
        samples_per_class: 1,
        n_rois: 6,
        series_len: 20000,
        latent_rank: 6,
        noise: 0.0,
        seed: 17,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic::<f64>(&spec).unwrap();
    for s in &data.samples {
        let f = pearson_connectome(&s.series).unwrap();
        let dev = f.max_abs_diff(&data.connectomes[s.label]);
        assert!(dev < 0.05, "max deviation {dev}");
    }
}

#[test]
fn zero_strength_makes_classes_identical() {
    let spec = SyntheticSpec {
        strength: 0.0,
        samples_per_class: 1,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic::<f64>(&spec).unwrap();
    assert_eq!(data.connectomes[0], data.connectomes[1]);
    assert!(SyntheticSpec { hubs: 20, ..spec.clone() }.validate().is_err());
    assert!(SyntheticSpec { noise: -1.0, ..spec }.validate().is_err());
}

#[test]
fn planted_hubs_lead_ground_truth_importance() {
    let trials = 30;
    let mut hits = 0;
    for seed in 0..trials {
        let spec = SyntheticSpec {
            samples_per_class: 1,
            seed,
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic::<f64>(&spec).unwrap();
        let k = data.hubs.len();
        for c in &data.connectomes {
            let ranked = node_importance(c, false).unwrap();
            let mut top: Vec<usize> = ranked[..k].iter().map(|r| r.0).collect();
            top.sort_unstable();
            hits += usize::from(top == data.hubs);
        }
    }
    let rate = hits as f64 / (3 * trials) as f64;
    assert!(rate > 0.9, "hub recovery rate {rate}");
}

fn outputs(adjs: Vec<Tensor<f64>>, pearson: Tensor<f64>) -> LevelOutputs<f64> {
    LevelOutputs {
        features: vec![],
        adjacencies: adjs,
        pearson,
        embeddings: vec![],
    }
}

#[test]
fn mean_graph_cases() {
    let a = m(&[&[1.0, 0.3], &[0.3, 1.0]]);
    let neg = m(&[&[1.0, -0.3], &[-0.3, 1.0]]);
    let single = [outputs(vec![a.clone()], neg.clone())];
    assert_eq!(mean_graph(&single, GraphSelector::Level(1)).unwrap(), a);
    assert_eq!(mean_graph(&single, GraphSelector::Pearson).unwrap(), neg);

    let pair = [outputs(vec![a.clone()], a.clone()), outputs(vec![neg.clone()], a.clone())];
    let mean = mean_graph(&pair, GraphSelector::Level(1)).unwrap();
    assert_eq!(mean.get2(0, 1), 0.0);
    assert_eq!(mean.get2(1, 1), 1.0);

    let same = vec![outputs(vec![a.clone(), a.clone()], a.clone()); 7];
    assert_eq!(mean_graph(&same, GraphSelector::AllLevels).unwrap(), a);
    assert!(mean_graph(&same, GraphSelector::Level(3)).is_err());
    assert!(matches!(mean_graph::<f64>(&[], GraphSelector::Pearson), Err(Error::Contract(_))));
}

#[test]
fn top_edges_cases() {
    let a = m(&[&[1.0, 0.9, 0.1], &[0.9, 1.0, -0.5], &[0.1, -0.5, 1.0]]);
    let all = top_edges(&a, 1.0, false).unwrap();
    assert_eq!(all.len(), 3);
    assert_eq!((all[1].i, all[1].j, all[1].weight), (1, 2, -0.5));
    let one = top_edges(&a, 0.3, false).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!((one[0].i, one[0].j, one[0].weight), (0, 1, 0.9));
    let signed = top_edges(&a, 1.0, true).unwrap();
    assert_eq!(signed[2].weight, -0.5);
    assert!(top_edges(&a, 0.0, false).is_err());
    assert!(top_edges(&a, 1.5, false).is_err());

    assert_eq!(edge_budget(273, 0.01), 372);
    assert_eq!(edge_budget(5, 0.3), 3);
    // ties resolved by (i, j)
    let flat = Tensor::<f64>::full(&[4, 4], 0.5);
    let e = top_edges(&flat, 0.5, false).unwrap();
    assert_eq!(e.iter().map(|e| (e.i, e.j)).collect::<Vec<_>>(), vec![(0, 1), (0, 2), (0, 3)]);
}

#[test]
fn node_importance_cases() {
    let id = Tensor::<f64>::eye(4);
    let r = node_importance(&id, false).unwrap();
    assert_eq!(r, vec![(0, 0.0), (1, 0.0), (2, 0.0), (3, 0.0)]);

    let n = 5;
    let mut star = Tensor::<f64>::eye(n);
    for j in 1..n {
        star.set2(0, j, 1.0);
        star.set2(j, 0, 1.0);
    }
    let r = node_importance(&star, false).unwrap();
    assert_eq!(r[0], (0, (n - 1) as f64));
    assert!(r[1..].iter().all(|&(_, s)| s == 1.0));

    let signed = m(&[&[1.0, -0.8, 0.2], &[-0.8, 1.0, 0.1], &[0.2, 0.1, 1.0]]);
    assert_eq!(node_importance(&signed, false).unwrap()[0].0, 2);
    assert_eq!(node_importance(&signed, true).unwrap()[0].0, 0);
}

proptest! {
    #[test]
    fn importance_is_relabeling_equivariant(
        vals in proptest::collection::vec(-1.0f64..1.0, 15),
        seed in 0u64..50,
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let n = 6;
        let mut a = Tensor::<f64>::eye(n);
        let mut k = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                a.set2(i, j, vals[k]);
                a.set2(j, i, vals[k]);
                k += 1;
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let mut b = Tensor::<f64>::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                b.set2(perm[i], perm[j], a.get2(i, j));
            }
        }
        let sa = node_importance(&a, false).unwrap();
        let sb = node_importance(&b, false).unwrap();
        for &(i, s) in &sa {
            let (_, t) = sb.iter().find(|(r, _)| *r == perm[i]).unwrap();
            prop_assert!((s - t).abs() < 1e-12);
        }
    }

    #[test]
    fn top_edges_never_include_the_diagonal(vals in proptest::collection::vec(-1.0f64..1.0, 25), f in 0.01f64..1.0) {
        let a = Tensor::new(vec![5, 5], vals).unwrap();
        let e = top_edges(&a, f, false).unwrap();
        prop_assert_eq!(e.len(), edge_budget(5, f));
        prop_assert!(e.iter().all(|e| e.i < e.j));
        prop_assert!(e.windows(2).all(|w| w[0].weight.abs() >= w[1].weight.abs()));
    }
}

#[test]
fn matrix_export_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eye.csv");
    export_matrix(&Tensor::<f64>::eye(3), &path, None).unwrap();
    assert_eq!(load_matrix::<f64>(&path).unwrap(), Tensor::eye(3));

    let two = m(&[&[0.1, -1.0 / 3.0], &[std::f64::consts::PI, 2e-300]]);
    export_matrix(&two, &path, Some(&["left".into(), "right".into()])).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert_eq!(text.lines().next().unwrap(), "left,right");
    assert_eq!(load_matrix::<f64>(&path).unwrap(), two);

    let first = fs::read(&path).unwrap();
    export_matrix(&two, &path, Some(&["left".into(), "right".into()])).unwrap();
    assert_eq!(fs::read(&path).unwrap(), first);
}

#[test]
fn edge_and_importance_exports() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("edges.csv");
    let zero = Tensor::<f64>::zeros(&[4, 4]);
    let edges: Vec<_> = top_edges(&zero, 0.5, false).unwrap().into_iter().filter(|e| e.weight != 0.0).collect();
    export_edges(&edges, &path).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), "i,j,weight\n");

    let a = m(&[&[1.0, 0.9, 0.1], &[0.9, 1.0, -0.5], &[0.1, -0.5, 1.0]]);
    let edges = top_edges(&a, 1.0, false).unwrap();
    export_edges(&edges, &path).unwrap();
    assert_eq!(load_edges::<f64>(&path).unwrap(), edges);

    let ranked = node_importance(&a, false).unwrap();
    export_importance(&ranked, 2, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("rank,roi,score\n1,0,"));
}

#[test]
fn saved_synthetic_dataset_reloads_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        samples_per_class: 2,
        n_rois: 6,
        series_len: 20,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic::<f64>(&spec).unwrap();
    let manifest = save_dataset(dir.path(), &data.classes, &data.samples).unwrap();
    let ds = load_dataset::<f64>(&manifest, LoadOptions::default()).unwrap();
    assert_eq!(ds.samples, data.samples);
}
