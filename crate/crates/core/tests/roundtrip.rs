use mmlsh::baselines::GroundTruth;
use mmlsh::buffer::{build_frequency_profile, FrequencyProfile, SchedulerConfig, Simulator, Strategy};
use mmlsh::gamma::GammaParams;
use mmlsh::lsh::{build_index, derive_params, LshIndex, DEFAULT_W};
use mmlsh::model::{
    load_feature_file, load_object_map, sample_queries, synth_dataset, write_feature_file,
    write_object_map,
};
use mmlsh::query::{knn_objects, SearchConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn feature_file_preserves_vectors_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vectors.bin");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let vectors: Vec<Vec<f32>> = (0..100)
        .map(|_| (0..17).map(|_| rng.random_range(-1e3f32..1e3)).collect())
        .collect();
    write_feature_file(&path, vectors.iter().map(Vec::as_slice)).unwrap();
    let back = load_feature_file(&path).unwrap();
    assert_eq!(back.len(), 100);
    for (i, (fv, v)) in back.iter().zip(&vectors).enumerate() {
        assert_eq!(fv.point_id as usize, i);
        let a: Vec<u32> = fv.coords.iter().map(|x| x.to_bits()).collect();
        let b: Vec<u32> = v.iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn dataset_survives_vectors_and_object_map() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset(12, 5, 6, 0.2, 4).unwrap();
    let vec_path = dir.path().join("v.bin");
    let map_path = dir.path().join("o.csv");
    write_feature_file(&vec_path, ds.points().iter().map(|p| p.coords.as_slice())).unwrap();
    write_object_map(&map_path, &ds).unwrap();
    let back = load_object_map(&map_path, load_feature_file(&vec_path).unwrap()).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn reloaded_index_answers_identically() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset(500, 20, 16, 0.1, 8).unwrap();
    assert_eq!(ds.len(), 10_000);
    let params = derive_params(0.1, 25.0 / 500.0, 2, DEFAULT_W).unwrap();
    let idx = build_index(&ds, &params, 8).unwrap();
    let path = dir.path().join("idx.bin");
    idx.save(&path).unwrap();
    let back = LshIndex::load(&path).unwrap();
    assert_eq!(back.to_bytes(), idx.to_bytes());

    let cfg = SearchConfig {
        k: 10,
        gamma: GammaParams::new(0.95, 0.1, 25.0 / 500.0).unwrap(),
    };
    for q in sample_queries(&ds, 5, None, 8).unwrap() {
        let mut s1 = Simulator::new(SchedulerConfig::new(Strategy::Mmlsh), 30_000_000).unwrap();
        let mut s2 = Simulator::new(SchedulerConfig::new(Strategy::Mmlsh), 30_000_000).unwrap();
        let a = knn_objects(&idx, &ds, &q, &cfg, &mut s1).unwrap();
        let b = knn_objects(&back, &ds, &q, &cfg, &mut s2).unwrap();
        assert_eq!(a.neighbors, b.neighbors);
        assert_eq!(a.stats, b.stats);
    }
}

#[test]
fn corrupted_index_is_rejected() {
    let ds = synth_dataset(10, 4, 4, 0.1, 1).unwrap();
    let params = derive_params(0.1, 0.5, 2, DEFAULT_W).unwrap();
    let mut bytes = build_index(&ds, &params, 1).unwrap().to_bytes();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    let err = LshIndex::from_bytes(&bytes).unwrap_err();
    assert!(err.is_data_error());
    assert!(LshIndex::from_bytes(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn profile_round_trips_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset(40, 10, 8, 0.1, 2).unwrap();
    let params = derive_params(0.1, 0.5, 2, DEFAULT_W).unwrap();
    let idx = build_index(&ds, &params, 2).unwrap();
    let profile = build_frequency_profile(&idx, 200, 10, 2).unwrap();
    let path = dir.path().join("p.profile");
    profile.save(&path).unwrap();
    assert_eq!(FrequencyProfile::load(&path).unwrap(), profile);
}

#[test]
fn ground_truth_round_trips_through_csv() {
    let ds = synth_dataset(30, 6, 5, 0.1, 5).unwrap();
    let queries = sample_queries(&ds, 4, None, 5).unwrap();
    let gt = GroundTruth::compute(&ds, &queries, 7, 0.9).unwrap();
    let mut buf = Vec::new();
    gt.write_csv(&mut buf).unwrap();
    assert_eq!(GroundTruth::read_csv(buf.as_slice()).unwrap(), gt);
}
