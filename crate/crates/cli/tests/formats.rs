use std::collections::BTreeMap;

use hessforge::container::{
    container_bytes, parse_container, read_container, write_container, ContainerError,
};
use hessforge::manifest::{load_manifest, ManifestError};
use hessforge::pools::{load_pool, PoolError, PoolKind};
use hessforge_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mat(rows: usize, cols: usize, vals: &[f64]) -> Matrix {
    Matrix::from_vec(rows, cols, vals.to_vec()).unwrap()
}

fn raw_container(header: &str, payload: &[u8]) -> Vec<u8> {
    let mut out = (header.len() as u64).to_le_bytes().to_vec();
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(payload);
    out
}

#[test]
fn container_round_trip_is_byte_identical() {
    let mut tensors = BTreeMap::new();
    tensors.insert("w/fc1".to_string(), mat(2, 3, &[1.0, -2.5, 0.0, 4.25, 0.001953125, -7.0]));
    tensors.insert("w/fc0".to_string(), mat(1, 2, &[0.5, 0.125]));
    tensors.insert("emb".to_string(), mat(2, 2, &[1.0, 0.0, 0.0, 1.0]));

    let bytes = container_bytes(&tensors).unwrap();
    let parsed = parse_container(&bytes).unwrap();
    assert_eq!(parsed.len(), 3);
    for (name, m) in &tensors {
        assert_eq!(parsed[name].as_slice(), m.as_slice(), "tensor {name}");
    }
    let again = container_bytes(&parsed).unwrap();
    assert_eq!(bytes, again);
}

#[test]
fn large_f32_tensor_survives_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let vals: Vec<f64> = (0..512 * 384).map(|_| rng.random::<f32>() as f64).collect();
    let mut tensors = BTreeMap::new();
    tensors.insert("big".to_string(), mat(512, 384, &vals));

    let bytes = container_bytes(&tensors).unwrap();
    let parsed = parse_container(&bytes).unwrap();
    assert_eq!(parsed["big"].as_slice(), vals.as_slice());
    assert_eq!(container_bytes(&parsed).unwrap(), bytes);
}

#[test]
fn container_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.tensors");
    let mut tensors = BTreeMap::new();
    tensors.insert("a".to_string(), mat(1, 4, &[1.0, 2.0, 3.0, 4.0]));
    write_container(&path, &tensors).unwrap();
    let back = read_container(&path).unwrap();
    assert_eq!(back["a"].as_slice(), tensors["a"].as_slice());
}

#[test]
fn container_rejects_non_finite_values() {
    let mut tensors = BTreeMap::new();
    tensors.insert("bad".to_string(), mat(1, 1, &[f64::NAN]));
    assert!(matches!(container_bytes(&tensors), Err(ContainerError::Value(_))));

    tensors.insert("bad".to_string(), mat(1, 1, &[1e300]));
    assert!(matches!(container_bytes(&tensors), Err(ContainerError::Value(_))));
}

#[test]
fn parse_rejects_unknown_dtype() {
    let header = r#"{"a":{"dtype":"f64","shape":[1,1],"offset_begin":0,"offset_end":8}}"#;
    let bytes = raw_container(header, &[0u8; 8]);
    assert!(matches!(parse_container(&bytes), Err(ContainerError::UnsupportedDtype(d)) if d == "f64"));
}

#[test]
fn parse_rejects_gapped_offsets() {
    let header = r#"{"a":{"dtype":"f32","shape":[1,1],"offset_begin":4,"offset_end":8}}"#;
    let bytes = raw_container(header, &[0u8; 8]);
    assert!(matches!(parse_container(&bytes), Err(ContainerError::Format(_))));
}

#[test]
fn parse_rejects_shape_span_mismatch() {
    let header = r#"{"a":{"dtype":"f32","shape":[1,2],"offset_begin":0,"offset_end":12}}"#;
    let bytes = raw_container(header, &[0u8; 12]);
    assert!(matches!(parse_container(&bytes), Err(ContainerError::Format(_))));
}

#[test]
fn parse_rejects_truncated_payload() {
    let header = r#"{"a":{"dtype":"f32","shape":[1,2],"offset_begin":0,"offset_end":8}}"#;
    let bytes = raw_container(header, &[0u8; 4]);
    assert!(matches!(parse_container(&bytes), Err(ContainerError::Format(_))));
}

#[test]
fn parse_rejects_trailing_payload_bytes() {
    let header = r#"{"a":{"dtype":"f32","shape":[1,1],"offset_begin":0,"offset_end":4}}"#;
    let bytes = raw_container(header, &[0u8; 8]);
    assert!(matches!(parse_container(&bytes), Err(ContainerError::Format(_))));
}

#[test]
fn parse_rejects_header_longer_than_file() {
    let mut bytes = 1000u64.to_le_bytes().to_vec();
    bytes.extend_from_slice(b"{}");
    assert!(matches!(parse_container(&bytes), Err(ContainerError::Format(_))));
    assert!(matches!(parse_container(&[1, 2, 3]), Err(ContainerError::Format(_))));
}

fn write_json(path: &std::path::Path, value: &serde_json::Value) {
    std::fs::write(path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
}

#[test]
fn manifest_loads_and_resolves() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    write_json(
        &path,
        &serde_json::json!({
            "layers": [
                {"name": "fc0", "weight_tensor": "w/fc0", "in_features": 3, "out_features": 2},
                {"name": "fc1", "weight_tensor": "w/fc1", "in_features": 2, "out_features": 1}
            ],
            "embedding_tensor": "emb"
        }),
    );
    let manifest = load_manifest(&path).unwrap();
    assert_eq!(manifest.layers.len(), 2);

    let mut tensors = BTreeMap::new();
    tensors.insert("w/fc0".to_string(), mat(2, 3, &[1.0; 6]));
    tensors.insert("w/fc1".to_string(), mat(1, 2, &[1.0; 2]));
    tensors.insert("emb".to_string(), mat(4, 3, &[0.5; 12]));
    let (stack, embedding) = manifest.resolve(&tensors).unwrap();
    assert_eq!(stack.in_features(), 3);
    assert_eq!(stack.out_features(), 1);
    assert_eq!(embedding.unwrap().rows(), 4);
}

#[test]
fn manifest_without_embedding_resolves_to_none() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    write_json(
        &path,
        &serde_json::json!({
            "layers": [
                {"name": "fc0", "weight_tensor": "w", "in_features": 2, "out_features": 2}
            ]
        }),
    );
    let manifest = load_manifest(&path).unwrap();
    let mut tensors = BTreeMap::new();
    tensors.insert("w".to_string(), mat(2, 2, &[1.0; 4]));
    let (_, embedding) = manifest.resolve(&tensors).unwrap();
    assert!(embedding.is_none());
}

#[test]
fn manifest_rejects_broken_layer_chain() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    write_json(
        &path,
        &serde_json::json!({
            "layers": [
                {"name": "fc0", "weight_tensor": "a", "in_features": 3, "out_features": 2},
                {"name": "fc1", "weight_tensor": "b", "in_features": 3, "out_features": 1}
            ]
        }),
    );
    assert!(matches!(load_manifest(&path), Err(ManifestError::Invalid(_))));
}

#[test]
fn manifest_rejects_empty_layer_list() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    write_json(&path, &serde_json::json!({"layers": []}));
    assert!(matches!(load_manifest(&path), Err(ManifestError::Invalid(_))));
}

#[test]
fn resolve_rejects_missing_and_misshapen_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    write_json(
        &path,
        &serde_json::json!({
            "layers": [
                {"name": "fc0", "weight_tensor": "w", "in_features": 3, "out_features": 2}
            ],
            "embedding_tensor": "emb"
        }),
    );
    let manifest = load_manifest(&path).unwrap();

    let empty = BTreeMap::new();
    assert!(matches!(manifest.resolve(&empty), Err(ManifestError::Invalid(_))));

    let mut wrong = BTreeMap::new();
    wrong.insert("w".to_string(), mat(3, 2, &[1.0; 6]));
    wrong.insert("emb".to_string(), mat(2, 3, &[1.0; 6]));
    assert!(matches!(manifest.resolve(&wrong), Err(ManifestError::Invalid(_))));

    let mut bad_emb = BTreeMap::new();
    bad_emb.insert("w".to_string(), mat(2, 3, &[1.0; 6]));
    bad_emb.insert("emb".to_string(), mat(2, 2, &[1.0; 4]));
    assert!(matches!(manifest.resolve(&bad_emb), Err(ManifestError::Invalid(_))));
}

#[test]
fn pool_prefixes_split_one_file_into_two_pools() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pool.tensors");
    let mut tensors = BTreeMap::new();
    tensors.insert("generic/000".to_string(), mat(2, 3, &[1.0; 6]));
    tensors.insert("generic/001".to_string(), mat(1, 3, &[2.0; 3]));
    tensors.insert("domain/000".to_string(), mat(4, 3, &[3.0; 12]));
    write_container(&path, &tensors).unwrap();

    let generic = load_pool(&path, PoolKind::Generic).unwrap();
    assert_eq!(generic.len(), 2);
    assert_eq!(generic.total_rows(), 3);
    assert_eq!(generic.examples()[0].rows(), 2);

    let domain = load_pool(&path, PoolKind::Domain).unwrap();
    assert_eq!(domain.len(), 1);
    assert_eq!(domain.examples()[0].rows(), 4);
}

#[test]
fn unprefixed_pool_file_serves_either_kind() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pool.tensors");
    let mut tensors = BTreeMap::new();
    tensors.insert("ex0".to_string(), mat(2, 2, &[1.0; 4]));
    tensors.insert("ex1".to_string(), mat(2, 2, &[2.0; 4]));
    write_container(&path, &tensors).unwrap();

    assert_eq!(load_pool(&path, PoolKind::Generic).unwrap().len(), 2);
    assert_eq!(load_pool(&path, PoolKind::Domain).unwrap().len(), 2);
}

#[test]
fn pool_errors_when_the_requested_kind_is_absent() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pool.tensors");
    let mut tensors = BTreeMap::new();
    tensors.insert("generic/000".to_string(), mat(2, 2, &[1.0; 4]));
    write_container(&path, &tensors).unwrap();
    assert!(matches!(load_pool(&path, PoolKind::Domain), Err(PoolError::Empty(PoolKind::Domain))));
}

#[test]
fn pool_examples_arrive_in_sorted_name_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pool.tensors");
    let mut tensors = BTreeMap::new();
    for i in 0..4 {
        tensors.insert(format!("generic/{i:03}"), mat(1, 2, &[i as f64, 0.0]));
    }
    write_container(&path, &tensors).unwrap();
    let pool = load_pool(&path, PoolKind::Generic).unwrap();
    for (i, ex) in pool.examples().iter().enumerate() {
        assert_eq!(ex.get(0, 0), i as f64);
    }
}
