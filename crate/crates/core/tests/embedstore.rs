use std::fs;

use latent_concepts::embedstore::{
    gather_rows, layer_file, read_embeddings, write_embeddings, EmbeddingFileHeader, EmbeddingMatrix, EmbeddingSidecar,
    HEADER_LEN, MAGIC,
};
use latent_concepts::Error;
use proptest::prelude::*;

fn bits(m: &EmbeddingMatrix) -> Vec<u32> {
    m.values().iter().map(|v| v.to_bits()).collect()
}

fn finite_f32() -> impl Strategy<Value = f32> {
    any::<u32>().prop_map(f32::from_bits).prop_filter("finite", |v| v.is_finite())
}

#[test]
fn header_layout_is_fixed() {
    let m = EmbeddingMatrix::new(7, 2, 3, vec![0.0; 6]).unwrap();
    let h = m.header().to_bytes();
    assert_eq!(&h[0..8], b"LCEMBED\0");
    assert_eq!(&h[8..12], &1u32.to_le_bytes());
    assert_eq!(&h[12..16], &7u32.to_le_bytes());
    assert_eq!(&h[16..24], &2u64.to_le_bytes());
    assert_eq!(&h[24..32], &3u64.to_le_bytes());
    assert_eq!((h[32], h[33]), (1, 1));
    assert!(h[34..40].iter().all(|&b| b == 0));
}

#[test]
fn payload_is_little_endian_row_major() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let m = EmbeddingMatrix::new(0, 2, 2, vec![1.0, -2.0, 0.5, 3.25]).unwrap();
    write_embeddings(&m, &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert_eq!(bytes.len(), HEADER_LEN + 16);
    let expected: Vec<u8> = [1.0f32, -2.0, 0.5, 3.25].iter().flat_map(|v| v.to_le_bytes()).collect();
    assert_eq!(&bytes[HEADER_LEN..], &expected[..]);
}

#[test]
fn rejects_corrupt_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let m = EmbeddingMatrix::new(0, 2, 2, vec![1.0; 4]).unwrap();
    write_embeddings(&m, &path).unwrap();
    let good = fs::read(&path).unwrap();

    let mut truncated = good.clone();
    truncated.pop();
    fs::write(&path, &truncated).unwrap();
    assert!(matches!(read_embeddings(&path), Err(Error::Format(_))));

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    fs::write(&path, &bad_magic).unwrap();
    assert!(matches!(read_embeddings(&path), Err(Error::Format(_))));

    let mut bad_version = good.clone();
    bad_version[8] = 2;
    fs::write(&path, &bad_version).unwrap();
    assert!(matches!(read_embeddings(&path), Err(Error::Format(_))));

    let mut bad_dtype = good.clone();
    bad_dtype[32] = 2;
    fs::write(&path, &bad_dtype).unwrap();
    assert!(matches!(read_embeddings(&path), Err(Error::Format(_))));

    fs::write(&path, &good[..10]).unwrap();
    assert!(matches!(read_embeddings(&path), Err(Error::Format(_))));
}

#[test]
fn non_finite_values_are_not_written() {
    let dir = tempfile::tempdir().unwrap();
    let m = EmbeddingMatrix::new(0, 1, 2, vec![1.0, f32::INFINITY]).unwrap();
    assert!(write_embeddings(&m, &dir.path().join("m.bin")).is_err());
}

#[test]
fn shape_mismatch_is_rejected() {
    assert!(EmbeddingMatrix::new(0, 2, 2, vec![0.0; 3]).is_err());
}

#[test]
fn header_parse_round_trip() {
    let h = EmbeddingMatrix::new(12, 5, 768, vec![0.0; 5 * 768]).unwrap().header();
    assert_eq!(EmbeddingFileHeader::parse(&h.to_bytes()).unwrap(), h);
    let mut bytes = h.to_bytes();
    bytes[..8].copy_from_slice(&MAGIC);
    bytes[33] = 0;
    assert!(EmbeddingFileHeader::parse(&bytes).is_err());
}

#[test]
fn sidecar_round_trip_and_checksum_guard() {
    let dir = tempfile::tempdir().unwrap();
    let sidecar = EmbeddingSidecar {
        dataset_checksum: "abc".into(),
        model_name: "bert-base-cased".into(),
        layers: vec![0, 12],
        n: 4,
        d: 768,
        aggregation: "mean".into(),
    };
    sidecar.save(dir.path()).unwrap();
    let loaded = EmbeddingSidecar::load(dir.path()).unwrap();
    assert_eq!(loaded, sidecar);
    assert!(loaded.check_dataset("abc").is_ok());
    assert!(loaded.check_dataset("abd").is_err());
    assert_eq!(layer_file(dir.path(), 3).file_name().unwrap(), "layer_03.bin");
}

#[test]
fn gather_copies_rows_in_order() {
    let m = EmbeddingMatrix::new(1, 3, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let g = gather_rows(&m, &[2, 0, 2]).unwrap();
    assert_eq!(g.values(), &[4.0, 5.0, 0.0, 1.0, 4.0, 5.0]);
    assert_eq!(g.layer, 1);
    assert!(gather_rows(&m, &[3]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn round_trip_preserves_bits(
        (n, d, values) in (1usize..12, 1usize..12).prop_flat_map(|(n, d)| (Just(n), Just(d), prop::collection::vec(finite_f32(), n * d))),
        layer in 0u32..25,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let m = EmbeddingMatrix::new(layer, n, d, values).unwrap();
        write_embeddings(&m, &path).unwrap();
        let back = read_embeddings(&path).unwrap();
        prop_assert_eq!((back.layer, back.n(), back.d()), (layer, n, d));
        prop_assert_eq!(bits(&back), bits(&m));
    }
}
