mod common;

use sdsat::model::checkpoint::{from_bytes, load, save, to_bytes};
use sdsat::{generate_greedy, CheckpointError, GreedyOptions, ModelConfig};

use common::untrained;

fn config() -> ModelConfig {
    ModelConfig {
        vocab_size: 50,
        n_adaptive: 6,
        n_layers: 3,
        n_heads: 4,
        d_model: 24,
        max_seq: 40,
        seed: 21,
    }
}

#[test]
fn saved_model_decodes_identically() {
    let params = untrained(config());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save(&params, &path).unwrap();
    let back = load(&path).unwrap();
    assert_eq!(back.config(), params.config());
    assert_eq!(back.data(), params.data());
    assert_eq!(back.checksum(), params.checksum());

    let opts = GreedyOptions::new(&params, 4, 20);
    let prompt = [3, 1, 4, 1, 5];
    assert_eq!(
        generate_greedy(&params, &prompt, &opts).unwrap().0,
        generate_greedy(&back, &prompt, &opts).unwrap().0
    );
}

#[test]
fn damaged_files_are_rejected() {
    let bytes = to_bytes(&untrained(config()));
    assert!(matches!(from_bytes(b"nonsense"), Err(CheckpointError::Magic)));
    assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());

    let mut flipped = bytes.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 0x40;
    assert!(matches!(
        from_bytes(&flipped),
        Err(CheckpointError::Checksum { .. })
    ));

    let mut longer = bytes;
    longer.push(0);
    assert!(from_bytes(&longer).is_err());
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load(dir.path().join("absent")),
        Err(CheckpointError::Io(_))
    ));
}
