use dcdnn::dataset_file::{decode_dataset, encode_dataset, read_dataset, write_dataset};
use dcdnn::model_file::{decode_bank, encode_bank, read_bank, write_bank, ElementType};
use dcdnn::pgm::{expand_inputs, load_plane, save_pgm};
use dcdnn_core::dataset::{Dataset, ExtractConfig, Plane, Tiling};
use dcdnn_core::fcnet::InitScheme;
use dcdnn_core::rng::SeededRng;
use dcdnn_core::trainer::{init_mode, NetShape, TrainerConfig};

fn noise_plane(w: usize, h: usize, seed: u64) -> Plane {
    let mut rng = SeededRng::new(seed);
    Plane::new(w, h, (0..w * h).map(|_| rng.below(256) as u8).collect()).unwrap()
}

fn mixed64_dataset() -> Dataset {
    let cfg = ExtractConfig {
        ref_lines: 2,
        pu_size: 64,
        tiling: Tiling::Mixed64,
        stride: 64,
        filter: false,
    };
    Dataset::extract(&[noise_plane(128, 64, 1)], None, &cfg).unwrap()
}

#[test]
fn mixed_size_dataset_round_trips_through_file() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = mixed64_dataset();
    assert_eq!(ds.block_sizes, [4, 8, 16, 32]);
    assert_eq!(ds.groups.len(), 2);
    assert!(ds.groups.iter().all(|g| g.members.len() == 31));
    let path = tmp.path().join("mixed.dcds");
    write_dataset(&ds, &path).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), ds);
}

#[test]
fn every_truncation_of_a_dataset_is_rejected() {
    let bytes = encode_dataset(&mixed64_dataset()).unwrap();
    for cut in (0..bytes.len()).step_by(97) {
        assert!(decode_dataset(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_dataset(&extra).is_err());
}

#[test]
fn bank_round_trips_through_file() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = mixed64_dataset();
    let cfg = TrainerConfig {
        shape: NetShape {
            ref_lines: 2,
            depth: 2,
            init: InitScheme::FanInScaled,
            hidden_dims: [6, 7, 8, 9],
        },
        ..TrainerConfig::default()
    };
    let bank: Vec<_> = (0..2)
        .map(|k| init_mode(&ds, &TrainerConfig { seed: k, ..cfg.clone() }).unwrap())
        .collect();
    let path = tmp.path().join("bank.dcdb");
    write_bank(&bank, &path).unwrap();
    assert_eq!(read_bank(&path).unwrap(), bank);

    let bytes = encode_bank(&bank, ElementType::F64).unwrap();
    for cut in (0..bytes.len()).step_by(131) {
        assert!(decode_bank(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut bumped = bytes.clone();
    bumped[4] = 9;
    let err = decode_bank(&bumped).unwrap_err().to_string();
    assert!(err.contains("version"), "{err}");
}

#[test]
fn image_inputs_and_lists() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("imgs");
    std::fs::create_dir(&dir).unwrap();
    let a = noise_plane(8, 4, 2);
    let b = noise_plane(5, 7, 3);
    save_pgm(&a, &dir.join("b.pgm")).unwrap();
    save_pgm(&b, &dir.join("a.pgm")).unwrap();
    std::fs::write(dir.join("notes.md"), "ignored").unwrap();
    let found = expand_inputs(std::slice::from_ref(&dir)).unwrap();
    assert_eq!(found, [dir.join("a.pgm"), dir.join("b.pgm")]);
    assert_eq!(load_plane(&found[0]).unwrap(), b);
    assert_eq!(load_plane(&found[1]).unwrap(), a);

    let list = tmp.path().join("inputs.txt");
    std::fs::write(&list, format!("{}\n\n{}\n", found[1].display(), found[0].display())).unwrap();
    assert_eq!(expand_inputs(&[list]).unwrap(), [found[1].clone(), found[0].clone()]);
    assert!(expand_inputs(&[tmp.path().join("missing.txt")]).is_err());
    let missing = tmp.path().join("missing.pgm");
    assert_eq!(expand_inputs(std::slice::from_ref(&missing)).unwrap(), std::slice::from_ref(&missing));
    assert!(load_plane(&missing).is_err());
}
