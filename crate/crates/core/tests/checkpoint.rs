use pingpong::channel::{ChannelModel, Geometry, LinkMode};
use pingpong::harness::{evaluate, train, LearnedPolicy, PolicyId, TrainConfig};
use pingpong::nn::{checkpoint, ParameterStore, Tensor};
use pingpong::policies::{NetConfig, RisSensing, SensingKind, Trainable};
use pingpong::protocol::ProtocolConfig;
use pingpong::Error;
use sha2::{Digest, Sha256};

fn tensor_bytes(out: &mut Vec<u8>, name: &str, rows: u32, cols: u32, data: &[f64]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

#[test]
fn encoding_matches_hand_built_layout() {
    let mut store = ParameterStore::new();
    store.add_param("w", Tensor::new(1, 2, vec![1.5, -2.0]).unwrap()).unwrap();
    store.add_buffer("mean", Tensor::new(1, 1, vec![0.25]).unwrap()).unwrap();

    let mut want = b"PINGPONG".to_vec();
    want.extend_from_slice(&1u32.to_le_bytes());
    want.extend_from_slice(&5u32.to_le_bytes());
    tensor_bytes(&mut want, "param:w", 1, 2, &[1.5, -2.0]);
    tensor_bytes(&mut want, "buffer:mean", 1, 1, &[0.25]);
    tensor_bytes(&mut want, "adam_m:w", 1, 2, &[0.0, 0.0]);
    tensor_bytes(&mut want, "adam_v:w", 1, 2, &[0.0, 0.0]);
    tensor_bytes(&mut want, "adam_step", 1, 1, &[0.0]);
    let digest = Sha256::digest(&want);
    want.extend_from_slice(&digest);

    assert_eq!(checkpoint::encode(&store), want);
    assert!(checkpoint::decode(&want).unwrap().bit_identical(&store));
}

#[test]
fn damaged_files_are_rejected() {
    let mut store = ParameterStore::new();
    store.add_param("w", Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
    let bytes = checkpoint::encode(&store);

    let mut flipped = bytes.clone();
    flipped[30] ^= 1;
    assert!(matches!(checkpoint::decode(&flipped), Err(Error::Checkpoint(_))));
    assert!(matches!(checkpoint::decode(&bytes[..bytes.len() - 5]), Err(Error::Checkpoint(_))));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(checkpoint::decode(&magic), Err(Error::Checkpoint(_))));
}

#[test]
fn trained_policy_survives_a_file_round_trip() {
    let geom = Geometry::direct(4, 2);
    let config = ProtocolConfig::from_snr_db(2, 10.0, geom, LinkMode::Direct);
    let model = ChannelModel::direct(geom, 2);
    let net = NetConfig {
        hidden_a: 8,
        hidden_b: 8,
        head: vec![16],
        batch_norm: true,
    };
    let cfg = TrainConfig {
        batch_size: 32,
        steps_per_epoch: 5,
        max_epochs: 2,
        validation_size: 100,
        patience: 2,
        ..TrainConfig::default()
    };
    let id = PolicyId::Active(RisSensing::Active);
    let mut p = LearnedPolicy::new(id, config, net.clone(), 4).unwrap();
    train(&mut p, &model, &cfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    checkpoint::save(p.store(), &path).unwrap();
    let mut q = LearnedPolicy::new(id, config, net.clone(), 99).unwrap();
    checkpoint::load_into(q.store_mut(), &path).unwrap();
    assert!(q.store().bit_identical(p.store()));
    let a = evaluate(&p, &config, &model, 50, 3, 1).unwrap();
    let b = evaluate(&q, &config, &model, 50, 3, 1).unwrap();
    assert_eq!(a, b);

    // a different architecture or policy kind does not accept it
    let mut wide = LearnedPolicy::new(id, config, NetConfig { hidden_a: 9, ..net.clone() }, 4).unwrap();
    assert!(matches!(checkpoint::load_into(wide.store_mut(), &path), Err(Error::CheckpointMismatch(_))));
    let mut fixed = LearnedPolicy::new(PolicyId::Fixed(SensingKind::Learned), config, net, 4).unwrap();
    assert!(matches!(checkpoint::load_into(fixed.store_mut(), &path), Err(Error::CheckpointMismatch(_))));
}
