mod common;

use dama::lab::{grid_search, load_checkpoint, prepare_data, save_checkpoint, Checkpoint};
use dama::layers::Mode;
use dama::net::forward;
use dama::numerics::RngStream;
use dama::Error;

fn trained(seed: u64) -> Checkpoint {
    let cfg = common::tiny_config(seed);
    let data = prepare_data(&cfg).unwrap();
    let grid = grid_search(&cfg, &data).unwrap();
    Checkpoint {
        config: cfg,
        net: grid.model.net,
        vocab: data.vocab.clone(),
        domains: data.names(),
        log: grid.model.log,
    }
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained(5);
    let (a, b) = (dir.path().join("a.dama"), dir.path().join("b.dama"));
    save_checkpoint(&ck, &a).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    save_checkpoint(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(loaded.config, ck.config);
    assert_eq!(loaded.domains, ck.domains);
    assert_eq!(loaded.vocab.regular_tokens(), ck.vocab.regular_tokens());
    assert_eq!(loaded.net.gamma, ck.net.gamma);
    assert_eq!(loaded.net.dropout_p, ck.net.dropout_p);
}

#[test]
fn reloaded_model_gives_bit_identical_outputs() {
    let ck = trained(6);
    let loaded = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    let data = prepare_data(&ck.config).unwrap();
    let ids: Vec<Vec<usize>> = data.domains[1].test.iter().map(|e| e.tokens.clone()).collect();
    let a = forward(&ck.net, &ids, Mode::Eval, &mut RngStream::new(0)).unwrap();
    let b = forward(&loaded.net, &ids, Mode::Eval, &mut RngStream::new(0)).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.p(), y.p());
        assert_eq!(x.q(), y.q());
        assert_eq!(x.a_ttn(), y.a_ttn());
    }
}

#[test]
fn same_seed_same_checkpoint() {
    assert_eq!(trained(9).to_bytes(), trained(9).to_bytes());
    assert_ne!(trained(9).to_bytes(), trained(10).to_bytes());
}

#[test]
fn corrupt_inputs_report_an_offset() {
    let bytes = trained(11).to_bytes();
    for cut in [0, 3, 8, 20, bytes.len() / 2, bytes.len() - 1] {
        match Checkpoint::from_bytes(&bytes[..cut]) {
            Err(Error::Checkpoint { offset, .. }) => assert!(offset <= cut, "offset {offset} past cut {cut}"),
            other => panic!("cut at {cut}: expected checkpoint error, got {:?}", other.map(|_| ())),
        }
    }
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad_magic), Err(Error::Checkpoint { offset: 0, .. })));
    let mut trailing = bytes;
    trailing.push(0);
    assert!(Checkpoint::from_bytes(&trailing).is_err());
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_checkpoint(&dir.path().join("none.dama")), Err(Error::Io { .. })));
}
