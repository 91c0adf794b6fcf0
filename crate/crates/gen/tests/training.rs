use matformer_core::dataset::synthesize_graph;
use matformer_core::sequencer::{Codec, NodeOrdering, Quantizer};
use matformer_core::{Library, MaterialGraph};
use matformer_gen::{EpochLog, GenError, ModelConfig, Stage, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus(n: usize, seed: u64) -> Vec<MaterialGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let size = rng.random_range(6..=18);
            synthesize_graph(Library::builtin(), size, &mut rng)
        })
        .collect()
}

fn config(stage: Stage) -> TrainConfig {
    let mut cfg = TrainConfig::new(stage, NodeOrdering::BackToFrontReversed);
    cfg.model = ModelConfig { layers: 1, heads: 2, dim: 16 };
    cfg.batch_size = 4;
    cfg.adam.lr = 3e-3;
    cfg.max_epochs = 3;
    cfg.patience = 10;
    cfg
}

fn run(stage: Stage, train: &[MaterialGraph], val: &[MaterialGraph]) -> (Vec<EpochLog>, Vec<f64>) {
    let lib = Library::builtin();
    let codec = Codec::new(lib.clone(), Quantizer::fit(&lib, train));
    let mut t = Trainer::new(codec, config(stage)).unwrap();
    let mut logs = Vec::new();
    t.train(train, val, |_, l| {
        logs.push(l.clone());
        Ok(())
    })
    .unwrap();
    (logs, t.step_losses.clone())
}

#[test]
fn loss_falls_over_the_first_epochs() {
    let train = corpus(16, 1);
    let val = corpus(4, 2);
    for stage in Stage::ALL {
        let (logs, _) = run(stage, &train, &val);
        assert_eq!(logs.len(), 3);
        assert!(logs.iter().all(|l| l.steps == 4));
        for w in logs.windows(2) {
            assert!(w[1].train_loss < w[0].train_loss, "{stage}: {logs:?}");
        }
        assert!(logs[2].val_loss.unwrap() < logs[0].val_loss.unwrap(), "{stage}: {logs:?}");
    }
}

#[test]
fn training_is_bit_reproducible() {
    let train = corpus(8, 3);
    let val = corpus(2, 4);
    for stage in [Stage::Nodes, Stage::Edges] {
        let (a, sa) = run(stage, &train, &val);
        let (b, sb) = run(stage, &train, &val);
        assert_eq!(a, b);
        assert_eq!(sa.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), sb.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn resuming_from_a_checkpoint_continues_the_same_run() {
    let train = corpus(8, 5);
    let val = corpus(2, 6);
    let lib = Library::builtin();
    let codec = Codec::new(lib.clone(), Quantizer::fit(&lib, &train));
    let valt = |t: &Trainer| t.tokenize_validation(&val).unwrap();

    let mut full = Trainer::new(codec.clone(), config(Stage::Params)).unwrap();
    let v = valt(&full);
    for _ in 0..3 {
        full.run_epoch(&train, &v).unwrap();
    }

    let mut part = Trainer::new(codec.clone(), config(Stage::Params)).unwrap();
    part.run_epoch(&train, &v).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.mfck");
    part.checkpoint().unwrap().save(&path).unwrap();
    let mut resumed = Trainer::resume(codec, &matformer_nn::Checkpoint::load(&path).unwrap()).unwrap();
    for _ in 0..2 {
        resumed.run_epoch(&train, &v).unwrap();
    }
    assert_eq!(resumed.state.log, full.state.log);
    assert_eq!(resumed.finish().store, full.finish().store);
}

#[test]
fn step_cap_and_patience_end_training() {
    let train = corpus(8, 7);
    let lib = Library::builtin();
    let codec = Codec::new(lib.clone(), Quantizer::fit(&lib, &train));
    let mut cfg = config(Stage::Nodes);
    cfg.max_steps = Some(5);
    cfg.max_epochs = 50;
    let mut t = Trainer::new(codec.clone(), cfg).unwrap();
    t.train(&train, &[], |_, _| Ok(())).unwrap();
    assert_eq!(t.state.step, 5);

    // A learning rate of zero never improves, so patience runs out.
    let mut cfg = config(Stage::Nodes);
    cfg.adam.lr = 0.0;
    cfg.max_epochs = 50;
    cfg.patience = 2;
    let mut t = Trainer::new(codec, cfg).unwrap();
    t.train(&train, &corpus(2, 8), |_, _| Ok(())).unwrap();
    assert!(t.state.stopped);
    assert_eq!(t.state.log.len(), 3);
}

#[test]
fn callback_errors_abort_training() {
    let train = corpus(4, 9);
    let lib = Library::builtin();
    let codec = Codec::new(lib.clone(), Quantizer::fit(&lib, &train));
    let mut t = Trainer::new(codec, config(Stage::Edges)).unwrap();
    let r = t.train(&train, &[], |_, _| Err(GenError::Request("stop".into())));
    assert!(matches!(r, Err(GenError::Request(_))));
    assert_eq!(t.state.epoch, 1);
}
