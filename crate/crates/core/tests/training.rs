use afunet_core::train::{
    checkpoint, CosineSchedule, Datasets, Profile, RunConfig, Trainer, BEST_CHECKPOINT,
    LAST_CHECKPOINT,
};
use afunet_core::{Error, ExecMode};

fn tiny_config() -> RunConfig {
    let mut c = RunConfig::profile(Profile::Desk);
    c.optim.epochs = 3;
    c.optim.steps_per_epoch = Some(2);
    c.optim.patch = 32;
    c.data.synthetic.as_mut().unwrap().size = 32;
    c
}

fn tiny_data(c: &RunConfig) -> Datasets {
    c.data.load(ExecMode::preferred()).unwrap()
}

#[test]
fn empty_dataset_fails_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let c = tiny_config();
    let empty = Datasets {
        train: Vec::new(),
        validation: Vec::new(),
    };
    let run_dir = tmp.path().join("run");
    let err = Trainer::with_data(c, empty, &run_dir).err().unwrap();
    assert!(matches!(err, Error::EmptyDataset(_)), "{err}");
    assert!(!run_dir.join(LAST_CHECKPOINT).exists());
}

#[test]
fn unwritable_run_dir_fails_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let c = tiny_config();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let err = Trainer::with_data(c.clone(), tiny_data(&c), blocker.join("run")).err().unwrap();
    assert!(matches!(err, Error::Io { .. }), "{err}");
}

#[test]
fn oversized_patch_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = tiny_config();
    let data = tiny_data(&c);
    c.optim.patch = 64;
    assert!(Trainer::with_data(c, data, tmp.path()).is_err());
}

#[test]
fn epoch_writes_checkpoints_and_ledger() {
    let tmp = tempfile::tempdir().unwrap();
    let c = tiny_config();
    let mut t = Trainer::with_data(c.clone(), tiny_data(&c), tmp.path()).unwrap();
    let summaries = t.run().unwrap();
    assert_eq!(summaries.len(), 3);
    assert_eq!(t.steps(), 6);
    assert!(tmp.path().join(LAST_CHECKPOINT).is_file());
    assert!(tmp.path().join(BEST_CHECKPOINT).is_file());

    let entries = t.ledger().read().unwrap();
    assert_eq!(entries.len(), 3);
    let schedule = CosineSchedule::new(c.optim.lr_init, c.optim.lr_final, c.optim.epochs).unwrap();
    for (e, entry) in entries.iter().enumerate() {
        assert_eq!(entry.epoch, e);
        assert_eq!(entry.step, 2 * (e as u64 + 1));
        assert_eq!(entry.lr, schedule.lr(e));
        assert_eq!(entry.step_losses.len(), 2);
        assert!(entry.metrics.is_some());
    }
    assert!(entries.windows(2).all(|w| w[1].wall_clock_s >= w[0].wall_clock_s));

    let best = checkpoint::load(&tmp.path().join(BEST_CHECKPOINT)).unwrap();
    let best_psnr = entries
        .iter()
        .filter_map(|e| e.metrics.as_ref().map(|m| m.psnr_mu))
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best.meta.best_psnr_mu, Some(best_psnr));
    assert_eq!(t.best_psnr_mu(), Some(best_psnr));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let c = tiny_config();
    let data = tiny_data(&c);

    let mut full = Trainer::with_data(c.clone(), data.clone(), tmp.path().join("full")).unwrap();
    full.run_epoch().unwrap();
    let peek = full.peek_next_loss().unwrap();
    let rest = full.run().unwrap();

    let mut head = Trainer::with_data(c, data.clone(), tmp.path().join("head")).unwrap();
    head.run_epoch().unwrap();
    let mut resumed =
        Trainer::resume(&tmp.path().join("head").join(LAST_CHECKPOINT), data, tmp.path().join("resumed")).unwrap();
    assert_eq!(resumed.epoch(), 1);
    assert_eq!(resumed.steps(), 2);
    assert_eq!(resumed.peek_next_loss().unwrap(), peek);
    let resumed_rest = resumed.run().unwrap();
    assert_eq!(rest, resumed_rest);
}
