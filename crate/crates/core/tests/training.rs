mod common;

use modfuse_core::data::shuffle_labels;
use modfuse_core::encoders::UnimodalClassifier;
use modfuse_core::train::{
    evaluate_unimodal, finetune_fusion, pretrain_modality, Checkpoint, MultimodalModel, Stage,
};
use modfuse_core::{Error, Modality, Trial};

use common::{dataset, partitioned, tiny};

fn refs<'a>(trials: &'a [Trial], idx: &[usize]) -> Vec<&'a Trial> {
    idx.iter().map(|&i| &trials[i]).collect()
}

#[test]
fn overfits_a_small_informative_set() {
    let mut cfg = tiny().with_seed(1);
    cfg.synth.trials_per_subject = 40;
    cfg.synth.informativeness = [1.0; 3];
    cfg.pretrain.epochs = 30;
    let (trials, split) = dataset(&cfg, false);
    let enc = cfg.encoder(Modality::Eeg).unwrap();
    let ck = pretrain_modality(
        &enc,
        &refs(&trials, &split.train),
        &[],
        &cfg.pretrain_config(),
    )
    .unwrap();
    assert!(ck.meta.train_acc >= 0.95, "{:?}", ck.meta);
    assert_eq!(ck.meta.val_acc, None);
}

#[test]
fn loss_descends() {
    let cfg = partitioned(100, 0.8, 2);
    let (trials, split) = dataset(&cfg, false);
    for m in Modality::ALL {
        let enc = cfg.encoder(m).unwrap();
        let ck = pretrain_modality(
            &enc,
            &refs(&trials, &split.train),
            &[],
            &cfg.pretrain_config(),
        )
        .unwrap();
        let last = *ck.meta.epoch_losses.last().unwrap();
        assert_eq!(ck.meta.epoch_losses.len(), cfg.pretrain.epochs);
        assert!(last < ck.meta.initial_loss, "{m}: {:?}", ck.meta);
    }
}

#[test]
fn pretraining_is_deterministic() {
    let cfg = tiny().with_seed(5);
    let (trials, split) = dataset(&cfg, false);
    let enc = cfg.encoder(Modality::Vision).unwrap();
    let run = || {
        pretrain_modality(
            &enc,
            &refs(&trials, &split.train),
            &refs(&trials, &split.test),
            &cfg.pretrain_config(),
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let other = pretrain_modality(
        &enc,
        &refs(&trials, &split.train),
        &refs(&trials, &split.test),
        &cfg.with_seed(6).pretrain_config(),
    )
    .unwrap();
    assert_ne!(a.registry, other.registry);
}

#[test]
fn audio_pretraining_sees_only_speaking_trials() {
    let cfg = tiny().with_seed(3);
    let (trials, split) = dataset(&cfg, false);
    let enc = cfg.encoder(Modality::Audio).unwrap();
    let ck = pretrain_modality(
        &enc,
        &refs(&trials, &split.train),
        &refs(&trials, &split.test),
        &cfg.pretrain_config(),
    )
    .unwrap();
    let speaking_train = split
        .train
        .iter()
        .filter(|&&i| trials[i].is_speaking)
        .count();
    // accuracies are fractions of the speaking subset
    let hits = (ck.meta.train_acc * speaking_train as f64).round();
    assert!((hits / speaking_train as f64 - ck.meta.train_acc).abs() < 1e-12);
}

#[test]
fn huge_learning_rate_diverges_with_exit_code_4() {
    let mut cfg = tiny().with_seed(0);
    cfg.pretrain.adam.learning_rate = 1e30;
    cfg.pretrain.epochs = 3;
    let (trials, split) = dataset(&cfg, false);
    let enc = cfg.encoder(Modality::Vision).unwrap();
    let err = pretrain_modality(
        &enc,
        &refs(&trials, &split.train),
        &[],
        &cfg.pretrain_config(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Divergence(_)), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn reloaded_checkpoint_reproduces_metrics_bit_exactly() {
    let cfg = tiny().with_seed(8);
    let (trials, split) = dataset(&cfg, false);
    let enc = cfg.encoder(Modality::Eeg).unwrap();
    let val = refs(&trials, &split.test);
    let ck = pretrain_modality(
        &enc,
        &refs(&trials, &split.train),
        &val,
        &cfg.pretrain_config(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    ck.save(dir.path()).unwrap();
    let back = Checkpoint::load(dir.path()).unwrap();
    assert_eq!(back, ck);
    let clf = UnimodalClassifier::new(enc);
    let acc = evaluate_unimodal(&clf, &back.registry, &val).unwrap();
    assert_eq!(acc.to_bits(), ck.meta.val_acc.unwrap().to_bits());
}

#[test]
fn evaluation_ignores_trial_order() {
    let cfg = tiny().with_seed(4);
    let (trials, split) = dataset(&cfg, false);
    let enc = cfg.encoder(Modality::Vision).unwrap();
    let ck = pretrain_modality(
        &enc,
        &refs(&trials, &split.train),
        &[],
        &cfg.pretrain_config(),
    )
    .unwrap();
    let clf = UnimodalClassifier::new(enc);
    let mut val = refs(&trials, &split.test);
    let a = evaluate_unimodal(&clf, &ck.registry, &val).unwrap();
    val.reverse();
    let b = evaluate_unimodal(&clf, &ck.registry, &val).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

fn pretrained(
    cfg: &modfuse_core::config::RunConfig,
    trials: &[Trial],
    train: &[usize],
) -> Vec<Checkpoint> {
    Modality::ALL
        .iter()
        .map(|&m| {
            pretrain_modality(
                &cfg.encoder(m).unwrap(),
                &refs(trials, train),
                &[],
                &cfg.pretrain_config(),
            )
            .unwrap()
        })
        .collect()
}

#[test]
fn finetuning_freezes_encoders_and_separates_stages() {
    let cfg = partitioned(100, 0.6, 11);
    let (trials, all) = dataset(&cfg, false);
    let ck = pretrained(&cfg, &trials, &all.train);
    for (c, m) in ck.iter().zip(Modality::ALL) {
        assert_eq!(c.meta.stage, Stage::Pretrain);
        assert!(c
            .registry
            .names()
            .all(|n| n.starts_with(&format!("{m}.")) || n.starts_with("head.")));
        assert!(!c.registry.names().any(|n| n.starts_with("fusion.")));
    }
    let before: Vec<_> = ck.iter().map(|c| c.registry.clone()).collect();

    let (_, mm) = dataset(&cfg, true);
    let encoders = [0, 1, 2].map(|i| cfg.encoder(Modality::ALL[i]).unwrap());
    let model = MultimodalModel::new(encoders, cfg.fusion_config()).unwrap();
    let out = finetune_fusion(
        &model,
        [&ck[0].registry, &ck[1].registry, &ck[2].registry],
        &refs(&trials, &mm.train),
        &refs(&trials, &mm.test),
        &cfg.finetune_config(),
    )
    .unwrap();

    for (c, b) in ck.iter().zip(&before) {
        assert_eq!(&c.registry, b);
    }
    assert_eq!(out.meta.stage, Stage::Finetune);
    assert!(!out.registry.names().any(|n| n.starts_with("head.")));
    for (name, entry) in out.registry.iter() {
        if name.starts_with("fusion.") {
            assert!(!entry.frozen, "{name}");
        } else {
            assert!(entry.frozen, "{name}");
            let m = ck
                .iter()
                .find_map(|c| c.registry.get(name))
                .expect("encoder parameter");
            assert_eq!(&entry.value, m, "{name} changed");
        }
    }
    assert!(out.meta.epoch_losses.last().unwrap() < &out.meta.initial_loss);
}

#[test]
fn d_model_mismatch_is_a_config_error() {
    let cfg = tiny();
    let mut wide = tiny();
    wide.transformer.d_model = 32;
    let encoders = [
        cfg.encoder(Modality::Vision).unwrap(),
        wide.encoder(Modality::Audio).unwrap(),
        cfg.encoder(Modality::Eeg).unwrap(),
    ];
    let err = MultimodalModel::new(encoders, cfg.fusion_config()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(
        err.to_string().contains("vision 16, audio 32, eeg 16"),
        "{err}"
    );
}

#[test]
fn shuffled_labels_keep_class_balance() {
    let cfg = tiny();
    let (mut trials, _) = dataset(&cfg, false);
    let count = |t: &[Trial], c: usize| t.iter().filter(|x| x.label == c).count();
    let before: Vec<usize> = (0..5).map(|c| count(&trials, c)).collect();
    shuffle_labels(&mut trials, 3);
    let after: Vec<usize> = (0..5).map(|c| count(&trials, c)).collect();
    assert_eq!(before, after);
}

/// Raising one modality's informativeness from 0 to 1 raises its held-out
/// unimodal accuracy, averaged over 3 seeds.
#[test]
fn generator_informativeness_is_monotone() {
    for m in [Modality::Vision, Modality::Eeg] {
        let mean_acc = |level: f32| {
            (0..3u64)
                .map(|seed| {
                    let mut cfg = tiny().with_seed(seed);
                    cfg.synth.informativeness = [0.0; 3];
                    cfg.synth.informativeness[m.index()] = level;
                    let (trials, split) = dataset(&cfg, false);
                    let ck = pretrain_modality(
                        &cfg.encoder(m).unwrap(),
                        &refs(&trials, &split.train),
                        &refs(&trials, &split.test),
                        &cfg.pretrain_config(),
                    )
                    .unwrap();
                    ck.meta.val_acc.unwrap()
                })
                .sum::<f64>()
                / 3.0
        };
        let (lo, hi) = (mean_acc(0.0), mean_acc(1.0));
        assert!(hi > lo, "{m}: {lo} -> {hi}");
        assert!(hi > 0.5, "{m}: {hi}");
    }
}
