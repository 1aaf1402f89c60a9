use ntml_core::report::{epochs_csv, RunMeta};
use ntml_core::synth::{apply_noise, generate};
use ntml_core::trainer::{
    ablate, baseline, evaluate, train, GammaSchedule, Phase, Targets, TrainConfig, Trainer, Variant,
};
use ntml_core::{Error, GeneratorConfig, LabelNoiseMode, Model, MultimodalDataset, NoiseConfig};

fn small_data(label_rate: f64, corr_rate: f64) -> MultimodalDataset {
    let mut d = generate(&GeneratorConfig {
        classes: 4,
        per_class: 30,
        test_per_class: 20,
        visual_dim: 8,
        audio_dim: 8,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    apply_noise(
        &mut d.train,
        &NoiseConfig {
            label_mode: LabelNoiseMode::Symmetric,
            label_rate,
            correspondence_rate: corr_rate,
            ..Default::default()
        },
    )
    .unwrap();
    d
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 6,
        warmup_epochs: 2,
        batch_size: 16,
        knn_k: 5,
        gamma: GammaSchedule {
            initial: 0.6,
            final_: 0.8,
            switch_epoch: 4,
        },
        ..Default::default()
    }
}

fn same_params(a: &Model, b: &Model) -> bool {
    a.params()
        .iter()
        .zip(b.params().iter())
        .all(|((_, _, x), (_, _, y))| {
            x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits())
        })
}

#[test]
fn zero_warmup_leaves_model_unchanged() {
    let data = small_data(0.0, 0.0);
    let cfg = TrainConfig {
        warmup_epochs: 0,
        ..small_config()
    };
    let mut t = Trainer::new(cfg.clone(), &data.train).unwrap();
    let fresh = t.model().clone();
    assert!(t.warmup(&data).unwrap().is_empty());
    assert!(same_params(t.model(), &fresh));
}

#[test]
fn warmup_fits_separable_data() {
    let data = generate(&GeneratorConfig::default()).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        warmup_epochs: 5,
        ..Default::default()
    };
    let mut t = Trainer::new(cfg, &data.train).unwrap();
    let recs = t.warmup(&data).unwrap();
    assert_eq!(recs.len(), 5);
    assert!(recs.iter().all(|r| r.phase == Phase::Warmup));
    let last = recs.last().unwrap();
    assert!(last.train_top1 >= 0.9, "train top-1 {}", last.train_top1);
}

#[test]
fn warmup_matches_run_without_contrastive_phase() {
    let data = small_data(0.3, 0.2);
    let warm = TrainConfig {
        epochs: 3,
        warmup_epochs: 3,
        ..small_config()
    };
    let mut a = Trainer::new(warm, &data.train).unwrap();
    a.warmup(&data).unwrap();

    let plain = TrainConfig {
        epochs: 3,
        warmup_epochs: 0,
        variant: Variant::None,
        gamma: GammaSchedule::constant(0.0),
        ..small_config()
    };
    let mut b = Trainer::new(plain, &data.train).unwrap();
    b.warmup(&data).unwrap();
    assert_eq!(b.run(&data).unwrap().len(), 3);
    assert!(same_params(a.model(), b.model()));
}

#[test]
fn run_after_full_warmup_is_empty() {
    let data = small_data(0.2, 0.0);
    let cfg = TrainConfig {
        epochs: 2,
        warmup_epochs: 2,
        ..small_config()
    };
    let mut t = Trainer::new(cfg, &data.train).unwrap();
    t.warmup(&data).unwrap();
    let warmed = t.model().clone();
    assert!(t.run(&data).unwrap().is_empty());
    assert!(same_params(t.model(), &warmed));
}

#[test]
fn run_before_warmup_rejected() {
    let data = small_data(0.0, 0.0);
    let mut t = Trainer::new(small_config(), &data.train).unwrap();
    assert!(matches!(t.run(&data), Err(Error::InvalidConfig(_))));
}

#[test]
fn report_has_one_record_per_epoch_and_follows_gamma_schedule() {
    let data = small_data(0.4, 0.2);
    let cfg = small_config();
    let (_, report) = train(&cfg, &data).unwrap();
    assert_eq!(report.records.len(), cfg.epochs);
    for (i, r) in report.records.iter().enumerate() {
        assert_eq!(r.epoch, i + 1);
        for acc in [r.train_top1, r.test_top1, r.test_top5, r.observed_label_acc] {
            assert!((0.0..=1.0).contains(&acc));
        }
        if r.phase == Phase::Main {
            assert_eq!(r.gamma, cfg.gamma.at(i));
            assert!(r.corrected_label_acc.is_some());
            assert!(r.l_ins.is_some() && r.l_cat.is_some());
        } else {
            assert!(r.corrected_label_acc.is_none());
        }
    }
    assert_eq!(report.records[2].gamma, 0.6);
    assert_eq!(report.records[4].gamma, 0.8);
    assert_eq!(report.samples.len(), data.train.len());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let data = small_data(0.4, 0.2);
    let meta = RunMeta::new("h");
    let a = epochs_csv(&meta, &train(&small_config(), &data).unwrap().1.records).unwrap();
    let b = epochs_csv(&meta, &train(&small_config(), &data).unwrap().1.records).unwrap();
    assert_eq!(a, b);
}

#[test]
fn variants_agree_without_noise_or_contrastive_updates() {
    let data = small_data(0.0, 0.0);
    let cfg = TrainConfig {
        contrastive_lr: 0.0,
        gamma: GammaSchedule::constant(0.0),
        ..small_config()
    };
    let top1: Vec<Vec<f64>> = Variant::ALL
        .iter()
        .map(|&v| {
            let (_, r) = ablate(&cfg, &data, v).unwrap();
            r.records.iter().map(|x| x.test_top1).collect()
        })
        .collect();
    assert!(top1.windows(2).all(|w| w[0] == w[1]), "{top1:?}");
}

#[test]
fn none_variant_skips_contrastive_losses_but_corrects_labels() {
    let data = small_data(0.4, 0.2);
    let (_, r) = ablate(&small_config(), &data, Variant::None).unwrap();
    let last = r.last().unwrap();
    assert!(last.l_ins.is_none() && last.l_c.is_none());
    assert!(last.corrected_label_acc.is_some());
}

#[test]
fn baseline_never_corrects() {
    let data = small_data(0.4, 0.2);
    let (_, r) = baseline(&small_config(), &data).unwrap();
    assert!(r.records.iter().all(|x| x.corrected_label_acc.is_none() && x.l_ins.is_none()));
    assert_eq!(r.records.last().unwrap().phase, Phase::Baseline);
}

#[test]
fn evaluation_of_untrained_model_is_near_chance() {
    let data = generate(&GeneratorConfig::default()).unwrap();
    let t = Trainer::new(TrainConfig::default(), &data.train).unwrap();
    let e = evaluate(t.model(), &data.test).unwrap();
    // 500 test samples, 10 classes: chance 0.1, generous sampling band
    assert!(e.top1 < 0.3, "untrained top-1 {}", e.top1);
    assert!(!e.top5_degenerate);
}

#[test]
fn small_class_count_flags_top5() {
    let data = small_data(0.0, 0.0);
    let t = Trainer::new(small_config(), &data.train).unwrap();
    let e = evaluate(t.model(), &data.test).unwrap();
    assert!(e.top5_degenerate);
    assert_eq!(e.top5, 1.0);
}

#[test]
fn perfect_classifier_scores_one() {
    use ntml_core::trainer::ArchConfig;
    use ntml_core::{Dataset, MultimodalSample, Tensor};
    let mut test = Dataset::new(2, 2, 2);
    for (i, y) in [0usize, 1, 1, 0].into_iter().enumerate() {
        let x = if y == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
        test.samples.push(MultimodalSample {
            id: i as u64,
            visual: x.clone(),
            audio: x,
            true_label: y,
            observed_label: y,
            correspondence_clean: true,
            audio_source: i as u64,
        });
    }
    let cfg = TrainConfig {
        batch_size: 4,
        arch: ArchConfig {
            feature_dim: 2,
            encoder_hidden: vec![],
            classifier_hidden: 2,
            ae_hidden: 2,
            ..Default::default()
        },
        ..small_config()
    };
    let mut model = Trainer::new(cfg, &test).unwrap().into_model();
    let eye = Tensor::identity(2);
    let mut fused = Tensor::zeros(&[4, 2]);
    fused.set(0, 0, 1.0);
    fused.set(1, 1, 1.0);
    for (name, value) in [
        ("visual.0.weight", eye.clone()),
        ("audio.0.weight", eye.clone()),
        ("classifier.0.weight", fused),
        ("classifier.1.weight", eye.scale(10.0)),
    ] {
        let id = model.params().find(name).unwrap();
        *model.params_mut().get_mut(id) = value;
    }
    for name in ["visual.0.bias", "audio.0.bias", "classifier.0.bias", "classifier.1.bias"] {
        let id = model.params().find(name).unwrap();
        model.params_mut().get_mut(id).data_mut().fill(0.0);
    }
    let e = evaluate(&model, &test).unwrap();
    assert_eq!((e.top1, e.top5), (1.0, 1.0));
}

#[test]
fn non_finite_input_aborts_with_location() {
    let mut data = small_data(0.0, 0.0);
    data.train.samples[0].visual[0] = f64::INFINITY;
    let mut t = Trainer::new(small_config(), &data.train).unwrap();
    match t.warmup(&data) {
        Err(Error::Diverged { phase, epoch, .. }) => {
            assert_eq!(phase, "supervised");
            assert_eq!(epoch, 0);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn gamma_zero_supervised_losses_match_plain_ce() {
    let data = small_data(0.5, 0.2);
    let t = Trainer::new(small_config(), &data.train).unwrap();
    let cache = t.feature_cache(&data.train).unwrap();
    let corrected = t.correct_labels(&cache, &data.train).unwrap().labels;
    let mut a = t.clone();
    let mut b = t;
    let la = a
        .supervised_epoch(&data.train, Targets::Hybrid { corrected: &corrected, gamma: 0.0 })
        .unwrap();
    let lb = b.supervised_epoch(&data.train, Targets::Observed).unwrap();
    assert_eq!(
        la.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        lb.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn config_validation() {
    let bad = [
        TrainConfig {
            warmup_epochs: 10,
            epochs: 5,
            ..Default::default()
        },
        TrainConfig {
            tau2: 0.0,
            ..Default::default()
        },
        TrainConfig {
            gamma: GammaSchedule::constant(1.5),
            ..Default::default()
        },
        TrainConfig {
            knn_k: 0,
            ..Default::default()
        },
        TrainConfig {
            lr: -1.0,
            ..Default::default()
        },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
    assert_eq!("ins-only".parse::<Variant>().unwrap(), Variant::InsOnly);
    assert!("both".parse::<Variant>().is_err());
}
