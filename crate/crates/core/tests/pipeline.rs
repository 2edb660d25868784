use bros::data::{generate_range, parse_jsonl, to_jsonl, GeneratorConfig, Vocab};
use bros::encoder::EncoderConfig;
use bros::harness::{checkpoint, collect_classes, evaluate, finetune, load_prefix, pretrain, Model, RunConfig, Task, Variant};

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.encoder = EncoderConfig {
        num_layers: 1,
        hidden: 16,
        heads: 2,
        ffn: 32,
        ..EncoderConfig::default()
    };
    cfg.pretrain.steps = 3;
    cfg.pretrain.batch_size = 2;
    cfg.finetune.steps = 4;
    cfg.finetune.batch_size = 2;
    cfg.generator.blocks_per_doc = [10, 16];
    cfg
}

#[test]
fn jsonl_round_trip_preserves_generated_documents() {
    let docs = generate_range(&GeneratorConfig::default(), 0..5).unwrap();
    assert_eq!(parse_jsonl(&to_jsonl(&docs)).unwrap(), docs);
}

#[test]
fn pretrained_encoder_transfers_to_every_task() {
    let cfg = small_config();
    let docs = generate_range(&cfg.generator, 0..8).unwrap();
    let vocab = Vocab::standard();
    let mut pre = Model::new(cfg.clone(), Task::Pretrain, vocab.clone(), Vec::new()).unwrap();
    let summary = pretrain(&mut pre, &docs, None).unwrap();
    assert_eq!(summary.steps.len(), 3);
    assert!(summary.area_mask_fraction.unwrap() > 0.0);

    for task in [Task::EeBio, Task::EeSpade, Task::ElSpade] {
        let mut m = Model::new(cfg.clone(), task, vocab.clone(), collect_classes(&docs)).unwrap();
        let fresh = load_prefix(&mut m.params, &pre.params, "encoder.").unwrap();
        assert!(!fresh.is_empty());
        assert!(fresh.iter().all(|n| n.starts_with("heads.")), "{fresh:?}");
        for name in m.params.names().filter(|n| n.starts_with("encoder.")) {
            assert_eq!(m.params.get(name).unwrap(), pre.params.get(name).unwrap());
        }
        finetune(&mut m, &docs[..6], Some(&docs[6..])).unwrap();
        let r = evaluate(&m, &docs[6..], Variant::Identity).unwrap();
        assert_eq!(r.task, task.name());
        assert!((0.0..=1.0).contains(&r.micro.f1));
    }
}

#[test]
fn checkpoints_restore_identical_predictions() {
    let cfg = small_config();
    let docs = generate_range(&cfg.generator, 0..6).unwrap();
    let mut m = Model::new(cfg, Task::EeSpade, Vocab::standard(), collect_classes(&docs)).unwrap();
    finetune(&mut m, &docs[..4], None).unwrap();
    let restored = checkpoint::from_bytes(&checkpoint::to_bytes(&m)).unwrap();
    for v in [Variant::Identity, Variant::Yx, Variant::Rotate { angle: 7.0 }] {
        assert_eq!(evaluate(&m, &docs[4..], v).unwrap(), evaluate(&restored, &docs[4..], v).unwrap());
    }
}

#[test]
fn relative_model_scores_every_serialization_alike() {
    let cfg = small_config();
    let docs = generate_range(&cfg.generator, 0..10).unwrap();
    let mut m = Model::new(cfg, Task::EeSpade, Vocab::standard(), collect_classes(&docs)).unwrap();
    finetune(&mut m, &docs[..6], None).unwrap();
    let base = evaluate(&m, &docs[6..], Variant::Identity).unwrap().micro;
    for v in [Variant::Permute, Variant::Xy, Variant::Yx] {
        assert_eq!(evaluate(&m, &docs[6..], v).unwrap().micro, base, "{v:?}");
    }
}
