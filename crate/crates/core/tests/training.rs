use metachex::data::{MemoryImageSource, SampleRecord, TbSampleRecord};
use metachex::labels::DatasetTag;
use metachex::model::{BackboneConfig, Model, ModelSpec, Variant};
use metachex::preprocess::{AugmentConfig, PreprocessConfig};
use metachex::rng::rng_from;
use metachex::synthetic::{render_chestxray, render_tb, synthetic_records, DomainShift, SyntheticSpec};
use metachex::training::{train_phase1, train_phase2, LossConfig, Phase1Data, Phase2Data, SelectionMetric, TrainConfig};

const SIZE: usize = 32;

fn preprocess() -> PreprocessConfig {
    PreprocessConfig {
        target_size: (SIZE, SIZE),
        ..Default::default()
    }
}

fn cxr(patients: usize, seed: u64) -> (Vec<SampleRecord>, MemoryImageSource) {
    let spec = SyntheticSpec {
        patients,
        max_images_per_patient: 1,
        image_size: SIZE,
        pathology_rate: 0.3,
        seed,
    };
    let records = synthetic_records(&spec);
    let mut images = MemoryImageSource::new();
    for r in &records {
        images.insert(r.image_id.clone(), render_chestxray(r, SIZE, seed));
    }
    (records, images)
}

fn tb(n: usize, seed: u64, images: &mut MemoryImageSource, prefix: &str) -> Vec<TbSampleRecord> {
    let mut rng = rng_from(seed);
    (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let id = format!("{prefix}_{i:03}_{label}");
            images.insert(id.clone(), render_tb(label, SIZE, DomainShift::NONE, &mut rng));
            TbSampleRecord {
                image_id: id,
                label,
                dataset_tag: DatasetTag::Shenzhen,
                path: Default::default(),
            }
        })
        .collect()
}

fn model(variant: Variant, seed: u64) -> Model {
    Model::build(
        &ModelSpec {
            variant,
            backbone: BackboneConfig::tiny(32),
        },
        seed,
    )
    .unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        max_epochs: epochs,
        cache_images: true,
        ..Default::default()
    }
}

#[test]
fn phase1_loss_falls_and_phase2_separates() {
    let (records, mut images) = cxr(32, 3);
    let pre = preprocess();
    let loss = LossConfig::default();
    let aug1 = AugmentConfig::phase1();
    let m = model(Variant::Metachexnet, 1);
    let out = train_phase1(
        &m,
        &Phase1Data {
            train: &records,
            validation: &records[..8],
            images: &images,
            preprocess: &pre,
            augment: &aug1,
            loss: &loss,
        },
        &config(4),
        11,
    )
    .unwrap();
    let train: Vec<f64> = out.log.epochs.iter().map(|e| e.train_loss).collect();
    assert!(train.len() >= 3);
    assert!(train.windows(2).take(2).all(|w| w[1] < w[0]), "{train:?}");

    let tb_train = tb(32, 5, &mut images, "T");
    let tb_val = tb(16, 6, &mut images, "V");
    let aug2 = AugmentConfig::phase2();
    let cfg = TrainConfig {
        selection_metric: SelectionMetric::ValAuc,
        ..config(20)
    };
    let (m, out) = train_phase2(
        m,
        &Phase2Data {
            train: &tb_train,
            validation: &tb_val,
            images: &images,
            preprocess: &pre,
            augment: &aug2,
            loss: &loss,
        },
        &cfg,
        12,
    )
    .unwrap();
    assert_eq!(m.variant(), Variant::Tb);
    assert!(out.best_value() >= 0.95, "{:?}", out.log.epochs.iter().map(|e| e.val_metrics["auc"]).collect::<Vec<_>>());
}

#[test]
fn training_is_deterministic() {
    let (records, images) = cxr(16, 4);
    let pre = preprocess();
    let loss = LossConfig::default();
    let aug = AugmentConfig::phase1();
    let run = || {
        let m = model(Variant::Metachexnet, 2);
        let out = train_phase1(
            &m,
            &Phase1Data {
                train: &records,
                validation: &records[..6],
                images: &images,
                preprocess: &pre,
                augment: &aug,
                loss: &loss,
            },
            &config(2),
            9,
        )
        .unwrap();
        (out.log.to_jsonl().unwrap(), m.snapshot().unwrap())
    };
    let (log_a, snap_a) = run();
    let (log_b, snap_b) = run();
    assert_eq!(log_a, log_b);
    for (k, a) in &snap_a {
        let a = a.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = snap_b[k].flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b, "{k}");
    }
}

#[test]
fn chexnet_logs_mean_auc_and_tb_variant_is_rejected() {
    let (records, images) = cxr(12, 8);
    let pre = preprocess();
    let loss = LossConfig::default();
    let aug = AugmentConfig::phase1();
    let data = Phase1Data {
        train: &records,
        validation: &records,
        images: &images,
        preprocess: &pre,
        augment: &aug,
        loss: &loss,
    };
    let out = train_phase1(&model(Variant::Chexnet, 3), &data, &config(1), 1).unwrap();
    assert!(out.log.epochs[0].val_metrics.contains_key("mean_auc"));
    assert!(out.log.epochs[0].train_age.is_none());
    assert!(train_phase1(&model(Variant::Tb, 3), &data, &config(1), 1).is_err());
}
