//! Small distillation setup shared by unit tests.

use alloc::vec::Vec;

use crate::experts::{train_expert, ExpertBuffer, ExpertTrainConfig};
use crate::models::ArchSpec;
use crate::numkit::{prepare_splits, BlobsSpec, LabeledDataset, Precision};

pub(crate) struct Toy {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub arch: ArchSpec,
    pub buffer: ExpertBuffer,
}

/// Three classes of 4x4 blobs, three experts over eight epochs, f64 storage.
pub(crate) fn toy() -> Toy {
    let spec = BlobsSpec {
        num_classes: 3,
        height: 4,
        width: 4,
        train_per_class: 20,
        test_per_class: 20,
        noise: 0.5,
        hard_fraction: 0.0,
        seed: 5,
        ..BlobsSpec::default()
    };
    let (train, test) = spec.generate().unwrap();
    let p = prepare_splits(&train, &test, None).unwrap();
    let arch = ArchSpec::parse("mlp-8:1x4x4:3").unwrap();
    let trajectories: Vec<_> = (0..3)
        .map(|seed| {
            let cfg = ExpertTrainConfig { epochs: 8, batch_size: 20, seed, precision: Precision::F64, ..ExpertTrainConfig::default() };
            train_expert(&p.train, &arch, &cfg).unwrap()
        })
        .collect();
    Toy { train: p.train, test: p.test, arch, buffer: ExpertBuffer::new(trajectories, None).unwrap() }
}
