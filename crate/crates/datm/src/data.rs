//! Loads and prepares the configured train/test splits.

use std::path::Path;

use datm_core::models::ArchSpec;
use datm_core::numkit::{prepare_splits, BlobsSpec, LabeledDataset, MoonsSpec, Prepared};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::formats::{dset, idx};

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn required<'a>(p: &'a Option<std::path::PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::Config(format!("dataset.{key} is required for this source")))
}

pub fn load_dset(path: &Path) -> Result<LabeledDataset, CliError> {
    let name = path.file_stem().map_or("dset".into(), |s| s.to_string_lossy().into_owned());
    dset::decode(&read(path)?, &name).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Raw `(train, test)` before standardization.
pub fn raw_splits(cfg: &RunConfig) -> Result<(LabeledDataset, LabeledDataset), CliError> {
    let d = &cfg.dataset;
    match d.source.as_str() {
        "blobs" => Ok(BlobsSpec {
            num_classes: d.num_classes,
            channels: d.channels,
            height: d.height,
            width: d.width,
            train_per_class: d.train_per_class,
            test_per_class: d.test_per_class,
            noise: d.noise,
            hard_fraction: d.hard_fraction,
            hard_modes: d.hard_modes,
            confusion: d.confusion,
            seed: d.seed,
        }
        .generate()?),
        "moons" => Ok(MoonsSpec {
            channels: d.channels,
            height: d.height,
            width: d.width,
            train_per_class: d.train_per_class,
            test_per_class: d.test_per_class,
            noise: d.noise,
            seed: d.seed,
        }
        .generate()?),
        "dset" => Ok((load_dset(required(&d.train_path, "train_path")?)?, load_dset(required(&d.test_path, "test_path")?)?)),
        "idx" => {
            let load = |images: &Option<std::path::PathBuf>, labels: &Option<std::path::PathBuf>, ik: &str, lk: &str, name: &str| {
                let (i, l) = (required(images, ik)?, required(labels, lk)?);
                idx::decode(&read(i)?, &read(l)?, None, name).map_err(|e| CliError::Runtime(format!("{}: {e}", i.display())))
            };
            let train = load(&d.train_images, &d.train_labels, "train_images", "train_labels", "idx-train")?;
            let mut test = load(&d.test_images, &d.test_labels, "test_images", "test_labels", "idx-test")?;
            test.num_classes = train.num_classes.max(test.num_classes);
            Ok((train, test))
        }
        other => Err(CliError::Config(format!("unknown dataset source {other:?}"))),
    }
}

pub fn prepared(cfg: &RunConfig) -> Result<Prepared, CliError> {
    let (train, test) = raw_splits(cfg)?;
    Ok(prepare_splits(&train, &test, cfg.dataset.zca.then_some(cfg.dataset.zca_epsilon))?)
}

pub fn arch_for(family: &str, ds: &LabeledDataset) -> Result<ArchSpec, CliError> {
    Ok(ArchSpec::new(family, ds.sample_shape(), ds.num_classes)?)
}
