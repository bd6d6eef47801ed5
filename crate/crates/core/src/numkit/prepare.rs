use crate::error::Result;
use crate::numkit::{zca_whiten, LabeledDataset, WhiteningTransform};

/// Train/test splits after standardization and optional ZCA, both fitted on
/// the training split only.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub whitening: Option<WhiteningTransform>,
}

pub fn prepare_splits(train: &LabeledDataset, test: &LabeledDataset, zca_epsilon: Option<f64>) -> Result<Prepared> {
    let stats = train.channel_stats();
    let train = train.standardized(&stats)?;
    let test = test.standardized(&stats)?;
    match zca_epsilon {
        None => Ok(Prepared { train, test, whitening: None }),
        Some(eps) => {
            let (train, transform) = zca_whiten(&train, eps)?;
            let test = transform.apply(&test)?;
            Ok(Prepared { train, test, whitening: Some(transform) })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::BlobsSpec;

    #[test]
    fn test_split_uses_training_constants() {
        let spec = BlobsSpec { train_per_class: 20, test_per_class: 5, ..BlobsSpec::default() };
        let (train, test) = spec.generate().unwrap();
        let p = prepare_splits(&train, &test, None).unwrap();
        let stats = train.channel_stats();
        assert_eq!(p.test.normalization.as_ref(), Some(&stats));
        let v = (test.images.data()[3] - stats.mean[0]) / stats.std[0];
        assert_eq!(p.test.images.data()[3], v);
        let z = prepare_splits(&train, &test, Some(1e-3)).unwrap();
        assert!(z.whitening.is_some() && z.test.images.is_finite());
    }
}
