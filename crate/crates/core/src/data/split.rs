use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub replication: u64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, validation: f64, test: f64) -> Self {
        Self {
            train,
            validation,
            test,
            replication: 0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64, replication: u64) -> Self {
        self.seed = seed;
        self.replication = replication;
        self
    }

    /// Row counts `(train, validation, test)` for `n` units.
    pub fn counts(&self, n: usize) -> Result<(usize, usize, usize)> {
        let fr = [self.train, self.validation, self.test];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::invalid("split fractions must lie in [0, 1]"));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("split fractions must sum to 1"));
        }
        let n_train = (n as f64 * self.train).round() as usize;
        let n_val = ((n as f64 * self.validation).round() as usize).min(n - n_train);
        let n_test = n - n_train - n_val;
        for (name, f, c) in [
            ("train", self.train, n_train),
            ("validation", self.validation, n_val),
            ("test", self.test, n_test),
        ] {
            if f > 0.0 && c == 0 {
                return Err(Error::invalid(format!(
                    "{name} fraction {f} yields an empty split for {n} units"
                )));
            }
        }
        Ok((n_train, n_val, n_test))
    }

    /// Seeded permutation of `0..n`; the replication index selects the stream.
    pub fn permutation(&self, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.replication);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    /// Source-row indices of each part.
    pub indices: [Vec<usize>; 3],
}

/// Permutes rows with the spec's seed, then cuts contiguous train/validation/test blocks.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    let (a, b, _) = spec.counts(ds.len())?;
    let perm = spec.permutation(ds.len());
    let parts = [perm[..a].to_vec(), perm[a..a + b].to_vec(), perm[a + b..].to_vec()];
    Ok(Splits {
        train: ds.subset(&parts[0]),
        validation: ds.subset(&parts[1]),
        test: ds.subset(&parts[2]),
        indices: parts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::VarKind;
    use ndarray::Array2;

    fn ds(n: usize) -> Dataset {
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        Dataset::new(
            x,
            (0..n).map(|i| (i % 2) as u8).collect(),
            (0..n).map(|i| i as f64).collect(),
            vec![VarKind::Continuous],
            VarKind::Continuous,
        )
        .unwrap()
    }

    #[test]
    fn all_train() {
        let d = ds(17);
        let s = split(&d, &SplitSpec::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(s.train.len(), 17);
        assert!(s.validation.is_empty() && s.test.is_empty());
        let mut seen = s.indices[0].clone();
        seen.sort();
        assert_eq!(seen, (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn disjoint_and_exhaustive() {
        let d = ds(101);
        let s = split(&d, &SplitSpec::new(0.63, 0.27, 0.1).with_seed(5, 2)).unwrap();
        let mut all: Vec<usize> = s.indices.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..101).collect::<Vec<_>>());
        // row identity survives: y equals the source index
        for (part, ds) in s.indices.iter().zip([&s.train, &s.validation, &s.test]) {
            for (k, &i) in part.iter().enumerate() {
                assert_eq!(ds.y[k], i as f64);
            }
        }
    }

    #[test]
    fn reproducible_and_replication_sensitive() {
        let spec = SplitSpec::new(0.7, 0.2, 0.1).with_seed(11, 0);
        assert_eq!(spec.permutation(50), spec.permutation(50));
        let other = SplitSpec { replication: 1, ..spec };
        assert_ne!(spec.permutation(50), other.permutation(50));
    }

    #[test]
    fn empty_split_rejected() {
        let d = ds(3);
        assert!(matches!(
            split(&d, &SplitSpec::new(0.9, 0.05, 0.05)),
            Err(Error::InvalidArgument(_))
        ));
        assert!(split(&d, &SplitSpec::new(0.5, 0.5, 0.1)).is_err());
    }
}
