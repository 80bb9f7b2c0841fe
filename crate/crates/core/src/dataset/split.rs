use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{subjects, ImageSample, InputVariant};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitPolicy {
    ByImage,
    BySubject,
    FullTrain,
}

impl SplitPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitPolicy::ByImage => "by-image",
            SplitPolicy::BySubject => "by-subject",
            SplitPolicy::FullTrain => "full-train",
        }
    }
}

impl fmt::Display for SplitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "by-image" => Ok(SplitPolicy::ByImage),
            "by-subject" => Ok(SplitPolicy::BySubject),
            "full-train" => Ok(SplitPolicy::FullTrain),
            other => Err(Error::InvalidInput(format!(
                "unknown split policy `{other}` (expected by-image, by-subject or full-train)"
            ))),
        }
    }
}

/// How large each of train/val/test should be: fractions of the input, or
/// explicit image counts (used by presets that must hit published sizes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSizes {
    Ratios([f64; 3]),
    Counts([usize; 3]),
}

impl SplitSizes {
    pub fn ratios(&self) -> [f64; 3] {
        match *self {
            SplitSizes::Ratios(r) => r,
            SplitSizes::Counts(c) => {
                let n = (c[0] + c[1] + c[2]).max(1) as f64;
                [c[0] as f64 / n, c[1] as f64 / n, c[2] as f64 / n]
            }
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        match *self {
            SplitSizes::Ratios(r) => {
                if r.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::InvalidInput(format!("ratios must be non-negative: {r:?}")));
                }
                let sum: f64 = r.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidInput(format!("ratios sum to {sum}, not 1")));
                }
            }
            SplitSizes::Counts(c) => {
                if c.iter().sum::<usize>() != n {
                    return Err(Error::InvalidInput(format!(
                        "split counts {c:?} do not add up to {n} samples"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for SplitSizes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitSizes::Ratios(r) => write!(f, "ratios:{},{},{}", r[0], r[1], r[2]),
            SplitSizes::Counts(c) => write!(f, "counts:{},{},{}", c[0], c[1], c[2]),
        }
    }
}

impl FromStr for SplitSizes {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("cannot parse split sizes `{s}`"));
        let (kind, rest) = s.split_once(':').unwrap_or(("ratios", s));
        let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        match kind {
            "ratios" => {
                let mut r = [0.0; 3];
                for (slot, p) in r.iter_mut().zip(&parts) {
                    *slot = p.parse().map_err(|_| bad())?;
                }
                Ok(SplitSizes::Ratios(r))
            }
            "counts" => {
                let mut c = [0; 3];
                for (slot, p) in c.iter_mut().zip(&parts) {
                    *slot = p.parse().map_err(|_| bad())?;
                }
                Ok(SplitSizes::Counts(c))
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    pub train: Vec<ImageSample>,
    pub val: Vec<ImageSample>,
    pub test: Vec<ImageSample>,
    pub sizes: SplitSizes,
    pub policy: SplitPolicy,
    pub seed: u64,
    /// Image representation the paths point at, once known.
    pub variant: Option<InputVariant>,
}

impl SplitManifest {
    pub fn ratios(&self) -> [f64; 3] {
        self.sizes.ratios()
    }

    pub fn split(&self, which: Split) -> &[ImageSample] {
        match which {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, which: Split) -> &mut Vec<ImageSample> {
        match which {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (Split, &ImageSample)> {
        Split::ALL
            .into_iter()
            .flat_map(move |s| self.split(s).iter().map(move |x| (s, x)))
    }

    /// Checks the partition invariants: no image in more than one list and,
    /// under `by-subject`, no subject in more than one list.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<&std::path::Path, Split> = HashMap::new();
        for (split, s) in self.iter() {
            if let Some(prev) = seen.insert(&s.image_path, split) {
                return Err(Error::ManifestInvalid(format!(
                    "{} appears in both {} and {}",
                    s.image_path.display(),
                    prev.as_str(),
                    split.as_str()
                )));
            }
        }
        if self.policy == SplitPolicy::BySubject {
            let mut owner: HashMap<(&str, &str), Split> = HashMap::new();
            for (split, s) in self.iter() {
                let key = (s.dataset_id.as_str(), s.subject_id.as_str());
                if let Some(prev) = owner.insert(key, split) {
                    if prev != split {
                        return Err(Error::ManifestInvalid(format!(
                            "subject {} appears in both {} and {}",
                            s.subject_id,
                            prev.as_str(),
                            split.as_str()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Turns `sizes` into exact image counts for `n` samples.
///
/// Ratios are floored (with a 1e-9 guard against representation error such
/// as 0.7 · 1610 = 1126.999…), then the leftover images go to the splits with
/// the largest fractional parts, ties resolved in train, val, test order.
pub fn split_counts(n: usize, sizes: &SplitSizes) -> Result<[usize; 3]> {
    sizes.validate(n)?;
    match *sizes {
        SplitSizes::Counts(c) => Ok(c),
        SplitSizes::Ratios(r) => {
            let exact: Vec<f64> = r.iter().map(|v| v * n as f64).collect();
            let mut counts = [0usize; 3];
            for (c, e) in counts.iter_mut().zip(&exact) {
                *c = (e + 1e-9).floor() as usize;
            }
            let assigned: usize = counts.iter().sum();
            let mut order = [0usize, 1, 2];
            let frac = |i: usize| (exact[i] - counts[i] as f64).max(0.0);
            order.sort_by(|&a, &b| frac(b).partial_cmp(&frac(a)).unwrap().then(a.cmp(&b)));
            for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
                counts[i] += 1;
            }
            Ok(counts)
        }
    }
}

/// Partitions `samples` into train/val/test.
///
/// The result depends only on the sample order, `sizes`, `policy` and
/// `seed`. Each list is sorted by path so manifests diff cleanly.
pub fn make_split(
    samples: &[ImageSample],
    sizes: SplitSizes,
    policy: SplitPolicy,
    seed: u64,
) -> Result<SplitManifest> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty sample list".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![Split::Train; samples.len()];
    let sizes = match policy {
        SplitPolicy::FullTrain => SplitSizes::Ratios([1.0, 0.0, 0.0]),
        SplitPolicy::ByImage => {
            let counts = split_counts(samples.len(), &sizes)?;
            let mut order: Vec<usize> = (0..samples.len()).collect();
            order.shuffle(&mut rng);
            for (k, &i) in order.iter().enumerate() {
                assignment[i] = if k < counts[0] {
                    Split::Train
                } else if k < counts[0] + counts[1] {
                    Split::Val
                } else {
                    Split::Test
                };
            }
            sizes
        }
        SplitPolicy::BySubject => {
            assign_subjects(samples, &sizes, &mut rng, &mut assignment)?;
            sizes
        }
    };

    let mut manifest = SplitManifest {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        sizes,
        policy,
        seed,
        variant: None,
    };
    for (sample, split) in samples.iter().zip(assignment) {
        manifest.split_mut(split).push(sample.clone());
    }
    for split in Split::ALL {
        manifest
            .split_mut(split)
            .sort_by(|a, b| a.image_path.cmp(&b.image_path));
    }
    Ok(manifest)
}

/// Count-balanced subject assignment: subjects are shuffled, each non-empty
/// split is seeded with one subject, then every remaining subject goes to
/// the split furthest below its target image count.
fn assign_subjects(
    samples: &[ImageSample],
    sizes: &SplitSizes,
    rng: &mut ChaCha8Rng,
    assignment: &mut [Split],
) -> Result<()> {
    sizes.validate(samples.len())?;
    let targets: [f64; 3] = match *sizes {
        SplitSizes::Ratios(r) => r.map(|v| v * samples.len() as f64),
        SplitSizes::Counts(c) => c.map(|v| v as f64),
    };
    let active: Vec<usize> = (0..3).filter(|&i| targets[i] > 0.0).collect();
    let groups = subjects(samples);
    if groups.len() < active.len() {
        return Err(Error::InvalidInput(format!(
            "by-subject split needs at least {} subjects, found {}",
            active.len(),
            groups.len()
        )));
    }
    let mut order: Vec<&Vec<usize>> = groups.values().collect();
    order.shuffle(rng);

    let mut filled = [0.0f64; 3];
    for (k, members) in order.into_iter().enumerate() {
        let slot = if k < active.len() {
            active[k]
        } else {
            let mut best = active[0];
            for &i in &active[1..] {
                if targets[i] - filled[i] > targets[best] - filled[best] {
                    best = i;
                }
            }
            best
        };
        filled[slot] += members.len() as f64;
        for &i in members {
            assignment[i] = Split::ALL[slot];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emotion::Emotion;
    use std::path::PathBuf;

    fn samples(subjects: usize, per_subject: usize) -> Vec<ImageSample> {
        (0..subjects)
            .flat_map(|s| {
                (0..per_subject).map(move |k| ImageSample {
                    image_path: PathBuf::from(format!("/d/s{s:03}_{k:02}.png")),
                    dataset_id: "synthetic".into(),
                    subject_id: format!("s{s:03}"),
                    emotion: Emotion::ALL[k % 7],
                    gaze: None,
                })
            })
            .collect()
    }

    #[test]
    fn floor_then_remainder_counts() {
        assert_eq!(
            split_counts(1610, &SplitSizes::Ratios([0.70, 0.152, 0.148])).unwrap(),
            [1127, 245, 238]
        );
        assert_eq!(
            split_counts(10, &SplitSizes::Ratios([0.7, 0.15, 0.15])).unwrap(),
            [7, 2, 1]
        );
        assert_eq!(split_counts(3, &SplitSizes::Ratios([1.0, 0.0, 0.0])).unwrap(), [3, 0, 0]);
        assert!(split_counts(3, &SplitSizes::Ratios([0.5, 0.2, 0.2])).is_err());
        assert!(split_counts(3, &SplitSizes::Counts([1, 1, 2])).is_err());
    }

    #[test]
    fn by_image_reproduces_cfee_sizes() {
        let s = samples(230, 7);
        let m = make_split(&s, SplitSizes::Ratios([0.70, 0.152, 0.148]), SplitPolicy::ByImage, 1)
            .unwrap();
        assert_eq!((m.train.len(), m.val.len(), m.test.len()), (1127, 245, 238));
        m.validate().unwrap();
    }

    #[test]
    fn by_subject_reproduces_rafd_sizes() {
        let s = samples(67, 21);
        for seed in 0..5 {
            let m = make_split(&s, SplitSizes::Ratios([0.70, 0.15, 0.15]), SplitPolicy::BySubject, seed)
                .unwrap();
            assert_eq!((m.train.len(), m.val.len(), m.test.len()), (987, 210, 210));
            m.validate().unwrap();
        }
    }

    #[test]
    fn full_train_keeps_everything_in_train() {
        let s = samples(3, 4);
        let m = make_split(&s, SplitSizes::Ratios([0.5, 0.25, 0.25]), SplitPolicy::FullTrain, 9)
            .unwrap();
        assert_eq!(m.train.len(), 12);
        assert!(m.val.is_empty() && m.test.is_empty());
    }

    #[test]
    fn too_few_subjects_is_an_error() {
        let s = samples(2, 5);
        let err = make_split(&s, SplitSizes::Ratios([0.6, 0.2, 0.2]), SplitPolicy::BySubject, 0);
        assert!(err.is_err());
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(make_split(&[], SplitSizes::Ratios([1.0, 0.0, 0.0]), SplitPolicy::ByImage, 0).is_err());
    }

    #[test]
    fn overlap_fails_validation() {
        let s = samples(3, 7);
        let mut m = make_split(&s, SplitSizes::Ratios([0.6, 0.2, 0.2]), SplitPolicy::ByImage, 0)
            .unwrap();
        let dup = m.train[0].clone();
        m.test.push(dup);
        assert!(matches!(m.validate(), Err(Error::ManifestInvalid(_))));
    }

    #[test]
    fn sizes_parse() {
        assert_eq!(
            "0.7,0.15,0.15".parse::<SplitSizes>().unwrap(),
            SplitSizes::Ratios([0.7, 0.15, 0.15])
        );
        assert_eq!(
            "counts:987,210,210".parse::<SplitSizes>().unwrap(),
            SplitSizes::Counts([987, 210, 210])
        );
        assert!("1,2".parse::<SplitSizes>().is_err());
    }
}
