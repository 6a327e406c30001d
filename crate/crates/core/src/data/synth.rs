use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use super::{write_features, Manifest, ManifestEntry, Split, VideoSequence};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Total videos, including the test split.
    pub n_videos: usize,
    /// Videos held out as the test split (the last `n_test`).
    pub n_test: usize,
    pub t_full: usize,
    pub d_in_v: usize,
    pub d_in_a: usize,
    /// Distance between the highlight and non-highlight class centres.
    pub separation: f64,
    /// Standard deviation of the isotropic per-segment noise.
    pub noise: f64,
    pub categories: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_videos: 70,
            n_test: 20,
            t_full: 40,
            d_in_v: 32,
            d_in_a: 32,
            separation: 4.0,
            noise: 1.0,
            categories: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub manifest: Manifest,
    pub videos: Vec<VideoSequence>,
}

impl SynthDataset {
    /// Writes one feature file per video plus `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        for (entry, video) in self.manifest.entries.iter().zip(&self.videos) {
            write_features(video, &dir.join(&entry.path))?;
        }
        let path = dir.join("manifest.json");
        self.manifest.save(&path)?;
        Ok(path)
    }
}

fn unit_direction(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Gaussian two-class segment features with one contiguous highlight span
/// per video.
///
/// Each modality has dataset-wide class centres `±(separation / 2)·u` along
/// a random unit direction `u`. Spans cover 20–50% of the video. Values are
/// rounded through `f32` so the feature files round-trip exactly.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    if !(cfg.separation >= 0.0) || !(cfg.noise >= 0.0) {
        return Err(Error::Param("separation and noise must be >= 0".into()));
    }
    if cfg.n_videos == 0 || cfg.n_test > cfg.n_videos {
        return Err(Error::Param(format!(
            "need 0 < videos and test videos <= videos (got {} / {})",
            cfg.n_videos, cfg.n_test
        )));
    }
    if cfg.t_full < 2 || cfg.d_in_v == 0 || cfg.d_in_a == 0 || cfg.categories == 0 {
        return Err(Error::Param(
            "segments must be >= 2 and dims/categories >= 1".into(),
        ));
    }
    let root = SeedStream::new(cfg.seed);
    let mut centre_rng = root.child_str("centres").rng();
    let dir_v = unit_direction(cfg.d_in_v, &mut centre_rng);
    let dir_a = unit_direction(cfg.d_in_a, &mut centre_rng);
    let half = cfg.separation / 2.0;

    let t = cfg.t_full;
    let min_len = ((t as f64 * 0.2).ceil() as usize).max(1);
    let max_len = ((t as f64 * 0.5).floor() as usize).clamp(min_len, t - 1);

    let categories: Vec<String> = (0..cfg.categories).map(|c| format!("c{c}")).collect();
    let mut entries = Vec::with_capacity(cfg.n_videos);
    let mut videos = Vec::with_capacity(cfg.n_videos);
    for v in 0..cfg.n_videos {
        let mut rng = root.child_str("video").child(v as u64).rng();
        let len = rng.random_range(min_len..=max_len);
        let start = rng.random_range(0..=t - len);
        let labels: Vec<u8> = (0..t)
            .map(|i| (i >= start && i < start + len) as u8)
            .collect();

        let mut features = |dir: &[f64]| -> Tensor {
            let d = dir.len();
            let mut data = Vec::with_capacity(t * d);
            for &y in &labels {
                let sign = if y == 1 { half } else { -half };
                for &u in dir {
                    let z: f64 = rng.sample(StandardNormal);
                    data.push((sign * u + cfg.noise * z) as f32 as f64);
                }
            }
            Tensor::matrix(t, d, data).expect("synth shape")
        };
        let visual = features(&dir_v);
        let audio = features(&dir_a);

        let id = format!("v{v:04}");
        let category = categories[v % cfg.categories].clone();
        let split = if v < cfg.n_videos - cfg.n_test {
            Split::Train
        } else {
            Split::Test
        };
        entries.push(ManifestEntry {
            id: id.clone(),
            category: category.clone(),
            split,
            path: PathBuf::from(format!("{id}.vhlf")),
            t_full: t,
            d_in_v: cfg.d_in_v,
            d_in_a: cfg.d_in_a,
        });
        videos.push(VideoSequence::new(id, category, visual, audio, labels)?);
    }

    Ok(SynthDataset {
        manifest: Manifest {
            dataset: "synthetic".into(),
            categories,
            entries,
            root: PathBuf::new(),
        },
        videos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_well_formed() {
        let cfg = SynthConfig {
            n_videos: 6,
            n_test: 2,
            t_full: 15,
            d_in_v: 4,
            d_in_a: 3,
            ..Default::default()
        };
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate(&cfg).unwrap();
        assert_eq!(a.videos, b.videos);
        assert_eq!(a.manifest, b.manifest);
        for v in &a.videos {
            let p = v.positives();
            assert!((3..=7).contains(&p), "span {p}");
            // single contiguous run
            let runs = v.labels.windows(2).filter(|w| w[0] != w[1]).count();
            assert!(runs <= 2);
        }
        assert_eq!(
            a.manifest
                .entries
                .iter()
                .filter(|e| e.split == Split::Test)
                .count(),
            2
        );
    }

    #[test]
    fn written_files_are_identical_across_runs() {
        let cfg = SynthConfig {
            n_videos: 3,
            n_test: 1,
            t_full: 10,
            d_in_v: 4,
            d_in_a: 4,
            seed: 11,
            ..Default::default()
        };
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        synth_generate(&cfg).unwrap().write(d1.path()).unwrap();
        synth_generate(&cfg).unwrap().write(d2.path()).unwrap();
        for name in ["manifest.json", "v0000.vhlf", "v0002.vhlf"] {
            assert_eq!(
                fs::read(d1.path().join(name)).unwrap(),
                fs::read(d2.path().join(name)).unwrap()
            );
        }
        let m = Manifest::load(&d1.path().join("manifest.json")).unwrap();
        assert_eq!(m.load_split(None).unwrap().len(), 3);
    }

    #[test]
    fn rejects_bad_params() {
        let bad = SynthConfig {
            separation: -1.0,
            ..Default::default()
        };
        assert!(synth_generate(&bad).is_err());
        let bad = SynthConfig {
            n_test: 100,
            ..Default::default()
        };
        assert!(synth_generate(&bad).is_err());
    }
}
