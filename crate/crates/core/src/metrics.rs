//! Gesture evaluation: Fréchet distance of encoder features, beat alignment,
//! diversity and jerk statistics.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::motion::MotionSeq;
use crate::rotation::geodesic_distance;
use crate::skeleton::{fk_global_raw, Skeleton};
use crate::temporal::{LatentEmbedding, TemporalEncoder};

/// Eigenvalues below `-PSD_TOL · max(1, λ_max)` reject a covariance.
pub const PSD_TOL: f64 = 1e-8;
/// Eigenvalues within `ROUNDOFF · λ_max` of zero are treated as zero.
const ROUNDOFF: f64 = 1e-12;
pub const DEFAULT_SIGMA: f64 = 3.0;
const SMOOTHING: usize = 5;

/// One embedding per clip from a frozen encoder.
pub fn extract_features(enc: &TemporalEncoder, clips: &[MotionSeq]) -> Result<Vec<LatentEmbedding>> {
    if !enc.is_frozen() {
        return Err(Error::BadConfig("feature extraction requires a frozen encoder".into()));
    }
    clips.par_iter().map(|c| enc.encode(c)).collect()
}

/// Gaussian fit of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl FeatureStats {
    /// Sample mean and unbiased covariance; needs at least two embeddings.
    pub fn from_embeddings(feats: &[LatentEmbedding]) -> Result<Self> {
        if feats.len() < 2 {
            return Err(Error::TooFewClips(feats.len()));
        }
        let d = feats[0].dim();
        if let Some(f) = feats.iter().find(|f| f.dim() != d) {
            return Err(Error::DimensionMismatch(f.dim(), d));
        }
        let n = feats.len() as f64;
        let mut mean = DVector::zeros(d);
        for f in feats {
            mean += DVector::from_column_slice(&f.0);
        }
        mean /= n;
        let mut covariance = DMatrix::zeros(d, d);
        for f in feats {
            let x = DVector::from_column_slice(&f.0) - &mean;
            covariance.ger(1.0, &x, &x, 1.0);
        }
        covariance /= n - 1.0;
        Ok(FeatureStats { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Eigenvalues and vectors of the symmetric part of `m`, with round-off
/// eigenvalues set to zero after the tolerance check.
fn psd_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for v in eig.eigenvalues.iter_mut() {
        if *v < -PSD_TOL * top.max(1.0) {
            return Err(Error::NonPsd(*v));
        }
        if *v <= ROUNDOFF * top {
            *v = 0.0;
        }
    }
    Ok(eig)
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa^{1/2} Σb Σa^{1/2})^{1/2})`.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let ea = psd_eigen(&a.covariance)?;
    psd_eigen(&b.covariance)?;
    let sqrt_a =
        &ea.eigenvectors * DMatrix::from_diagonal(&ea.eigenvalues.map(f64::sqrt)) * ea.eigenvectors.transpose();
    let inner = &sqrt_a * &b.covariance * &sqrt_a;
    let cross: f64 = psd_eigen(&inner)?.eigenvalues.iter().map(|v| v.sqrt()).sum();
    let d = (&a.mean - &b.mean).norm_squared() + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Mean over joints of global angular speed (radians per frame), by central
/// differences with one-sided ends.
pub fn angular_speed(motion: &MotionSeq) -> Result<Vec<f64>> {
    let t = motion.frames();
    let rots: Vec<_> = (0..t).map(|f| motion.rotations(f)).collect::<Result<_>>()?;
    let j = motion.joints() as f64;
    Ok((0..t)
        .map(|f| {
            let (lo, hi) = (f.saturating_sub(1), (f + 1).min(t - 1));
            let span = (hi - lo).max(1) as f64;
            rots[lo].iter().zip(&rots[hi]).map(|(a, b)| geodesic_distance(a, b)).sum::<f64>() / (j * span)
        })
        .collect())
}

/// Centered moving average of width `w`, truncated at the ends.
pub fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let half = w / 2;
    (0..x.len())
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(half), (i + half + 1).min(x.len()));
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

fn strict_interior_minima(x: &[f64]) -> Vec<usize> {
    (1..x.len().saturating_sub(1)).filter(|&i| x[i] < x[i - 1] && x[i] < x[i + 1]).collect()
}

/// Frames where the smoothed mean angular speed has a strict local minimum.
/// A constant pose has no strict minima and yields an empty list.
pub fn detect_motion_beats(motion: &MotionSeq, skel: &Skeleton) -> Result<Vec<usize>> {
    if motion.frames() < SMOOTHING {
        return Err(Error::SequenceTooShort { needed: SMOOTHING, got: motion.frames() });
    }
    if motion.joints() != skel.len() {
        return Err(Error::ShapeMismatch(format!("motion has {} joints, skeleton {}", motion.joints(), skel.len())));
    }
    let speed = moving_average(&angular_speed(motion)?, SMOOTHING);
    Ok(strict_interior_minima(&speed))
}

/// Frames where a beat track has a strict local maximum of at least 0.5.
pub fn beats_from_track(track: &[f64]) -> Vec<usize> {
    (0..track.len())
        .filter(|&i| {
            let left = i == 0 || track[i] > track[i - 1];
            let right = i + 1 == track.len() || track[i] > track[i + 1];
            track[i] >= 0.5 && left && right
        })
        .collect()
}

/// Mean Gaussian score of each motion beat's distance to its nearest
/// condition beat.
pub fn beat_align(motion_beats: &[usize], cond_beats: &[usize], sigma: f64) -> Result<f64> {
    if cond_beats.is_empty() {
        return Err(Error::EmptyConditionBeats);
    }
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::BadConfig(format!("beat alignment sigma must be positive, got {sigma}")));
    }
    if motion_beats.is_empty() {
        warn!("no motion beats detected; beat alignment is 0");
        return Ok(0.0);
    }
    let score: f64 = motion_beats
        .iter()
        .map(|&m| {
            let d = cond_beats.iter().map(|&a| (m as f64 - a as f64).abs()).fold(f64::INFINITY, f64::min);
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(score / motion_beats.len() as f64)
}

/// Mean over unordered pairs of the mean absolute channel difference.
pub fn diversity(clips: &[MotionSeq]) -> Result<f64> {
    if clips.len() < 2 {
        return Err(Error::TooFewClips(clips.len()));
    }
    for c in &clips[1..] {
        c.same_shape(&clips[0])?;
    }
    let n = clips[0].data().len() as f64;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..clips.len() {
        for j in i + 1..clips.len() {
            total += clips[i].data().iter().zip(clips[j].data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Per-joint RMS of the third difference of global joint positions.
pub fn smoothness_report(motion: &MotionSeq, skel: &Skeleton) -> Result<Vec<f64>> {
    if motion.frames() < 4 {
        return Err(Error::SequenceTooShort { needed: 4, got: motion.frames() });
    }
    if motion.joints() != skel.len() {
        return Err(Error::ShapeMismatch(format!("motion has {} joints, skeleton {}", motion.joints(), skel.len())));
    }
    let pos: Vec<_> = (0..motion.frames())
        .map(|f| Ok(fk_global_raw(skel, &motion.rotations(f)?, &motion.root(f))))
        .collect::<Result<_>>()?;
    let n = (motion.frames() - 3) as f64;
    Ok((0..skel.len())
        .map(|k| {
            let s: f64 =
                pos.windows(4).map(|w| (w[3][k] - 3.0 * w[2][k] + 3.0 * w[1][k] - w[0][k]).norm_squared()).sum();
            (s / n).sqrt()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{RotMat, Vec3};
    use crate::synth::{gen_clip, gen_skeleton, SynthConfig, Template};
    use rand::{Rng, SeedableRng};

    fn stats(mean: Vec<f64>, cov: DMatrix<f64>) -> FeatureStats {
        FeatureStats { mean: DVector::from_vec(mean), covariance: cov }
    }

    #[test]
    fn frechet_cases() {
        let n = 5;
        let a = stats(vec![0.0; n], DMatrix::identity(n, n) * 4.0);
        let b = stats(vec![0.0; n], DMatrix::identity(n, n));
        assert!((frechet_distance(&a, &b).unwrap() - n as f64).abs() < 1e-10);
        assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-8);
        let shifted = stats(vec![1.0, 2.0, 0.0, 0.0, -1.0], DMatrix::identity(n, n) * 4.0);
        assert!((frechet_distance(&a, &shifted).unwrap() - 6.0).abs() < 1e-10);
        let bad = stats(vec![0.0; n], -DMatrix::identity(n, n));
        assert!(matches!(frechet_distance(&a, &bad), Err(Error::NonPsd(_))));
        let small = stats(vec![0.0; 2], DMatrix::identity(2, 2));
        assert!(matches!(frechet_distance(&a, &small), Err(Error::DimensionMismatch(5, 2))));
    }

    #[test]
    fn frechet_is_symmetric_on_random_fits() {
        let feats = |seed: u64| -> Vec<LatentEmbedding> {
            (0..12)
                .map(|i| LatentEmbedding((0..6).map(|k| ((i * 7 + k) as f64 * 0.37 + seed as f64).sin()).collect()))
                .collect()
        };
        let a = FeatureStats::from_embeddings(&feats(1)).unwrap();
        let b = FeatureStats::from_embeddings(&feats(2)).unwrap();
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!(ab > 0.0 && (ab - ba).abs() < 1e-8, "{ab} {ba}");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut full = |shift: f64| -> FeatureStats {
            let f: Vec<LatentEmbedding> =
                (0..40).map(|_| LatentEmbedding((0..16).map(|_| rng.gen_range(-1.0..1.0) + shift).collect())).collect();
            FeatureStats::from_embeddings(&f).unwrap()
        };
        let (a, b) = (full(0.0), full(0.2));
        let ab = frechet_distance(&a, &b).unwrap();
        assert!((ab - frechet_distance(&b, &a).unwrap()).abs() < 1e-8);
        assert!(frechet_distance(&a, &a).unwrap() < 1e-8);
        assert!(FeatureStats::from_embeddings(&feats(1)[..1]).is_err());
    }

    #[test]
    fn beat_align_cases() {
        assert_eq!(beat_align(&[3, 10, 20], &[3, 10, 20], 3.0).unwrap(), 1.0);
        let expected = (-4.0f64 / 18.0).exp();
        assert!((beat_align(&[12], &[10], 3.0).unwrap() - expected).abs() < 1e-12);
        assert!((beat_align(&[1, 40], &[20], 1e9).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(beat_align(&[], &[4], 3.0).unwrap(), 0.0);
        assert!(matches!(beat_align(&[1], &[], 3.0), Err(Error::EmptyConditionBeats)));
    }

    #[test]
    fn track_peaks() {
        assert_eq!(beats_from_track(&[1.0, 0.25, 0.0, 0.25, 1.0, 0.25, 0.0]), vec![0, 4]);
        assert!(beats_from_track(&[0.0; 5]).is_empty());
    }

    #[test]
    fn constant_pose_has_no_beats_and_no_jerk() {
        let skel = gen_skeleton(Template::Chain(3)).unwrap();
        let rots = vec![vec![RotMat::about_x(0.3); 3]; 20];
        let roots: Vec<Vec3> = (0..20).map(|f| Vec3::new(0.1 * f as f64, 0.0, 0.0)).collect();
        let m = MotionSeq::from_rotations(&rots, &roots).unwrap();
        assert!(detect_motion_beats(&m, &skel).unwrap().is_empty());
        assert!(smoothness_report(&m, &skel).unwrap().iter().all(|v| v.abs() < 1e-12));
        assert!(detect_motion_beats(&m.window(0, 4).unwrap(), &skel).is_err());
    }

    #[test]
    fn synthetic_beats_are_found() {
        let cfg = SynthConfig::default();
        let skel = gen_skeleton(cfg.template).unwrap();
        let (mut hit, mut total) = (0, 0);
        for seed in 0..20 {
            let clip = gen_clip(&cfg, (seed % 4) as usize, seed).unwrap();
            let found = detect_motion_beats(&clip.motion, &skel).unwrap();
            assert!(found.windows(2).all(|w| w[0] < w[1]));
            let cond = beats_from_track(&clip.cond.beat_track);
            assert_eq!(cond, clip.beats);
            for b in clip.beats.iter().filter(|&&b| b >= 2 && b + 2 < cfg.frames) {
                total += 1;
                if found.iter().any(|&f| f.abs_diff(*b) <= 2) {
                    hit += 1;
                }
            }
            assert!(beat_align(&found, &cond, 3.0).unwrap() > 0.8);
        }
        assert!(hit * 10 >= total * 9, "{hit}/{total}");
    }

    #[test]
    fn diversity_cases() {
        let zeros = MotionSeq::zeros(4, 2);
        let ones = MotionSeq::from_data(4, 2, vec![1.0; zeros.data().len()]).unwrap();
        assert_eq!(diversity(&[zeros.clone(), ones.clone()]).unwrap(), 1.0);
        assert_eq!(diversity(&[ones.clone(), ones.clone(), ones.clone()]).unwrap(), 0.0);
        assert!(matches!(diversity(&[ones]), Err(Error::TooFewClips(1))));
    }

    #[test]
    fn jerk_matches_brute_force() {
        let cfg = SynthConfig { frames: 20, ..SynthConfig::default() };
        let skel = gen_skeleton(cfg.template).unwrap();
        let m = gen_clip(&cfg, 2, 7).unwrap().motion;
        let report = smoothness_report(&m, &skel).unwrap();
        let pos: Vec<Vec<Vec3>> = (0..20).map(|f| fk_global_raw(&skel, &m.rotations(f).unwrap(), &m.root(f))).collect();
        for k in 0..skel.len() {
            let mut s = 0.0;
            for f in 3..20 {
                let j = pos[f][k] - pos[f - 1][k] * 3.0 + pos[f - 2][k] * 3.0 - pos[f - 3][k];
                s += j.norm_squared();
            }
            assert!((report[k] - (s / 17.0).sqrt()).abs() < 1e-12);
        }
    }
}
