use std::f64::consts::TAU;

use nalgebra::{DMatrix, Matrix3};
use rand::seq::index::sample;
use rand::Rng;

use super::Sequence;
use crate::diff::checkpoint::Record;
use crate::error::{Error, Result};

/// First `ceil(T / 2)` timesteps for training, the rest for testing.
pub fn split_half(seq: &Sequence, max_lag: usize) -> Result<(Sequence, Sequence)> {
    let t = seq.len();
    let train = t.div_ceil(2);
    let test = t - train;
    if train < max_lag + 1 || test < 1 {
        return Err(Error::InvalidArgument(format!(
            "sequence of length {t} is too short to split with lag {max_lag}"
        )));
    }
    Ok((
        seq.slice(0, train, format!("{}-train", seq.name)),
        seq.slice(train, test, format!("{}-test", seq.name)),
    ))
}

fn z_rotation(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotates every joint triple about the z axis.
pub fn rotate_sequence(seq: &Sequence, angle: f64) -> Sequence {
    rotate_sequence_with(seq, &z_rotation(angle))
}

/// Applies `r` to every joint triple. A rotated coordinate is observed only
/// when every input coordinate it depends on is observed.
pub fn rotate_sequence_with(seq: &Sequence, r: &Matrix3<f64>) -> Sequence {
    let mut out = seq.clone();
    for t in 0..seq.len() {
        for j in 0..seq.joints() {
            for a in 0..3 {
                let mut v = 0.0;
                let mut seen = true;
                for b in 0..3 {
                    if r[(a, b)] == 0.0 {
                        continue;
                    }
                    if seq.mask[(t, 3 * j + b)] {
                        v += r[(a, b)] * seq.values[(t, 3 * j + b)];
                    } else {
                        seen = false;
                    }
                }
                out.values[(t, 3 * j + a)] = if seen { v } else { f64::NAN };
                out.mask[(t, 3 * j + a)] = seen;
            }
        }
    }
    out
}

/// `n` copies rotated by angles drawn uniformly from `[0, 2 pi)`.
pub fn make_rotated_testset<R: Rng + ?Sized>(seq: &Sequence, n: usize, rng: &mut R) -> Vec<(f64, Sequence)> {
    (0..n)
        .map(|i| {
            let angle = rng.random_range(0.0..TAU);
            let mut s = rotate_sequence(seq, angle);
            s.name = format!("{}-rot{i}", seq.name);
            (angle, s)
        })
        .collect()
}

/// Hides `round(fraction * observed)` of the observed entries, chosen uniformly.
pub fn mask_random<R: Rng + ?Sized>(seq: &Sequence, fraction: f64, rng: &mut R) -> Result<Sequence> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("mask fraction {fraction} outside [0, 1]")));
    }
    let observed: Vec<(usize, usize)> = (0..seq.len())
        .flat_map(|t| (0..seq.values.ncols()).map(move |c| (t, c)))
        .filter(|&(t, c)| seq.mask[(t, c)])
        .collect();
    let k = (fraction * observed.len() as f64).round() as usize;
    let mut out = seq.clone();
    for i in sample(rng, observed.len(), k) {
        let (t, c) = observed[i];
        out.mask[(t, c)] = false;
        out.values[(t, c)] = f64::NAN;
    }
    Ok(out)
}

/// Uniform rescaling `x -> x / scale`, shared by all axes so that rotations
/// commute with it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub scale: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self { scale: 1.0 }
    }
}

impl Normalizer {
    /// Scale so the largest observed magnitude maps to 1.
    pub fn fit(seqs: &[Sequence]) -> Self {
        let m = seqs
            .iter()
            .flat_map(|s| s.values.iter().zip(s.mask.iter()))
            .filter(|(_, m)| **m)
            .fold(0.0f64, |acc, (v, _)| acc.max(v.abs()));
        Self {
            scale: if m > 0.0 { m } else { 1.0 },
        }
    }

    pub fn apply(&self, seq: &Sequence) -> Sequence {
        let mut out = seq.clone();
        out.values /= self.scale;
        out
    }

    pub fn invert_values(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        values * self.scale
    }

    pub fn invert(&self, seq: &Sequence) -> Sequence {
        let mut out = seq.clone();
        out.values *= self.scale;
        out
    }

    pub fn to_record(&self) -> Record {
        Record::scalar("normalizer.scale", self.scale)
    }

    pub fn from_records(records: &[Record]) -> Result<Self> {
        let rec = records
            .iter()
            .find(|r| r.name == "normalizer.scale")
            .ok_or_else(|| Error::Checkpoint("missing `normalizer.scale`".into()))?;
        let scale = rec.to_matrix()?[(0, 0)];
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Checkpoint(format!("invalid normalizer scale {scale}")));
        }
        Ok(Self { scale })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate_pendulum, PendulumSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pendulum() -> Sequence {
        simulate_pendulum(&PendulumSpec::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    fn two_joints() -> Sequence {
        let v = DMatrix::from_fn(5, 6, |r, c| ((r * 6 + c) as f64 * 0.37).sin());
        Sequence::new("two", 0.1, v).unwrap()
    }

    #[test]
    fn split_sizes() {
        let s = pendulum();
        let (a, b) = split_half(&s, 2).unwrap();
        assert_eq!((a.len(), b.len()), (205, 205));
        let short = s.slice(0, 3, "short");
        let (a, b) = split_half(&short, 1).unwrap();
        assert_eq!((a.len(), b.len()), (2, 1));
        assert!(split_half(&s.slice(0, 1, "one"), 1).is_err());
    }

    #[test]
    fn rotation_group_properties() {
        let s = two_joints();
        assert_eq!(rotate_sequence(&s, 0.0), s);
        let full = rotate_sequence(&s, TAU);
        assert!((full.values - &s.values).amax() < 1e-12);
        let ab = rotate_sequence(&rotate_sequence(&s, 0.4), 1.3);
        let direct = rotate_sequence(&s, 1.7);
        assert!((ab.values - direct.values).amax() < 1e-12);
    }

    #[test]
    fn rotation_is_an_isometry() {
        let s = two_joints();
        let r = rotate_sequence(&s, 2.1);
        for t in 0..s.len() {
            let d = |q: &Sequence| (q.values.fixed_view::<1, 3>(t, 0) - q.values.fixed_view::<1, 3>(t, 3)).norm();
            assert!((d(&s) - d(&r)).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_propagates_missing_inputs() {
        let mut s = two_joints();
        s.mask[(0, 0)] = false;
        s.values[(0, 0)] = f64::NAN;
        let r = rotate_sequence(&s, 0.5);
        assert!(!r.mask[(0, 0)] && !r.mask[(0, 1)] && r.mask[(0, 2)]);
        assert_eq!(r.values[(0, 2)], s.values[(0, 2)]);
    }

    #[test]
    fn rotated_testset_is_seeded() {
        let s = two_joints();
        let a = make_rotated_testset(&s, 10, &mut ChaCha8Rng::seed_from_u64(3));
        let b = make_rotated_testset(&s, 10, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a.len(), 10);
        assert_eq!(a, b);
        assert!(a.iter().all(|(ang, _)| (0.0..TAU).contains(ang)));
        assert!(make_rotated_testset(&s, 0, &mut ChaCha8Rng::seed_from_u64(3)).is_empty());
    }

    #[test]
    fn random_mask_fraction() {
        let s = pendulum();
        let m = mask_random(&s, 0.3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(m.observed_count(), s.observed_count() - (0.3 * 1230.0f64).round() as usize);
    }

    #[test]
    fn normalizer_roundtrip() {
        let s = pendulum();
        let n = Normalizer::fit(std::slice::from_ref(&s));
        assert!((n.scale - 1.0).abs() < 1e-12);
        let scaled = Normalizer { scale: 4.0 }.apply(&s);
        assert!((Normalizer { scale: 4.0 }.invert(&scaled).values - &s.values).amax() < 1e-15);
        assert_eq!(Normalizer::from_records(&[n.to_record()]).unwrap(), n);
    }
}
