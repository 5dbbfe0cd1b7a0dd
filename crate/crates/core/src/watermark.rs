//! Additive spread-spectrum watermarking with a linear correlation detector.
//!
//! Embedding adds a secret ±strength pattern `w` to the host; detection
//! reports presence iff the correlation `s·w` reaches the threshold `η`.
//! The presence region is therefore a half-space bounded by the hyperplane
//! `s·w = η`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::oracle::{Oracle, QueryContext, ScoredOracle};
use crate::rng::RngConfig;
use crate::signal::{dot, Signal};

const SIDECAR_MAGIC: &[u8; 4] = b"WMK1";

#[derive(Clone, Debug, PartialEq)]
pub struct Watermark {
    pattern: Signal,
    threshold: f64,
    strength: f64,
}

impl Watermark {
    pub fn new(pattern: Signal, threshold: f64, strength: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::InvalidParameter("threshold must be finite".into()));
        }
        if !(strength >= 0.0 && strength.is_finite()) {
            return Err(Error::InvalidParameter(
                "strength must be non-negative".into(),
            ));
        }
        if strength > 0.0 && pattern.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidParameter("all-zero watermark pattern".into()));
        }
        Ok(Watermark {
            pattern,
            threshold,
            strength,
        })
    }

    pub fn pattern(&self) -> &Signal {
        &self.pattern
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim()
    }

    /// `||w||^2`, the score shift caused by embedding.
    pub fn energy(&self) -> f64 {
        dot(self.pattern.as_slice(), self.pattern.as_slice())
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::InvalidParameter("threshold must be finite".into()));
        }
        self.threshold = threshold;
        Ok(self)
    }

    /// Binary sidecar: magic, dim (u64), strength, threshold, pattern; all
    /// little-endian.
    pub fn to_sidecar_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + 8 * self.dim());
        out.extend_from_slice(SIDECAR_MAGIC);
        out.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        out.extend_from_slice(&self.strength.to_le_bytes());
        out.extend_from_slice(&self.threshold.to_le_bytes());
        for v in self.pattern.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_sidecar_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Format("malformed watermark sidecar".into());
        if bytes.len() < 28 || &bytes[..4] != SIDECAR_MAGIC {
            return Err(bad());
        }
        let word = |at: usize| -> [u8; 8] { bytes[at..at + 8].try_into().unwrap() };
        let dim = u64::from_le_bytes(word(4)) as usize;
        let strength = f64::from_le_bytes(word(12));
        let threshold = f64::from_le_bytes(word(20));
        if bytes.len() != 28 + 8 * dim {
            return Err(bad());
        }
        let pattern = (0..dim)
            .map(|i| f64::from_le_bytes(word(28 + 8 * i)))
            .collect();
        Watermark::new(Signal::new(pattern)?, threshold, strength)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_sidecar_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_sidecar_bytes(&fs::read(path)?)
    }
}

/// Draws a ±`strength` pattern with the threshold set to `||w||^2 / 2`.
///
/// The signs are a random permutation of an (as near as possible) equal
/// number of `+` and `-` entries, so the pattern is zero-mean and a flat
/// host contributes nothing to the correlation.
pub fn generate_watermark(dim: usize, strength: f64, rng: RngConfig) -> Result<Watermark> {
    if dim == 0 {
        return Err(Error::EmptySignal);
    }
    if !(strength > 0.0 && strength.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "watermark strength must be positive, got {strength}"
        )));
    }
    let mut values: Vec<f64> = (0..dim)
        .map(|i| if i < dim / 2 { -strength } else { strength })
        .collect();
    values.shuffle(&mut rng.rng());
    let pattern = Signal::new(values)?;
    let threshold = 0.5 * dot(pattern.as_slice(), pattern.as_slice());
    Watermark::new(pattern, threshold, strength)
}

/// `x + w`.
pub fn embed(x: &Signal, wm: &Watermark) -> Result<Signal> {
    x.add(&wm.pattern)
}

/// `s·w`.
pub fn correlate(s: &Signal, wm: &Watermark) -> Result<f64> {
    s.dot(&wm.pattern)
}

/// Presence iff `correlate(s, wm) >= η`; the boundary itself counts as present.
pub fn detect(s: &Signal, wm: &Watermark) -> Result<bool> {
    Ok(correlate(s, wm)? >= wm.threshold)
}

/// The undefended detector as an oracle.
#[derive(Clone, Debug)]
pub struct LinearDetector {
    pub watermark: Watermark,
}

impl LinearDetector {
    pub fn new(watermark: Watermark) -> Self {
        LinearDetector { watermark }
    }
}

impl Oracle for LinearDetector {
    type Answer = bool;

    fn answer(&mut self, query: &Signal, _ctx: QueryContext) -> Result<bool> {
        detect(query, &self.watermark)
    }
}

impl ScoredOracle for LinearDetector {
    fn score(&mut self, query: &Signal, _ctx: QueryContext) -> Result<f64> {
        correlate(query, &self.watermark)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{synth_image, ImageKind};
    use crate::oracle::{Mode, OracleSession};
    use proptest::prelude::*;

    fn sig(v: &[f64]) -> Signal {
        Signal::new(v.to_vec()).unwrap()
    }

    fn wm(pattern: &[f64], threshold: f64) -> Watermark {
        Watermark::new(sig(pattern), threshold, 1.0).unwrap()
    }

    #[test]
    fn generated_pattern_support() {
        let w = generate_watermark(4, 1.0, RngConfig::new(1, 0)).unwrap();
        assert!(w.pattern().iter().all(|&v| v == 1.0 || v == -1.0));
        assert_eq!(w.threshold(), 2.0);

        let again = generate_watermark(4, 1.0, RngConfig::new(1, 0)).unwrap();
        assert_eq!(w, again);

        let big = generate_watermark(16384, 2.0, RngConfig::new(2, 0)).unwrap();
        let mean_abs = big.pattern().iter().map(|v| v.abs()).sum::<f64>() / 16384.0;
        assert_eq!(mean_abs, 2.0);
        assert_eq!(big.pattern().iter().sum::<f64>(), 0.0);

        assert!(generate_watermark(0, 1.0, RngConfig::new(1, 0)).is_err());
        assert!(generate_watermark(3, 0.0, RngConfig::new(1, 0)).is_err());
    }

    #[test]
    fn embed_examples() {
        let w = wm(&[1.0, -1.0], 0.0);
        assert_eq!(embed(&sig(&[10.0, 20.0]), &w).unwrap(), sig(&[11.0, 19.0]));
        let zero = Watermark::new(sig(&[0.0, 0.0]), 0.0, 0.0).unwrap();
        assert_eq!(embed(&sig(&[3.0, 4.0]), &zero).unwrap(), sig(&[3.0, 4.0]));
        let x = sig(&[0.25, 7.5]);
        let back = embed(&x, &w).unwrap().sub(w.pattern()).unwrap();
        assert_eq!(back, x);
        assert!(embed(&sig(&[1.0]), &w).is_err());
    }

    #[test]
    fn correlate_examples() {
        assert_eq!(
            correlate(&sig(&[1.0, 1.0]), &wm(&[2.0, -1.0], 0.0)).unwrap(),
            1.0
        );
        assert_eq!(
            correlate(&sig(&[1.0, 2.0]), &wm(&[2.0, -1.0], 0.0)).unwrap(),
            0.0
        );
        assert_eq!(
            correlate(&sig(&[3.0, 4.0]), &wm(&[3.0, 4.0], 0.0)).unwrap(),
            25.0
        );
        assert!(correlate(&sig(&[1.0]), &wm(&[2.0, -1.0], 0.0)).is_err());
    }

    #[test]
    fn detect_is_boundary_inclusive() {
        let w = wm(&[1.0, 0.0], 2.0);
        assert!(detect(&sig(&[2.0, 5.0]), &w).unwrap());
        assert!(!detect(&sig(&[1.999, 5.0]), &w).unwrap());
        assert!(detect(&sig(&[1.0]), &w).is_err());
    }

    #[test]
    fn calibrated_threshold_monte_carlo() {
        // 100 natural-like 128x128 images: every marked copy must be
        // detected, and at most 1% of the unmarked originals.
        let w = generate_watermark(128 * 128, 2.5, RngConfig::new(77, 0)).unwrap();
        let mut false_positives = 0;
        for i in 0..100 {
            let kind = [
                ImageKind::TextureNoise,
                ImageKind::Blobs,
                ImageKind::Gradient,
            ][i % 3];
            let x = synth_image(128, 128, kind, RngConfig::new(78, 0).substream(i as u64))
                .unwrap()
                .pixels;
            assert!(
                detect(&embed(&x, &w).unwrap(), &w).unwrap(),
                "image {i} missed"
            );
            if detect(&x, &w).unwrap() {
                false_positives += 1;
            }
        }
        assert!(false_positives <= 1, "{false_positives} false positives");
    }

    #[test]
    fn sidecar_round_trip() {
        let w = generate_watermark(10, 1.5, RngConfig::new(4, 0)).unwrap();
        let back = Watermark::from_sidecar_bytes(&w.to_sidecar_bytes()).unwrap();
        assert_eq!(back, w);
        let mut bytes = w.to_sidecar_bytes();
        bytes.pop();
        assert!(Watermark::from_sidecar_bytes(&bytes).is_err());
        assert!(Watermark::from_sidecar_bytes(b"nope").is_err());
    }

    #[test]
    fn session_over_detector() {
        let w = wm(&[1.0, 0.0], 0.0);
        let mut session = OracleSession::open(LinearDetector::new(w), Mode::Binary, false);
        assert!(session.query(&sig(&[1.0, 0.0])).unwrap());
        assert!(session.query_score(&sig(&[1.0, 0.0])).is_err());
        assert_eq!(session.query_count(), 1);
    }

    proptest! {
        #[test]
        fn correlation_is_linear(
            a in prop::collection::vec(-100.0..100.0f64, 6),
            b in prop::collection::vec(-100.0..100.0f64, 6),
            seed in any::<u64>(),
        ) {
            let w = generate_watermark(6, 1.0, RngConfig::new(seed, 0)).unwrap();
            let (a, b) = (sig(&a), sig(&b));
            let lhs = correlate(&a.add(&b).unwrap(), &w).unwrap();
            let rhs = correlate(&a, &w).unwrap() + correlate(&b, &w).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }

        #[test]
        fn embedding_shifts_score_by_energy(
            x in prop::collection::vec(0.0..255.0f64, 8),
            seed in any::<u64>(),
            strength in 0.5..4.0f64,
        ) {
            let w = generate_watermark(8, strength, RngConfig::new(seed, 0)).unwrap();
            let x = sig(&x);
            let before = correlate(&x, &w).unwrap();
            let after = correlate(&embed(&x, &w).unwrap(), &w).unwrap();
            prop_assert!((after - before - w.energy()).abs() < 1e-9 * (1.0 + after.abs()));
            if before < w.threshold() && w.threshold() <= before + w.energy() {
                prop_assert!(!detect(&x, &w).unwrap());
                prop_assert!(detect(&embed(&x, &w).unwrap(), &w).unwrap());
            }
        }
    }
}
