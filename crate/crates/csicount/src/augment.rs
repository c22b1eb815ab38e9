//! Semantically invariant window augmentations for contrastive pre-training:
//! additive Gaussian jitter, a single random scale factor per window, and
//! segment permutation along time. All randomness flows through the seeded
//! generator, so a run is reproducible from (seed, input) alone.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dsp::Window;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AugmentPolicy {
    pub jitter_sigma: f64,
    pub scale_sigma: f64,
    pub max_segments: usize,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            jitter_sigma: 0.03,
            scale_sigma: 0.1,
            max_segments: 5,
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self, window_len: usize) -> Result<()> {
        if self.jitter_sigma < 0.0 || self.scale_sigma < 0.0 {
            return Err(Error::InvalidArg("augment sigmas must be >= 0".into()));
        }
        if self.max_segments < 2 || self.max_segments > window_len {
            return Err(Error::InvalidArg(format!(
                "max_segments {} out of range 2..={window_len}",
                self.max_segments
            )));
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Independent per-window generator, for parallel augmentation.
    pub fn rng_for(&self, window_index: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ window_index.wrapping_mul(0x9e3779b97f4a7c15))
    }
}

/// w'(t) = w(t) + eps, eps ~ N(0, sigma^2) i.i.d. per element.
pub fn jitter(w: &Window, sigma: f64, rng: &mut impl Rng) -> Window {
    if sigma == 0.0 {
        return w.clone();
    }
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut out = w.clone();
    for row in out.values.iter_mut() {
        for v in row.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    out
}

/// w' = alpha * w with one alpha ~ N(1, sigma^2) per window.
pub fn scale(w: &Window, sigma: f64, rng: &mut impl Rng) -> Window {
    if sigma == 0.0 {
        return w.clone();
    }
    let alpha = Normal::new(1.0, sigma).unwrap().sample(rng);
    let mut out = w.clone();
    for row in out.values.iter_mut() {
        for v in row.iter_mut() {
            *v *= alpha;
        }
    }
    out
}

/// Split along time into k segments (k uniform in {2..max_segments}) at
/// cut points drawn without replacement from interior indices, then
/// reassemble the segments in a uniformly random order.
pub fn permute(w: &Window, max_segments: usize, rng: &mut impl Rng) -> Window {
    let len = w.len();
    if max_segments < 2 || len < 2 {
        return w.clone();
    }
    let k = rng.gen_range(2..=max_segments.min(len));
    // k-1 distinct interior cut points
    let mut interior: Vec<usize> = (1..len).collect();
    interior.shuffle(rng);
    let mut cuts: Vec<usize> = interior[..k - 1].to_vec();
    cuts.sort_unstable();

    let mut segments: Vec<&[Vec<f64>]> = Vec::with_capacity(k);
    let mut prev = 0;
    for &c in &cuts {
        segments.push(&w.values[prev..c]);
        prev = c;
    }
    segments.push(&w.values[prev..]);
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);

    let mut values = Vec::with_capacity(len);
    for &i in &order {
        values.extend_from_slice(segments[i]);
    }
    Window {
        values,
        start_index: w.start_index,
        source_id: w.source_id.clone(),
    }
}

/// One augmented view: jitter -> scale -> permute.
pub fn augment_view(w: &Window, policy: &AugmentPolicy, rng: &mut impl Rng) -> Window {
    let v = jitter(w, policy.jitter_sigma, rng);
    let v = scale(&v, policy.scale_sigma, rng);
    permute(&v, policy.max_segments, rng)
}

/// Two independently augmented views of the same window (a positive pair).
pub fn make_view_pair(w: &Window, policy: &AugmentPolicy, rng: &mut impl Rng) -> (Window, Window) {
    (augment_view(w, policy, rng), augment_view(w, policy, rng))
}
