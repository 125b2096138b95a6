use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const SIDE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StimulusKind {
    Random,
    Geometric,
}

impl StimulusKind {
    /// Category id used for latent analysis: 0 = random, 1 = geometric.
    pub fn label(self) -> usize {
        match self {
            StimulusKind::Random => 0,
            StimulusKind::Geometric => 1,
        }
    }

    pub fn from_label(label: usize) -> Self {
        if label.is_multiple_of(2) {
            StimulusKind::Random
        } else {
            StimulusKind::Geometric
        }
    }
}

/// A binary 10×10 image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stimulus {
    pub pixels: [u8; SIDE * SIDE],
    pub kind: StimulusKind,
}

impl Stimulus {
    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.pixels[r * SIDE + c]
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p)).collect()
    }

    pub fn count_on(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 1).count()
    }
}

pub fn gen_stimulus(kind: StimulusKind, seed: u64) -> Stimulus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = [0u8; SIDE * SIDE];
    match kind {
        StimulusKind::Random => {
            for p in pixels.iter_mut() {
                *p = u8::from(rng.random_bool(0.5));
            }
        }
        StimulusKind::Geometric => {
            let mut set = |r: usize, c: usize| pixels[r * SIDE + c] = 1;
            match rng.random_range(0..3) {
                0 => {
                    let (h, w) = (rng.random_range(2..=5), rng.random_range(2..=5));
                    let (r0, c0) = (rng.random_range(0..=SIDE - h), rng.random_range(0..=SIDE - w));
                    for r in r0..r0 + h {
                        for c in c0..c0 + w {
                            set(r, c);
                        }
                    }
                }
                1 => {
                    let (r, c) = (rng.random_range(1..SIDE - 1), rng.random_range(1..SIDE - 1));
                    let arm = rng.random_range(1..=3usize);
                    for k in r.saturating_sub(arm)..=(r + arm).min(SIDE - 1) {
                        set(k, c);
                    }
                    for k in c.saturating_sub(arm)..=(c + arm).min(SIDE - 1) {
                        set(r, k);
                    }
                }
                _ => {
                    let (h, w) = (rng.random_range(3..=6), rng.random_range(3..=6));
                    let (r0, c0) = (rng.random_range(0..=SIDE - h), rng.random_range(0..=SIDE - w));
                    for r in r0..r0 + h {
                        for c in c0..c0 + w {
                            if r == r0 || r == r0 + h - 1 || c == c0 || c == c0 + w - 1 {
                                set(r, c);
                            }
                        }
                    }
                }
            }
        }
    }
    Stimulus { pixels, kind }
}
