use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::fleishman::{fleishman_coeffs, FleishmanCoeffs};
use crate::error::{GpcmError, Result};
use crate::model::{gpcm_category_probs, ItemBank, ItemParams, ResponseMatrix, ThetaVector};
use crate::seed;

/// Skewness of the skewed latent condition.
pub const SKEWED_SKEWNESS: f64 = 1.25;
/// Excess kurtosis of the skewed latent condition.
pub const SKEWED_EXCESS_KURTOSIS: f64 = 1.5;

/// Generating distribution of the latent trait.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LatentDistribution {
    /// N(0, 1)
    Normal,
    /// U(-3, 3)
    Uniform,
    /// Fleishman transform of N(0, 1) with skewness 1.25, excess kurtosis 1.5.
    Skewed(FleishmanCoeffs),
}

impl LatentDistribution {
    pub fn skewed() -> Result<Self> {
        fleishman_coeffs(SKEWED_SKEWNESS, SKEWED_EXCESS_KURTOSIS).map(LatentDistribution::Skewed)
    }

    pub fn name(&self) -> &'static str {
        match self {
            LatentDistribution::Normal => "normal",
            LatentDistribution::Uniform => "uniform",
            LatentDistribution::Skewed(_) => "skewed",
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            LatentDistribution::Normal => rng.sample(StandardNormal),
            LatentDistribution::Uniform => rng.random_range(-3.0..=3.0),
            LatentDistribution::Skewed(c) => c.transform(rng.sample(StandardNormal)),
        }
    }
}

impl fmt::Display for LatentDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LatentDistribution {
    type Err = GpcmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(LatentDistribution::Normal),
            "uniform" => Ok(LatentDistribution::Uniform),
            "skewed" => LatentDistribution::skewed(),
            other => Err(GpcmError::Config(format!(
                "unknown latent distribution {other:?} (expected normal, uniform or skewed)"
            ))),
        }
    }
}

impl TryFrom<String> for LatentDistribution {
    type Error = GpcmError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LatentDistribution> for String {
    fn from(d: LatentDistribution) -> String {
        d.name().to_owned()
    }
}

/// Draws `n` abilities from `dist` using the stream keyed by `seed`.
pub fn generate_thetas(dist: &LatentDistribution, n: usize, seed: u64) -> Result<ThetaVector> {
    if n == 0 {
        return Err(GpcmError::InvalidInput("need at least one person".into()));
    }
    let mut rng = seed::rng(seed, &[seed::tag("theta-draws")]);
    ThetaVector::new((0..n).map(|_| dist.sample(&mut rng)).collect())
}

/// Draws one categorical response per person and item from the model
/// probabilities, row by row.
pub fn generate_responses(bank: &ItemBank, thetas: &ThetaVector, seed: u64) -> Result<ResponseMatrix> {
    let mut rng = seed::rng(seed, &[seed::tag("response-draws")]);
    let mut cells = Vec::with_capacity(thetas.len() * bank.len());
    for &theta in thetas.values() {
        for item in bank.items() {
            let probs = gpcm_category_probs(theta, item)?;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = probs.len() - 1;
            for (c, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    k = c;
                    break;
                }
            }
            cells.push(k as u16);
        }
    }
    ResponseMatrix::new(thetas.len(), bank.n_categories(), cells)
}

const GENERATING_ITEMS: [(f64, [f64; 4]); 20] = [
    (1.476, [-1.726, -0.145, -0.849, 1.765]),
    (1.202, [-1.285, 0.248, 0.868, 1.433]),
    (1.390, [-1.109, -0.099, -0.257, 1.196]),
    (0.880, [-1.855, -0.105, 0.526, 1.271]),
    (1.047, [-2.198, 0.274, 1.038, 2.126]),
    (1.256, [-1.059, -0.542, 0.716, 1.858]),
    (1.090, [-1.326, -0.351, 0.669, 1.305]),
    (0.996, [-1.895, -1.475, 0.288, 1.392]),
    (0.985, [-0.707, -0.949, 0.369, 1.296]),
    (0.983, [-1.793, -0.567, 0.517, 1.571]),
    (1.150, [-1.972, -0.198, 0.092, 1.169]),
    (1.291, [-1.503, -0.648, 0.863, 2.453]),
    (1.530, [-1.447, -0.623, 0.900, 1.557]),
    (0.906, [-2.284, -0.201, 0.903, 1.623]),
    (1.213, [-1.385, -0.486, 0.632, 1.224]),
    (0.803, [-1.494, -0.859, 0.923, 1.546]),
    (0.773, [-1.009, -0.518, -0.438, 1.309]),
    (0.933, [-1.140, -0.310, 1.691, 1.721]),
    (1.408, [-1.459, -0.471, 0.736, 0.832]),
    (1.044, [-1.709, -0.454, -0.320, 1.149]),
];

/// The 20-item, 5-category generating bank of the recovery study. The four
/// published location columns are the steps `d_1..d_4` (category
/// transitions 1|0 through 4|3).
pub fn generating_bank() -> ItemBank {
    GENERATING_ITEMS
        .iter()
        .map(|(a, s)| ItemParams::new(*a, s.to_vec()).expect("static item is valid"))
        .collect()
}

/// Four 4-category items shaped like a passage-based reading test
/// (three dichotomous items summed per passage), used for estimator
/// agreement checks.
pub fn passage_bank() -> ItemBank {
    [
        (1.213, [-1.894, -0.998, 0.261]),
        (1.060, [-0.969, -0.123, 0.794]),
        (1.117, [-1.628, -0.793, 1.735]),
        (0.300, [0.344, 2.828, 6.188]),
    ]
    .iter()
    .map(|(a, s)| ItemParams::new(*a, s.to_vec()).expect("static item is valid"))
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generating_bank_shape() {
        let bank = generating_bank();
        assert_eq!(bank.len(), 20);
        assert!(bank.items().iter().all(|i| i.n_categories() == 5));
        assert_eq!(bank.items()[0].steps(), &[-1.726, -0.145, -0.849, 1.765]);
    }

    #[test]
    fn uniform_support_and_determinism() {
        let t = generate_thetas(&LatentDistribution::Uniform, 5000, 11).unwrap();
        assert!(t.values().iter().all(|v| (-3.0..=3.0).contains(v)));
        assert_eq!(t, generate_thetas(&LatentDistribution::Uniform, 5000, 11).unwrap());
        assert_ne!(t, generate_thetas(&LatentDistribution::Uniform, 5000, 12).unwrap());
    }

    #[test]
    fn distribution_names_round_trip() {
        for name in ["normal", "uniform", "skewed"] {
            let d: LatentDistribution = name.parse().unwrap();
            assert_eq!(d.name(), name);
        }
        assert!("gamma".parse::<LatentDistribution>().is_err());
    }

    #[test]
    fn saturated_ability_hits_top_category() {
        let bank = ItemBank::new(vec![generating_bank().items()[0].clone()]);
        let thetas = ThetaVector::new(vec![10.0; 2000]).unwrap();
        let data = generate_responses(&bank, &thetas, 5).unwrap();
        let top = data.column(0).filter(|&k| k == 4).count();
        assert!(top as f64 / 2000.0 > 0.999);
    }
}
