//! Random contact and conductivity draws and the measurement noise model.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ConductivityField;
use crate::mesh::Mesh;

/// Generator used for every draw; recorded in study reports.
pub const RNG_ALGORITHM: &str = "ChaCha20 (rand_chacha), one stream per draw index";

/// Deterministic generator for draw `index` of a study seeded with `seed`.
pub fn draw_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomDrawConfig {
    /// Contact peaks are `offset + shared·β + independent·υ_m` (S/m²) with
    /// β shared by all electrodes and υ_m drawn per electrode, both U[0,1].
    pub contact_offset: f64,
    pub contact_shared_scale: f64,
    pub contact_independent_scale: f64,
    /// Mean of the log-conductivity (log S/m).
    pub log_mean: f64,
    /// Correlation length of the squared-exponential covariance (m).
    pub correlation_length: f64,
    /// Pointwise standard deviation of the log-conductivity.
    pub log_std: f64,
}

impl Default for RandomDrawConfig {
    fn default() -> Self {
        Self {
            contact_offset: 10.0,
            contact_shared_scale: 600.0,
            contact_independent_scale: 380.0,
            log_mean: 0.2f64.ln(),
            correlation_length: 0.02,
            log_std: 0.5,
        }
    }
}

impl RandomDrawConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.correlation_length > 0.0) {
            return Err(Error::Config(format!("correlation length must be positive, got {}", self.correlation_length)));
        }
        if !(self.log_std >= 0.0) {
            return Err(Error::Config(format!("log standard deviation must be non-negative, got {}", self.log_std)));
        }
        if !(self.contact_shared_scale >= 0.0 && self.contact_independent_scale >= 0.0) {
            return Err(Error::Config("contact scales must be non-negative".into()));
        }
        if !(self.contact_offset > 0.0 || self.contact_shared_scale > 0.0 || self.contact_independent_scale > 0.0) {
            return Err(Error::Config("contact law produces zero peaks".into()));
        }
        Ok(())
    }
}

/// Draws one set of `m` contact peaks.
pub fn draw_contacts(config: &RandomDrawConfig, m: usize, rng: &mut impl Rng) -> Vec<f64> {
    let beta: f64 = rng.random();
    let shared = config.contact_offset + config.contact_shared_scale * beta;
    (0..m).map(|_| shared + config.contact_independent_scale * rng.random::<f64>()).collect()
}

/// Nodes belonging to tetrahedra with the given region label, ascending.
pub fn region_nodes(mesh: &Mesh, label: i32) -> Vec<usize> {
    let mut mark = vec![false; mesh.n_nodes()];
    for (tet, &r) in mesh.tets().iter().zip(mesh.regions()) {
        if r == label {
            for &v in tet {
                mark[v] = true;
            }
        }
    }
    (0..mark.len()).filter(|&i| mark[i]).collect()
}

/// Gaussian log-conductivity sampler on a fixed node set, holding the
/// Cholesky factor of the squared-exponential covariance.
#[derive(Debug, Clone)]
pub struct LognormalSampler {
    nodes: Vec<usize>,
    factor: Option<DMatrix<f64>>,
    log_mean: f64,
}

impl LognormalSampler {
    pub fn new(config: &RandomDrawConfig, mesh: &Mesh, region: &[usize]) -> Result<Self> {
        config.validate()?;
        if region.is_empty() {
            return Err(Error::Config("random field region has no nodes".into()));
        }
        if let Some(&bad) = region.iter().find(|&&i| i >= mesh.n_nodes()) {
            return Err(Error::Config(format!("region node {bad} out of range")));
        }
        let var = config.log_std * config.log_std;
        let factor = if var == 0.0 {
            None
        } else {
            let x: Vec<_> = region.iter().map(|&i| mesh.nodes()[i]).collect();
            let l2 = 2.0 * config.correlation_length * config.correlation_length;
            let cov = DMatrix::from_fn(x.len(), x.len(), |i, j| var * (-(x[i] - x[j]).norm_squared() / l2).exp());
            let chol = match cov.clone().cholesky() {
                Some(c) => c,
                None => {
                    let mut jittered = cov;
                    for i in 0..x.len() {
                        jittered[(i, i)] += 1e-10 * var;
                    }
                    jittered.cholesky().ok_or_else(|| {
                        Error::Numeric("covariance factorization failed after adding diagonal jitter".into())
                    })?
                }
            };
            Some(chol.unpack())
        };
        Ok(Self { nodes: region.to_vec(), factor, log_mean: config.log_mean })
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// One draw of `κ` on the region nodes.
    pub fn draw_log(&self, rng: &mut impl Rng) -> DVector<f64> {
        let n = self.nodes.len();
        match &self.factor {
            None => DVector::from_element(n, self.log_mean),
            Some(l) => {
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                (l * z).add_scalar(self.log_mean)
            }
        }
    }

    /// Copy of `background` with `exp κ` on the region nodes.
    pub fn draw(&self, background: &ConductivityField, rng: &mut impl Rng) -> Result<ConductivityField> {
        let kappa = self.draw_log(rng);
        let mut v = background.values().to_vec();
        for (&i, k) in self.nodes.iter().zip(kappa.iter()) {
            v[i] = k.exp();
        }
        ConductivityField::new(v)
    }
}

pub fn draw_lognormal_field(
    config: &RandomDrawConfig,
    mesh: &Mesh,
    region: &[usize],
    background: &ConductivityField,
    rng: &mut impl Rng,
) -> Result<ConductivityField> {
    LognormalSampler::new(config, mesh, region)?.draw(background, rng)
}

/// Default noise level relative to the data range.
pub const DEFAULT_NOISE_FRACTION: f64 = 0.005;

/// Independent Gaussian noise with covariance `s²I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub std: f64,
    /// Fraction of the data range the deviation was scaled from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
}

impl NoiseModel {
    /// Noise with a given standard deviation.
    pub fn with_std(std: f64) -> Result<Self> {
        if !(std > 0.0 && std.is_finite()) {
            return Err(Error::Domain(format!("noise standard deviation must be positive, got {std}")));
        }
        Ok(Self { std, fraction: None })
    }

    pub fn variance(&self) -> f64 {
        self.std * self.std
    }

    /// The whitening factor `C = I/s` applied to a vector.
    pub fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        v / self.std
    }

    pub fn sample(&self, len: usize, rng: &mut impl Rng) -> DVector<f64> {
        DVector::from_fn(len, |_, _| self.std * rng.sample::<f64, _>(StandardNormal))
    }
}

/// Noise with standard deviation `fraction · (max − min)` of the data.
pub fn make_noise(data: &DVector<f64>, fraction: f64) -> Result<NoiseModel> {
    if !(fraction > 0.0 && fraction.is_finite()) {
        return Err(Error::Domain(format!("noise fraction must be positive, got {fraction}")));
    }
    let range = data.max() - data.min();
    if !(range > 0.0) {
        return Err(Error::Domain("noise scale data are constant".into()));
    }
    Ok(NoiseModel { std: fraction * range, fraction: Some(fraction) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contact_bounds() {
        let cfg = RandomDrawConfig::default();
        let mut rng = draw_rng(3, 0);
        for _ in 0..1000 {
            for z in draw_contacts(&cfg, 8, &mut rng) {
                assert!((10.0..=990.0).contains(&z));
            }
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let cfg = RandomDrawConfig::default();
        let a = draw_contacts(&cfg, 4, &mut draw_rng(7, 2));
        let b = draw_contacts(&cfg, 4, &mut draw_rng(7, 2));
        let c = draw_contacts(&cfg, 4, &mut draw_rng(7, 3));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn noise_from_range() {
        let d = DVector::from_vec(vec![-1.0, 3.0, 0.5]);
        let n = make_noise(&d, 0.005).unwrap();
        assert!((n.std - 0.02).abs() < 1e-16);
        assert!((n.variance() - 4e-4).abs() < 1e-18);
        assert!(matches!(make_noise(&d, 0.0), Err(Error::Domain(_))));
        assert!(matches!(make_noise(&DVector::from_element(3, 2.0), 0.01), Err(Error::Domain(_))));
    }
}
