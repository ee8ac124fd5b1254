//! Seeded synthetic datasets.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{KkmError, Result};
use crate::kernel::Dataset;
use crate::seed::rng_from;

/// Isotropic Gaussian mixture parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub n: usize,
    pub d: usize,
    pub components: usize,
    /// Distance of each centre from the origin.
    pub separation: f64,
    pub std: f64,
}

impl MixtureSpec {
    pub fn new(n: usize, d: usize, components: usize) -> Self {
        Self {
            n,
            d,
            components,
            separation: 4.0,
            std: 1.0,
        }
    }
}

/// Centres sit at `separation * e_{c mod d}` with alternating sign, so the
/// first `2d` components are mutually equidistant. Component sizes differ by
/// at most one; labels are the component ids.
pub fn gaussian_mixture(spec: &MixtureSpec, seed: u64) -> Result<Dataset> {
    if spec.components == 0 || spec.n == 0 || spec.d == 0 {
        return Err(KkmError::invalid("mixture needs n, d, components >= 1"));
    }
    if !(spec.std >= 0.0 && spec.separation.is_finite()) {
        return Err(KkmError::invalid("mixture std must be non-negative"));
    }
    let mut rng = rng_from(seed);
    let mut values = Vec::with_capacity(spec.n * spec.d);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let c = i % spec.components;
        let axis = (c / 2) % spec.d;
        let sign = if c.is_multiple_of(2) { 1.0 } else { -1.0 };
        for j in 0..spec.d {
            let centre = if j == axis {
                sign * spec.separation
            } else {
                0.0
            };
            let z: f64 = StandardNormal.sample(&mut rng);
            values.push(centre + spec.std * z);
        }
        labels.push(c as i64);
    }
    // Shuffle so component order carries no signal.
    let mut order: Vec<usize> = (0..spec.n).collect();
    for i in (1..spec.n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    Dataset::new(spec.n, spec.d, values, Some(labels))?.select(&order)
}
