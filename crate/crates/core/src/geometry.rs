//! Domains, marginals, and deterministic samplers.
//!
//! Every random draw goes through a ChaCha stream keyed by `(seed, stream)`.
//! Scans assign one stream per sample index so samples can be evaluated in
//! any order without changing the result.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance on the total mass of a marginal.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Deterministic generator for a `(seed, stream)` pair.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Closed axis-aligned box `[lower, upper]` in `R^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct DomainBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawBox> for DomainBox {
    type Error = Error;
    fn try_from(raw: RawBox) -> Result<Self> {
        DomainBox::new(raw.lower, raw.upper)
    }
}

impl From<DomainBox> for RawBox {
    fn from(b: DomainBox) -> Self {
        RawBox { lower: b.lower, upper: b.upper }
    }
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidDomain("dimension must be positive".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::InvalidDomain(format!(
                "lower has {} coordinates, upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::InvalidDomain(format!(
                    "coordinate {k}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Result<Self> {
        Self::cube(dim, 0.0, 1.0)
    }

    /// `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter().zip(self.lower.iter().zip(&self.upper)).all(|(x, (lo, hi))| lo <= x && x <= hi)
    }

    /// Uniform draw from the closed box.
    pub fn sample_closed<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo + rng.random::<f64>() * (hi - lo))
            .collect()
    }

    /// Uniform draw from the open box (boundary values are redrawn).
    pub fn sample_open<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| loop {
                let x = lo + rng.random::<f64>() * (hi - lo);
                if x > *lo && x < *hi {
                    break x;
                }
            })
            .collect()
    }
}

/// Finitely supported probability measure on a [`DomainBox`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMarginal", into = "RawMarginal")]
pub struct DiscreteMarginal {
    domain: DomainBox,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMarginal {
    dim: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TryFrom<RawMarginal> for DiscreteMarginal {
    type Error = Error;
    fn try_from(raw: RawMarginal) -> Result<Self> {
        let domain = DomainBox::new(raw.lower, raw.upper)?;
        if domain.dim() != raw.dim {
            return Err(Error::InvalidMarginal(format!(
                "dim = {} but the box has {} coordinates",
                raw.dim,
                domain.dim()
            )));
        }
        DiscreteMarginal::new(domain, raw.points, raw.weights)
    }
}

impl From<DiscreteMarginal> for RawMarginal {
    fn from(m: DiscreteMarginal) -> Self {
        RawMarginal {
            dim: m.domain.dim(),
            lower: m.domain.lower,
            upper: m.domain.upper,
            points: m.points,
            weights: m.weights,
        }
    }
}

impl DiscreteMarginal {
    pub fn new(domain: DomainBox, points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidMarginal("no support points".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::InvalidMarginal(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        for (a, p) in points.iter().enumerate() {
            if p.len() != domain.dim() {
                return Err(Error::InvalidMarginal(format!(
                    "point {a} has {} coordinates, domain has {}",
                    p.len(),
                    domain.dim()
                )));
            }
            if !domain.contains(p) {
                return Err(Error::InvalidMarginal(format!("point {a} = {p:?} lies outside the domain")));
            }
        }
        if let Some((a, w)) = weights.iter().enumerate().find(|(_, w)| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidMarginal(format!("weight {a} = {w} is not a nonnegative real")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMarginal(format!("weights sum to {total}, expected 1")));
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| points[a].partial_cmp(&points[b]).expect("finite coordinates"));
        for pair in order.windows(2) {
            if points[pair[0]] == points[pair[1]] {
                return Err(Error::InvalidMarginal(format!(
                    "duplicate support atoms {} and {}",
                    pair[0].min(pair[1]),
                    pair[0].max(pair[1])
                )));
            }
        }
        Ok(Self { domain, points, weights })
    }

    /// Equal weights on the given points.
    pub fn uniform_on(domain: DomainBox, points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len().max(1);
        let weights = vec![1.0 / n as f64; points.len()];
        Self::new(domain, points, weights)
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// True when every weight equals `1/n` (to within the constructor tolerance).
    pub fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|x| (x - w).abs() <= WEIGHT_SUM_TOL)
    }

    /// Relabel atoms: atom `a` of the result is atom `perm[a]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::DimensionMismatch("permutation length".into()));
        }
        let points = perm.iter().map(|&a| self.points[a].clone()).collect();
        let weights = perm.iter().map(|&a| self.weights[a]).collect();
        Self::new(self.domain.clone(), points, weights)
    }
}

/// One point `(x_0, ..., x_{m-1})` of the product of domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProductConfiguration {
    coords: Vec<Vec<f64>>,
}

impl ProductConfiguration {
    pub fn new(coords: Vec<Vec<f64>>) -> Self {
        Self { coords }
    }

    pub fn coords(&self) -> &[Vec<f64>] {
        &self.coords
    }

    pub fn coord(&self, i: usize) -> &[f64] {
        &self.coords[i]
    }

    pub fn marginal_count(&self) -> usize {
        self.coords.len()
    }

    /// Copy with coordinate `i` replaced.
    pub fn with_coord(&self, i: usize, value: Vec<f64>) -> Self {
        let mut coords = self.coords.clone();
        coords[i] = value;
        Self { coords }
    }

    pub fn coord_mut(&mut self, i: usize) -> &mut Vec<f64> {
        &mut self.coords[i]
    }
}

/// Uniform configuration in the closed product of `domains`.
pub fn sample_configuration(domains: &[DomainBox], seed: u64) -> Result<ProductConfiguration> {
    if domains.is_empty() {
        return Err(Error::InvalidDomain("empty domain list".into()));
    }
    let mut rng = rng_for(seed, 0);
    Ok(sample_configuration_with(domains, &mut rng))
}

pub(crate) fn sample_configuration_with<R: Rng>(domains: &[DomainBox], rng: &mut R) -> ProductConfiguration {
    ProductConfiguration::new(domains.iter().map(|d| d.sample_closed(rng)).collect())
}

/// `n` distinct uniform points in `domain`, each of weight `1/n`.
pub fn uniform_marginal(domain: &DomainBox, n: usize, seed: u64) -> Result<DiscreteMarginal> {
    let points = distinct_points(domain, n, seed)?;
    DiscreteMarginal::uniform_on(domain.clone(), points)
}

/// `n` distinct uniform points with weights drawn from a flat Dirichlet distribution.
pub fn dirichlet_marginal(domain: &DomainBox, n: usize, seed: u64) -> Result<DiscreteMarginal> {
    let points = distinct_points(domain, n, seed)?;
    let mut rng = rng_for(seed, 1);
    let gamma = Gamma::<f64>::new(1.0, 1.0).expect("valid gamma parameters");
    let raw: Vec<f64> = (0..n).map(|_| gamma.sample(&mut rng).max(f64::MIN_POSITIVE)).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    // absorb rounding so the sum is 1 to the last bit the constructor can see
    let drift: f64 = 1.0 - weights.iter().sum::<f64>();
    let heaviest = (0..n).max_by(|&a, &b| weights[a].total_cmp(&weights[b])).unwrap_or(0);
    weights[heaviest] += drift;
    DiscreteMarginal::new(domain.clone(), points, weights)
}

fn distinct_points(domain: &DomainBox, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::InvalidParameter("marginal size must be at least 1".into()));
    }
    let mut rng = rng_for(seed, 0);
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(n);
    while points.len() < n {
        let p = domain.sample_closed(&mut rng);
        if !points.contains(&p) {
            points.push(p);
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_rejects_inverted_bounds() {
        assert!(DomainBox::new(vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(DomainBox::new(vec![], vec![]).is_err());
        assert!(DomainBox::new(vec![0.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let d = vec![DomainBox::unit(2).unwrap()];
        assert_eq!(sample_configuration(&d, 0).unwrap(), sample_configuration(&d, 0).unwrap());
        assert_ne!(sample_configuration(&d, 0).unwrap(), sample_configuration(&d, 1).unwrap());
    }

    #[test]
    fn sampling_respects_each_box() {
        let d = vec![DomainBox::cube(1, 0.0, 1.0).unwrap(), DomainBox::cube(1, 2.0, 3.0).unwrap()];
        for seed in 0..50 {
            let x = sample_configuration(&d, seed).unwrap();
            assert!(d[0].contains(x.coord(0)));
            assert!(d[1].contains(x.coord(1)));
        }
    }

    #[test]
    fn empirical_mean_of_unit_interval() {
        let d = DomainBox::unit(1).unwrap();
        let mut rng = rng_for(7, 0);
        let mean = (0..10_000).map(|_| d.sample_closed(&mut rng)[0]).sum::<f64>() / 10_000.0;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn empty_domain_list_is_an_error() {
        assert!(sample_configuration(&[], 3).is_err());
    }

    #[test]
    fn uniform_marginal_weights() {
        let d = DomainBox::unit(2).unwrap();
        let one = uniform_marginal(&d, 1, 3).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.weights(), &[1.0]);
        let four = uniform_marginal(&d, 4, 3).unwrap();
        assert!(four.weights().iter().all(|&w| w == 0.25));
        assert_eq!(four.weights().iter().sum::<f64>(), 1.0);
        assert_eq!(uniform_marginal(&d, 50, 9).unwrap(), uniform_marginal(&d, 50, 9).unwrap());
        assert!(uniform_marginal(&d, 0, 9).is_err());
    }

    #[test]
    fn marginal_validation() {
        let d = DomainBox::unit(1).unwrap();
        assert!(DiscreteMarginal::new(d.clone(), vec![vec![0.2], vec![0.2]], vec![0.5, 0.5]).is_err());
        assert!(DiscreteMarginal::new(d.clone(), vec![vec![0.2], vec![1.2]], vec![0.5, 0.5]).is_err());
        assert!(DiscreteMarginal::new(d.clone(), vec![vec![0.2], vec![0.3]], vec![0.5, 0.6]).is_err());
        assert!(DiscreteMarginal::new(d.clone(), vec![vec![0.2], vec![0.3]], vec![1.5, -0.5]).is_err());
        assert!(DiscreteMarginal::new(d, vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).is_ok());
    }

    #[test]
    fn dirichlet_weights_form_a_probability_vector() {
        let d = DomainBox::unit(2).unwrap();
        for seed in 0..20 {
            let m = dirichlet_marginal(&d, 7, seed).unwrap();
            assert!((m.weights().iter().sum::<f64>() - 1.0).abs() <= WEIGHT_SUM_TOL);
            assert!(m.weights().iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn marginal_json_shape() {
        let d = DomainBox::new(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap();
        let m = DiscreteMarginal::new(d, vec![vec![0.5, 0.0], vec![0.25, -0.5]], vec![0.75, 0.25]).unwrap();
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(v["dim"], 2);
        assert_eq!(v["lower"], serde_json::json!([0.0, -1.0]));
        assert_eq!(v["weights"], serde_json::json!([0.75, 0.25]));
        let back: DiscreteMarginal = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
        let bad = serde_json::json!({"dim": 3, "lower": [0.0], "upper": [1.0], "points": [[0.5]], "weights": [1.0]});
        assert!(serde_json::from_value::<DiscreteMarginal>(bad).is_err());
    }
}
