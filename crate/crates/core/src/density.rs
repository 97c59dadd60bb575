//! Weighted Gaussian kernel density estimates and HPD intervals.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::special::LN_SQRT_2PI;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityEstimate {
    fn step(&self) -> f64 {
        (self.grid[self.grid.len() - 1] - self.grid[0]) / (self.grid.len() - 1) as f64
    }

    /// Trapezoidal integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.density, self.step())
    }

    /// Trapezoidal first moment over the grid.
    pub fn mean(&self) -> f64 {
        let xs: Vec<f64> = self.grid.iter().zip(&self.density).map(|(x, d)| x * d).collect();
        trapezoid(&xs, self.step()) / self.integral()
    }
}

fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    let inner: f64 = values[1..n - 1].iter().sum();
    h * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// Weighted mean, standard deviation and effective sample size
/// `(sum w)^2 / sum w^2`.
pub fn weighted_moments(values: &[f64], weights: &[f64]) -> (f64, f64, f64) {
    let total: f64 = weights.iter().sum();
    let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total;
    let var = values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (v - mean) * (v - mean))
        .sum::<f64>()
        / total;
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    (mean, libm::sqrt(var), total * total / sq)
}

fn check_sample(values: &[f64], weights: &[f64]) -> Result<()> {
    if values.len() != weights.len() {
        return Err(Error::LengthMismatch {
            left: values.len(),
            right: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::DegenerateSample(
            "weights must be finite and non-negative".into(),
        ));
    }
    let mut first = None;
    let mut distinct = false;
    for (v, _) in values.iter().zip(weights).filter(|(_, w)| **w > 0.0) {
        if !v.is_finite() {
            return Err(Error::DegenerateSample("non-finite value".into()));
        }
        match first {
            None => first = Some(*v),
            Some(f) if f != *v => distinct = true,
            Some(_) => {}
        }
    }
    if !distinct {
        return Err(Error::DegenerateSample(
            "fewer than 2 distinct values carry positive weight".into(),
        ));
    }
    Ok(())
}

/// Gaussian KDE with the weighted Silverman bandwidth
/// `1.06 sd_w n_eff^(-1/5)` on `grid_size` points spanning
/// `[min - 3h, max + 3h]`.
pub fn kde(values: &[f64], weights: &[f64], grid_size: usize) -> Result<DensityEstimate> {
    check_sample(values, weights)?;
    if grid_size < 2 {
        return Err(Error::Config("KDE grid needs at least 2 points".into()));
    }
    let (_, sd, n_eff) = weighted_moments(values, weights);
    let h = 1.06 * sd * libm::pow(n_eff, -0.2);
    if !(h > 0.0) {
        return Err(Error::DegenerateSample("zero bandwidth".into()));
    }
    let (lo, hi) = positive_range(values, weights);
    let grid = linspace(lo - 3.0 * h, hi + 3.0 * h, grid_size);
    let total: f64 = weights.iter().sum();
    let density = grid
        .iter()
        .map(|&x| {
            let mut acc = 0.0;
            for (v, w) in values.iter().zip(weights) {
                if *w > 0.0 {
                    let z = (x - v) / h;
                    acc += w * libm::exp(-0.5 * z * z);
                }
            }
            acc / (total * h) * libm::exp(-LN_SQRT_2PI)
        })
        .collect();
    Ok(DensityEstimate {
        grid,
        density,
        bandwidth: h,
    })
}

fn positive_range(values: &[f64], weights: &[f64]) -> (f64, f64) {
    values
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (v, _)| {
            (lo.min(*v), hi.max(*v))
        })
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HpdInterval {
    pub level: f64,
    pub lo: f64,
    pub hi: f64,
    /// Estimated mass in `[lo, hi]`.
    pub mass: f64,
    /// False when the highest-density set splits into several pieces; the
    /// interval is then their hull.
    pub connected: bool,
}

/// Highest-density interval by lowering a threshold until the grid mass
/// above it reaches `level`.
pub fn hpd(density: &DensityEstimate, level: f64) -> HpdInterval {
    let d = &density.density;
    let total: f64 = d.iter().sum();
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
    let mut acc = 0.0;
    let mut threshold = 0.0;
    for &i in &order {
        acc += d[i] / total;
        threshold = d[i];
        if acc >= level {
            break;
        }
    }
    let inside: Vec<usize> = (0..d.len()).filter(|&i| d[i] >= threshold).collect();
    let first = inside[0];
    let last = inside[inside.len() - 1];
    let connected = inside.len() == last - first + 1;
    let mass = d[first..=last].iter().sum::<f64>() / total;
    HpdInterval {
        level,
        lo: density.grid[first],
        hi: density.grid[last],
        mass,
        connected,
    }
}

/// Weighted 2-D Gaussian KDE on a regular grid, bandwidths by Scott's rule
/// `sd_w n_eff^(-1/6)` per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDensity {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major: `density[i * ys.len() + j]` is the value at `(xs[i], ys[j])`.
    pub density: Vec<f64>,
    pub bandwidths: (f64, f64),
}

pub fn kde2d(x: &[f64], y: &[f64], weights: &[f64], grid_size: usize) -> Result<JointDensity> {
    check_sample(x, weights)?;
    check_sample(y, weights)?;
    if grid_size < 2 {
        return Err(Error::Config("KDE grid needs at least 2 points".into()));
    }
    let (_, sx, n_eff) = weighted_moments(x, weights);
    let (_, sy, _) = weighted_moments(y, weights);
    let factor = libm::pow(n_eff, -1.0 / 6.0);
    let (hx, hy) = (sx * factor, sy * factor);
    let (xlo, xhi) = positive_range(x, weights);
    let (ylo, yhi) = positive_range(y, weights);
    let xs = linspace(xlo - 3.0 * hx, xhi + 3.0 * hx, grid_size);
    let ys = linspace(ylo - 3.0 * hy, yhi + 3.0 * hy, grid_size);
    let total: f64 = weights.iter().sum();
    let norm = total * hx * hy * 2.0 * core::f64::consts::PI;
    let live: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    let kx: Vec<f64> = xs
        .iter()
        .flat_map(|&g| {
            live.iter().map(move |&i| {
                let z = (g - x[i]) / hx;
                libm::exp(-0.5 * z * z)
            })
        })
        .collect();
    let ky: Vec<f64> = ys
        .iter()
        .flat_map(|&g| {
            live.iter().map(move |&i| {
                let z = (g - y[i]) / hy;
                weights[i] * libm::exp(-0.5 * z * z)
            })
        })
        .collect();
    let n = live.len();
    let mut density = Vec::with_capacity(grid_size * grid_size);
    for i in 0..grid_size {
        let row = &kx[i * n..(i + 1) * n];
        for j in 0..grid_size {
            let col = &ky[j * n..(j + 1) * n];
            density.push(row.iter().zip(col).map(|(a, b)| a * b).sum::<f64>() / norm);
        }
    }
    Ok(JointDensity {
        xs,
        ys,
        density,
        bandwidths: (hx, hy),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamSeed;
    use alloc::vec;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_sample(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = StreamSeed::new(seed).stream(0);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn standard_normal_density_and_hpd() {
        let xs = normal_sample(10_000, 3);
        let w = vec![1.0; xs.len()];
        let est = kde(&xs, &w, 512).unwrap();
        let at_zero = est
            .grid
            .iter()
            .zip(&est.density)
            .min_by(|a, b| a.0.abs().total_cmp(&b.0.abs()))
            .unwrap()
            .1;
        assert!((at_zero - 0.398_942_280_4).abs() < 0.03, "{at_zero}");
        assert!((est.integral() - 1.0).abs() < 0.02);
        let h = hpd(&est, 0.95);
        assert!((h.lo + 1.96).abs() < 0.1 && (h.hi - 1.96).abs() < 0.1, "{h:?}");
        assert!(h.connected);
        assert!(h.mass >= 0.94);
    }

    #[test]
    fn single_atom_is_degenerate() {
        let err = kde(&[1.0, 2.0, 3.0], &[0.0, 1.0, 0.0], 64).unwrap_err();
        assert!(matches!(err, Error::DegenerateSample(_)));
        assert!(kde(&[2.0, 2.0], &[1.0, 1.0], 64).is_err());
    }

    #[test]
    fn symmetric_triangle_hpd() {
        let grid: Vec<f64> = (0..=200).map(|i| i as f64 / 100.0).collect();
        let density: Vec<f64> = grid.iter().map(|x| 1.0 - (x - 1.0f64).abs()).collect();
        let est = DensityEstimate {
            grid,
            density,
            bandwidth: 0.01,
        };
        let h = hpd(&est, 0.95);
        assert!((h.lo + h.hi - 2.0).abs() < 1e-12);
        assert!(h.lo < 0.3);
        let full = hpd(&est, 1.0);
        assert!(full.lo <= 0.01 && full.hi >= 1.99);
    }

    #[test]
    fn bimodal_flags_disconnected() {
        let mut xs = normal_sample(2000, 5);
        xs.extend(normal_sample(2000, 6).iter().map(|x| x + 12.0));
        let w = vec![1.0; xs.len()];
        let h = hpd(&kde(&xs, &w, 512).unwrap(), 0.9);
        assert!(!h.connected);
    }

    #[test]
    fn joint_density_integrates_to_one() {
        let xs = normal_sample(2000, 9);
        let ys: Vec<f64> = normal_sample(2000, 10)
            .iter()
            .zip(&xs)
            .map(|(e, x)| 0.5 * x + e)
            .collect();
        let w = vec![1.0; xs.len()];
        let j = kde2d(&xs, &ys, &w, 64).unwrap();
        let dx = j.xs[1] - j.xs[0];
        let dy = j.ys[1] - j.ys[0];
        let mass: f64 = j.density.iter().sum::<f64>() * dx * dy;
        assert!((mass - 1.0).abs() < 0.02, "{mass}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kde_mean_matches_sample_mean(
            values in proptest::collection::vec(-50.0f64..50.0, 2..60),
            raw in proptest::collection::vec(0.01f64..1.0, 60),
        ) {
            let w = &raw[..values.len()];
            prop_assume!(values.iter().any(|v| *v != values[0]));
            let est = kde(&values, w, 512).unwrap();
            let (mean, sd, _) = weighted_moments(&values, w);
            prop_assert!((est.integral() - 1.0).abs() < 0.02);
            prop_assert!((est.mean() - mean).abs() <= 0.02 * sd);
        }
    }
}
