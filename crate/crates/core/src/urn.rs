//! Cell laws and generalized urn models.
//!
//! An urn model is a list of independent integer cell variables together
//! with the total `n` they are conditioned on. Three families are supported:
//! Poisson cells (sampling with replacement), binomial cells (sampling
//! without replacement) and negative-binomial cells (the multicolor Pólya
//! urn).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{moments_from_cumulants, Poly};

/// Highest central moment order served by the recurrences.
pub const K_MAX: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Poisson,
    Binomial,
    #[serde(rename = "negbinomial")]
    NegBinomial,
}

/// Law of one cell variable.
///
/// `shape` is the Poisson weight p_m, the binomial count ω_m or the
/// negative-binomial order d_m. `nu` is the free parameter: Poisson cells
/// have mean `nu * shape`, binomial and negative-binomial cells use it as
/// their success probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellLaw {
    pub family: Family,
    pub shape: f64,
    pub nu: f64,
}

impl CellLaw {
    pub fn poisson(mean: f64) -> Self {
        CellLaw {
            family: Family::Poisson,
            shape: 1.0,
            nu: mean,
        }
    }

    pub fn binomial(trials: u64, prob: f64) -> Self {
        CellLaw {
            family: Family::Binomial,
            shape: trials as f64,
            nu: prob,
        }
    }

    pub fn neg_binomial(order: f64, prob: f64) -> Self {
        CellLaw {
            family: Family::NegBinomial,
            shape: order,
            nu: prob,
        }
    }

    fn validate(&self, cell: usize) -> Result<()> {
        let bad = |value| Err(Error::NonpositiveShape { cell, value });
        if !(self.shape.is_finite() && self.shape > 0.0) {
            return bad(self.shape);
        }
        match self.family {
            Family::Poisson => {
                if !(self.nu.is_finite() && self.nu > 0.0) {
                    return bad(self.nu);
                }
            }
            Family::Binomial => {
                if self.shape.fract() != 0.0 {
                    return bad(self.shape);
                }
                // ν = 1 is the full urn: every cell holds ω_m balls.
                if !(self.nu > 0.0 && self.nu <= 1.0) {
                    return bad(self.nu);
                }
            }
            Family::NegBinomial => {
                if !(self.nu > 0.0 && self.nu < 1.0) {
                    return bad(self.nu);
                }
            }
        }
        Ok(())
    }

    /// Poisson rate.
    fn rate(&self) -> f64 {
        self.nu * self.shape
    }

    /// Negative-binomial odds ρ = ν / (1 − ν).
    fn odds(&self) -> f64 {
        self.nu / (1.0 - self.nu)
    }

    pub fn mean(&self) -> f64 {
        match self.family {
            Family::Poisson => self.rate(),
            Family::Binomial => self.shape * self.nu,
            Family::NegBinomial => self.shape * self.odds(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self.family {
            Family::Poisson => self.rate(),
            Family::Binomial => self.shape * self.nu * (1.0 - self.nu),
            Family::NegBinomial => {
                let rho = self.odds();
                self.shape * rho * (1.0 + rho)
            }
        }
    }

    /// Largest support point for the binomial family.
    pub fn max_support(&self) -> Option<usize> {
        match self.family {
            Family::Binomial => Some(self.shape as usize),
            _ => None,
        }
    }

    /// Probabilities P{ξ = x} for x = 0..=upto, computed from running
    /// log-factor sums so that large means do not underflow at small x.
    pub fn pmf_table(&self, upto: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(upto + 1);
        match self.family {
            Family::Poisson => {
                let lambda = self.rate();
                let ln_l = lambda.ln();
                let mut ln_p = -lambda;
                for x in 0..=upto {
                    if x > 0 {
                        ln_p += ln_l - (x as f64).ln();
                    }
                    out.push(ln_p.exp());
                }
            }
            Family::Binomial => {
                let w = self.shape as usize;
                if self.nu == 1.0 {
                    out.extend((0..=upto).map(|x| if x == w { 1.0 } else { 0.0 }));
                    return out;
                }
                let (p, q) = (self.nu, 1.0 - self.nu);
                let mut ln_p = w as f64 * q.ln();
                for x in 0..=upto {
                    if x > w {
                        out.push(0.0);
                        continue;
                    }
                    if x > 0 {
                        ln_p += ((w - x + 1) as f64).ln() - (x as f64).ln() + p.ln() - q.ln();
                    }
                    out.push(ln_p.exp());
                }
            }
            Family::NegBinomial => {
                let d = self.shape;
                let ln_nu = self.nu.ln();
                let mut ln_p = d * (1.0 - self.nu).ln();
                for x in 0..=upto {
                    if x > 0 {
                        ln_p += (d + (x - 1) as f64).ln() - (x as f64).ln() + ln_nu;
                    }
                    out.push(ln_p.exp());
                }
            }
        }
        out
    }

    /// Smallest x* with P{ξ > x*} < tail_eps (the whole support for
    /// binomial cells).
    pub fn truncation_point(&self, tail_eps: f64) -> usize {
        if let Some(w) = self.max_support() {
            return w;
        }
        let mean = self.mean();
        let sd = self.variance().sqrt();
        // Extend the table until the remaining tail is bounded far below
        // tail_eps by a geometric series in the pmf ratio.
        let mut upto = (mean + 10.0 * sd + 10.0).ceil() as usize;
        loop {
            let pmf = self.pmf_table(upto + 1);
            let ratio = self.ratio_bound(upto);
            let last = pmf[upto + 1];
            let remainder = last * ratio / (1.0 - ratio);
            if ratio < 1.0 && remainder < tail_eps * 1e-6 && remainder + last < tail_eps {
                let mut tail = remainder + last;
                let mut x = upto;
                // tail currently equals P{ξ > x} (approximately, from above).
                while x > 0 && tail + pmf[x] < tail_eps {
                    tail += pmf[x];
                    x -= 1;
                }
                return x;
            }
            upto = upto * 2 + 16;
        }
    }

    /// Upper bound on p(y+1)/p(y) for all y > x.
    fn ratio_bound(&self, x: usize) -> f64 {
        let x = x as f64 + 1.0;
        match self.family {
            Family::Poisson => self.rate() / (x + 1.0),
            Family::Binomial => 0.0,
            Family::NegBinomial => {
                let r = self.nu * (self.shape + x) / (x + 1.0);
                r.max(self.nu)
            }
        }
    }

    /// Exact central moment E(ξ − Eξ)^k from the family recurrences.
    pub fn central_moment(&self, k: usize) -> Result<f64> {
        if k > K_MAX {
            return Err(Error::OrderTooHigh {
                order: k,
                max: K_MAX,
            });
        }
        Ok(self.central_moment_table(k)[k])
    }

    /// Central moments of orders 0..=k.
    pub fn central_moment_table(&self, k: usize) -> Vec<f64> {
        match self.family {
            Family::Poisson => {
                // μ_{v+1} = vλ μ_{v−1} + λ dμ_v/dλ, as polynomials in λ.
                let x = Poly(vec![0.0, 1.0]);
                let mut polys = vec![Poly::constant(1.0), Poly::constant(0.0)];
                for v in 1..k {
                    let next = polys[v - 1]
                        .mul(&x)
                        .scale(v as f64)
                        .add(&polys[v].derivative().mul(&x));
                    polys.push(next);
                }
                let lambda = self.rate();
                polys.iter().take(k + 1).map(|p| p.eval(lambda)).collect()
            }
            Family::Binomial => {
                // μ_k = pq (dμ_{k−1}/dp + (k−1) ω μ_{k−2}), as polynomials in p.
                let w = self.shape;
                let pq = Poly(vec![0.0, 1.0, -1.0]);
                let mut polys = vec![Poly::constant(1.0), Poly::constant(0.0)];
                for j in 2..=k {
                    let inner = polys[j - 1]
                        .derivative()
                        .add(&polys[j - 2].scale((j - 1) as f64 * w));
                    polys.push(pq.mul(&inner));
                }
                polys.iter().take(k + 1).map(|p| p.eval(self.nu)).collect()
            }
            Family::NegBinomial => {
                // κ_1 = dρ, κ_{r+1} = ρ(1+ρ) dκ_r/dρ; central moments from
                // the cumulants with κ_1 set to zero.
                let d = self.shape;
                let rho = self.odds();
                let factor = Poly(vec![0.0, 1.0, 1.0]);
                let mut polys = vec![Poly::constant(0.0), Poly(vec![0.0, d])];
                for r in 1..k.max(1) {
                    let next = factor.mul(&polys[r].derivative());
                    polys.push(next);
                }
                let mut cumulants: Vec<f64> =
                    polys.iter().take(k + 1).map(|p| p.eval(rho)).collect();
                cumulants.resize(k + 1, 0.0);
                if k >= 1 {
                    cumulants[1] = 0.0;
                }
                moments_from_cumulants(&cumulants)
            }
        }
    }

    /// Central moment by direct summation over the truncated support.
    pub fn central_moment_brute(&self, k: usize, tail_eps: f64) -> f64 {
        let upto = self.truncation_point(tail_eps);
        let pmf = self.pmf_table(upto);
        let mean = self.mean();
        pmf.iter()
            .enumerate()
            .map(|(x, p)| p * (x as f64 - mean).powi(k as i32))
            .sum()
    }

    /// Characteristic function E exp(iτξ).
    pub fn charfn(&self, tau: f64) -> Complex64 {
        let e = Complex64::from_polar(1.0, tau);
        match self.family {
            Family::Poisson => (self.rate() * (e - 1.0)).exp(),
            Family::Binomial => (1.0 - self.nu + self.nu * e).powf(self.shape),
            Family::NegBinomial => {
                let base = (1.0 - self.nu) / (1.0 - self.nu * e);
                base.powf(self.shape)
            }
        }
    }
}

/// Serialized form of an urn model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    pub shapes: Vec<f64>,
    pub n: u64,
    /// Explicit free parameter; omitted means "calibrate so that A_N = n".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
}

/// A generalized urn model: independent cells conditioned on their total.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GumSpec {
    pub family: Family,
    pub cells: Vec<CellLaw>,
    pub n: u64,
    pub nu: f64,
    /// Σ Eξ_m.
    pub a_n: f64,
    /// Σ Var ξ_m.
    pub b2_n: f64,
    /// (n − A_N) / B_N.
    pub x_n: f64,
}

impl GumSpec {
    /// Choose ν so that A_N = n, which makes the drift x_N vanish.
    pub fn calibrate(family: Family, shapes: &[f64], n: u64) -> Result<Self> {
        validate_shapes(family, shapes)?;
        if n == 0 {
            return Err(Error::InvalidInput("conditioning total n must be >= 1".into()));
        }
        let nu = match family {
            Family::Poisson => n as f64,
            Family::Binomial => {
                let omega: f64 = shapes.iter().sum();
                if n as f64 > omega {
                    return Err(Error::InfeasibleTotal {
                        n,
                        capacity: omega as u64,
                    });
                }
                n as f64 / omega
            }
            Family::NegBinomial => {
                let d1: f64 = shapes.iter().sum();
                n as f64 / (n as f64 + d1)
            }
        };
        let mut gum = Self::with_nu(family, shapes, nu, n)?;
        // A_N = n holds algebraically; remove the rounding residue.
        gum.x_n = 0.0;
        Ok(gum)
    }

    /// Build the model with an explicit free parameter.
    pub fn with_nu(family: Family, shapes: &[f64], nu: f64, n: u64) -> Result<Self> {
        validate_shapes(family, shapes)?;
        if family == Family::Binomial {
            let omega: f64 = shapes.iter().sum();
            if n as f64 > omega {
                return Err(Error::InfeasibleTotal {
                    n,
                    capacity: omega as u64,
                });
            }
        }
        let shapes = if family == Family::Poisson {
            normalize_weights(shapes)
        } else {
            shapes.to_vec()
        };
        let cells: Vec<CellLaw> = shapes
            .iter()
            .map(|&shape| CellLaw { family, shape, nu })
            .collect();
        for (m, c) in cells.iter().enumerate() {
            c.validate(m)?;
        }
        let a_n: f64 = cells.iter().map(CellLaw::mean).sum();
        let b2_n: f64 = cells.iter().map(|c| c.central_moment_table(2)[2]).sum();
        let x_n = if n as f64 == a_n {
            0.0
        } else {
            (n as f64 - a_n) / b2_n.sqrt()
        };
        Ok(GumSpec {
            family,
            cells,
            n,
            nu,
            a_n,
            b2_n,
            x_n,
        })
    }

    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        match cfg.nu {
            Some(nu) => Self::with_nu(cfg.family, &cfg.shapes, nu, cfg.n),
            None => Self::calibrate(cfg.family, &cfg.shapes, cfg.n),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::from_config(&cfg)
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            family: self.family,
            shapes: self.cells.iter().map(|c| c.shape).collect(),
            n: self.n,
            nu: Some(self.nu),
        }
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn b_n(&self) -> f64 {
        self.b2_n.sqrt()
    }
}

fn validate_shapes(family: Family, shapes: &[f64]) -> Result<()> {
    if shapes.is_empty() {
        return Err(Error::InvalidInput("an urn model needs at least one cell".into()));
    }
    for (cell, &value) in shapes.iter().enumerate() {
        let ok = value.is_finite()
            && value > 0.0
            && (family != Family::Binomial || value.fract() == 0.0);
        if !ok {
            return Err(Error::NonpositiveShape { cell, value });
        }
    }
    Ok(())
}

fn normalize_weights(p: &[f64]) -> Vec<f64> {
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        log::warn!("Poisson cell weights sum to {total}; rescaling to 1");
    }
    p.iter().map(|x| x / total).collect()
}

/// Number of ways helper for the Pólya law; kept here so that the oracle
/// and the tests share one definition of the multicolor urn mass.
pub fn polya_mass(orders: &[f64], counts: &[u64]) -> f64 {
    // C(D + n − 1, n)^{-1} Π C(d_m + k_m − 1, k_m) via log-gamma free sums.
    let n: u64 = counts.iter().sum();
    let d: f64 = orders.iter().sum();
    let ln_rising = |a: f64, k: u64| (0..k).map(|i| (a + i as f64).ln()).sum::<f64>();
    let ln_fact = |k: u64| (1..=k).map(|i| (i as f64).ln()).sum::<f64>();
    let ln_num: f64 = orders
        .iter()
        .zip(counts)
        .map(|(&dm, &k)| ln_rising(dm, k) - ln_fact(k))
        .sum();
    let ln_den = ln_rising(d, n) - ln_fact(n);
    (ln_num - ln_den).exp()
}
