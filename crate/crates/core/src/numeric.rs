//! Small numerical helpers shared by the other modules: dense real
//! polynomials, the standard normal law, probabilists' Hermite polynomials
//! and the cumulant/moment conversions.


pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Dense polynomial in one real variable, lowest degree first.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn constant(c: f64) -> Self {
        Poly(vec![c])
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Self {
        if self.0.len() <= 1 {
            return Poly(vec![0.0]);
        }
        Poly(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| k as f64 * c)
                .collect(),
        )
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let len = self.0.len().max(other.0.len());
        let mut out = vec![0.0; len];
        for (k, c) in self.0.iter().enumerate() {
            out[k] += c;
        }
        for (k, c) in other.0.iter().enumerate() {
            out[k] += c;
        }
        Poly(out)
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly(self.0.iter().map(|c| c * s).collect())
    }
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(u: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

/// Standard normal CDF through the complementary error function, evaluated
/// on the short tail for either sign of `u`.
pub fn normal_cdf(u: f64) -> f64 {
    if u.is_nan() {
        return f64::NAN;
    }
    let tail = 0.5 * libm::erfc(u.abs() / std::f64::consts::SQRT_2);
    if u < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Probabilists' Hermite polynomials He_0..=He_max at `u`.
pub fn hermite_all(max: usize, u: f64) -> Vec<f64> {
    let mut he = Vec::with_capacity(max + 1);
    he.push(1.0);
    if max >= 1 {
        he.push(u);
    }
    for v in 1..max {
        let next = u * he[v] - v as f64 * he[v - 1];
        he.push(next);
    }
    he
}

/// Single probabilists' Hermite polynomial He_v(u).
pub fn hermite(v: usize, u: f64) -> f64 {
    hermite_all(v, u)[v]
}

pub fn binomial_coeff(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Raw moments from cumulants: m_n = sum_{k=1}^{n} C(n-1, k-1) kappa_k m_{n-k}.
/// `cumulants[0]` is ignored; `cumulants[k]` is kappa_k.
pub fn moments_from_cumulants(cumulants: &[f64]) -> Vec<f64> {
    let order = cumulants.len().saturating_sub(1);
    let mut m = vec![0.0; order + 1];
    m[0] = 1.0;
    for n in 1..=order {
        m[n] = (1..=n)
            .map(|k| binomial_coeff(n - 1, k - 1) * cumulants[k] * m[n - k])
            .sum();
    }
    m
}

/// Cumulants from raw moments (inverse of [`moments_from_cumulants`]).
pub fn cumulants_from_moments(moments: &[f64]) -> Vec<f64> {
    let order = moments.len().saturating_sub(1);
    let mut kappa = vec![0.0; order + 1];
    for n in 1..=order {
        let lower: f64 = (1..n)
            .map(|k| binomial_coeff(n - 1, k - 1) * kappa[k] * moments[n - k])
            .sum();
        kappa[n] = moments[n] - lower;
    }
    kappa
}

pub fn gcd_u64(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}
