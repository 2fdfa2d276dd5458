//! Expansion polynomials and their CDF / lattice evaluations.
//!
//! Polynomials live in the formal variables (it) and (iτ). The τ-variable is
//! eliminated by Gaussian integration, which turns (iτ)^b into He_b(x_N).
//! The normalized expansion W is then mapped to a CDF by replacing (it)^a
//! with (−1)^a d^a/du^a Φ(u) = −φ(u) He_{a−1}(u).

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::json;

use crate::decomposable::CenteredStat;
use crate::error::{Error, Result};
use crate::numeric::{binomial_coeff, hermite_all, normal_cdf, normal_pdf};

/// Σ c_{a,b} (it)^a (iτ)^b with real coefficients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ItPolynomial {
    coeffs: BTreeMap<(u32, u32), f64>,
}

impl ItPolynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn one() -> Self {
        Self::monomial(0, 0, 1.0)
    }

    pub fn monomial(a: u32, b: u32, c: f64) -> Self {
        let mut p = Self::zero();
        p.add_term(a, b, c);
        p
    }

    pub fn add_term(&mut self, a: u32, b: u32, c: f64) {
        if c != 0.0 {
            *self.coeffs.entry((a, b)).or_insert(0.0) += c;
        }
    }

    pub fn coeff(&self, a: u32, b: u32) -> f64 {
        self.coeffs.get(&(a, b)).copied().unwrap_or(0.0)
    }

    pub fn terms(&self) -> impl Iterator<Item = ((u32, u32), f64)> + '_ {
        self.coeffs.iter().map(|(k, v)| (*k, *v))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.values().all(|c| *c == 0.0)
    }

    /// (max a, max b) over nonzero coefficients.
    pub fn degrees(&self) -> (u32, u32) {
        self.terms()
            .filter(|(_, c)| *c != 0.0)
            .fold((0, 0), |(da, db), ((a, b), _)| (da.max(a), db.max(b)))
    }

    /// (min, max) total degree a + b over nonzero coefficients.
    pub fn total_degree_range(&self) -> Option<(u32, u32)> {
        let mut it = self.terms().filter(|(_, c)| *c != 0.0).map(|((a, b), _)| a + b);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), d| (lo.min(d), hi.max(d))))
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for ((a, b), c) in other.terms() {
            out.add_term(a, b, c);
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = Self::zero();
        for ((a, b), c) in self.terms() {
            out.add_term(a, b, c * s);
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for ((a1, b1), c1) in self.terms() {
            for ((a2, b2), c2) in other.terms() {
                out.add_term(a1 + a2, b1 + b2, c1 * c2);
            }
        }
        out
    }

    /// Value at t = 0 of a polynomial in (it) only, i.e. its (0, 0) term.
    pub fn constant_term(&self) -> f64 {
        self.coeff(0, 0)
    }
}

/// Replace every (iτ)^b by He_b(x_N).
pub fn tau_integrate(p: &ItPolynomial, x_n: f64) -> ItPolynomial {
    let (_, max_b) = p.degrees();
    let he = hermite_all(max_b as usize, x_n);
    let mut out = ItPolynomial::zero();
    for ((a, b), c) in p.terms() {
        out.add_term(a, 0, c * he[b as usize]);
    }
    out
}

/// The expansion polynomials P_0, P_1, P_2.
pub fn build_p(centered: &CenteredStat, k: usize) -> Result<ItPolynomial> {
    match k {
        0 => Ok(ItPolynomial::one()),
        1 => cubic_part(centered),
        2 => {
            let mut quartic = ItPolynomial::zero();
            for i in 0..=4u32 {
                let alpha = centered.joint_alpha(i as usize, 4 - i as usize)?;
                quartic.add_term(i, 4 - i, binomial_coeff(4, i as usize) * alpha);
            }
            // Σ_m (E(tĝ + τξ̂)²)², with i⁴ = 1 absorbed.
            let n = centered.num_cells();
            let mut squares = ItPolynomial::zero();
            for m in 0..n {
                let mut q = ItPolynomial::zero();
                q.add_term(2, 0, centered.cell_alpha(m, 2, 0));
                q.add_term(1, 1, 2.0 * centered.cell_alpha(m, 1, 1));
                q.add_term(0, 2, centered.cell_alpha(m, 0, 2));
                squares = squares.add(&q.mul(&q));
            }
            let p1 = cubic_part(centered)?;
            Ok(quartic
                .add(&squares.scale(-3.0 / n as f64))
                .scale(1.0 / 24.0)
                .add(&p1.mul(&p1).scale(0.5)))
        }
        _ => Err(Error::UnsupportedOrder { s: k + 3 }),
    }
}

fn cubic_part(centered: &CenteredStat) -> Result<ItPolynomial> {
    let mut p = ItPolynomial::zero();
    for i in 0..=3u32 {
        let alpha = centered.joint_alpha(i as usize, 3 - i as usize)?;
        p.add_term(i, 3 - i, binomial_coeff(3, i as usize) * alpha / 6.0);
    }
    Ok(p)
}

/// Expansion W_N^(s)(t, x_N) and the data needed to map it to the
/// statistic's scale.
#[derive(Clone, Debug)]
pub struct ExpansionResult {
    pub s: usize,
    pub x_n: f64,
    /// W as a polynomial in (it) only, with the N^{−m/2} weights applied.
    pub w: ItPolynomial,
    /// W split by order: `orders[m]` carries the N^{−m/2} part, m = 0..=s−3.
    pub orders: Vec<ItPolynomial>,
    /// The joint α_{i,j,N} with 3 ≤ i + j ≤ s − 1 that entered W.
    pub alphas: BTreeMap<(usize, usize), f64>,
    /// N^{−1} Σ_m of products of per-cell second moments:
    /// (20·20, 11·11, 20·02, 02·02, 20·11, 11·02).
    pub pair_sums: Option<[f64; 6]>,
    pub lambda_n: f64,
    pub gamma_n: f64,
    pub sigma_n: f64,
    pub b_n: f64,
    pub num_cells: usize,
}

/// Build W_N^(s) for s ∈ {3, 4, 5}.
pub fn build_w(centered: &CenteredStat, s: usize, x_n: f64) -> Result<ExpansionResult> {
    if !(3..=5).contains(&s) {
        return Err(Error::UnsupportedOrder { s });
    }
    let top = s - 3;
    let g: Vec<ItPolynomial> = (0..=top)
        .map(|k| build_p(centered, k).map(|p| tau_integrate(&p, x_n)))
        .collect::<Result<_>>()?;
    let g0: Vec<f64> = g.iter().map(ItPolynomial::constant_term).collect();

    // Coefficients of 1 / Σ_v N^{−v/2} G_v(0), expanded as a geometric series.
    let mut q = vec![1.0];
    for j in 1..=top {
        let qj = -(1..=j).map(|v| g0[v] * q[j - v]).sum::<f64>();
        q.push(qj);
    }

    let n = centered.num_cells() as f64;
    let mut orders = Vec::with_capacity(top + 1);
    for m in 0..=top {
        let mut term = ItPolynomial::zero();
        for v in 0..=m {
            term = term.add(&g[v].scale(q[m - v]));
        }
        orders.push(term.scale(n.powf(-(m as f64) / 2.0)));
    }
    let w = orders.iter().fold(ItPolynomial::zero(), |acc, o| acc.add(o));

    let mut alphas = BTreeMap::new();
    for order in 3..s {
        for i in 0..=order {
            alphas.insert((i, order - i), centered.joint_alpha(i, order - i)?);
        }
    }
    let pair_sums = (s == 5).then(|| {
        [
            centered.pair_sum((2, 0), (2, 0)),
            centered.pair_sum((1, 1), (1, 1)),
            centered.pair_sum((2, 0), (0, 2)),
            centered.pair_sum((0, 2), (0, 2)),
            centered.pair_sum((2, 0), (1, 1)),
            centered.pair_sum((1, 1), (0, 2)),
        ]
    });

    Ok(ExpansionResult {
        s,
        x_n,
        w,
        orders,
        alphas,
        pair_sums,
        lambda_n: centered.lambda_n,
        gamma_n: centered.gamma_n,
        sigma_n: centered.sigma_n(),
        b_n: centered.b_n(),
        num_cells: centered.num_cells(),
    })
}

/// A lattice offset + span·ℤ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Lattice {
    pub offset: f64,
    pub span: f64,
}

impl Lattice {
    pub fn new(offset: f64, span: f64) -> Self {
        Lattice { offset, span }
    }

    /// Position of `z` in lattice units.
    pub fn index(&self, z: f64) -> f64 {
        (z - self.offset) / self.span
    }

    pub fn contains(&self, z: f64) -> bool {
        let k = self.index(z);
        (k - k.round()).abs() <= 1e-9 * k.abs().max(1.0)
    }
}

/// S₁(y) = y − ⌊y⌋ − ½.
pub fn sawtooth1(y: f64) -> f64 {
    y - y.floor() - 0.5
}

/// S₂(θ) = ½(θ² − θ + 1/6) with θ the fractional part of `y`.
pub fn sawtooth2(y: f64) -> f64 {
    let th = y - y.floor();
    0.5 * (th * th - th + 1.0 / 6.0)
}

impl ExpansionResult {
    /// u-coordinate of a statistic value.
    pub fn u_of(&self, z: f64) -> f64 {
        (z - self.center()) / self.sigma_n
    }

    /// Statistic value at a u-coordinate.
    pub fn z_of(&self, u: f64) -> f64 {
        self.center() + u * self.sigma_n
    }

    fn center(&self) -> f64 {
        self.lambda_n + self.x_n * self.b_n * self.gamma_n
    }

    /// W restricted to orders 0..=m, i.e. the expansion with s = m + 3.
    pub fn truncated(&self, s: usize) -> Result<ExpansionResult> {
        if !(3..=self.s).contains(&s) {
            return Err(Error::UnsupportedOrder { s });
        }
        let mut out = self.clone();
        out.s = s;
        out.orders.truncate(s - 2);
        out.w = out.orders.iter().fold(ItPolynomial::zero(), |acc, o| acc.add(o));
        out.alphas.retain(|(i, j), _| i + j < s);
        if s < 5 {
            out.pair_sums = None;
        }
        Ok(out)
    }

    /// 𝕎^(s)(u, x_N).
    pub fn cdf(&self, u: f64) -> f64 {
        if u.is_infinite() {
            return if u > 0.0 { 1.0 } else { 0.0 };
        }
        let (max_a, _) = self.w.degrees();
        let he = hermite_all(max_a as usize, u);
        let mut corr = 0.0;
        for ((a, _), c) in self.w.terms() {
            if a >= 1 {
                corr -= c * he[a as usize - 1];
            }
        }
        normal_cdf(u) + normal_pdf(u) * corr
    }

    /// k-th derivative of 𝕎^(s) in u, k ≥ 1:
    /// (−1)^{k−1} φ(u) [He_{k−1}(u) + Σ_a c_a He_{a+k−1}(u)].
    pub fn cdf_derivative(&self, u: f64, k: usize) -> f64 {
        assert!(k >= 1, "derivative order must be at least 1");
        let (max_a, _) = self.w.degrees();
        let he = hermite_all(max_a as usize + k, u);
        let mut acc = he[k - 1];
        for ((a, _), c) in self.w.terms() {
            if a >= 1 {
                acc += c * he[a as usize + k - 1];
            }
        }
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        sign * normal_pdf(u) * acc
    }

    /// Lattice point mass (h/σ_N)·𝕎'(u_z).
    pub fn pmf(&self, z: f64, lattice: &Lattice) -> Result<f64> {
        if !lattice.contains(z) {
            return Err(Error::OffLattice {
                z,
                offset: lattice.offset,
                span: lattice.span,
            });
        }
        Ok(lattice.span / self.sigma_n * self.cdf_derivative(self.u_of(z), 1))
    }

    /// Continuity-corrected approximation of P{R ≤ z(u)} on a lattice.
    /// The sawtooth terms use the expansion one and two orders lower.
    pub fn lattice_cdf(&self, u: f64, lattice: &Lattice) -> f64 {
        self.lattice_cdf_at(u, lattice, false)
    }

    /// Continuity-corrected approximation of P{R < z(u)}.
    pub fn lattice_cdf_strict(&self, u: f64, lattice: &Lattice) -> f64 {
        self.lattice_cdf_at(u, lattice, true)
    }

    fn lattice_cdf_at(&self, u: f64, lattice: &Lattice, strict: bool) -> f64 {
        let y = lattice.index(self.z_of(u));
        let (s1, s2) = if strict && (y - y.round()).abs() <= 1e-9 * y.abs().max(1.0) {
            // Left limit at a lattice point: θ → 1.
            (0.5, 1.0 / 12.0)
        } else if (y - y.round()).abs() <= 1e-9 * y.abs().max(1.0) {
            (-0.5, 1.0 / 12.0)
        } else {
            (sawtooth1(y), sawtooth2(y))
        };
        let r = lattice.span / self.sigma_n;
        let mut value = self.cdf(u);
        if self.s >= 4 {
            let lower = self.truncated(self.s - 1).expect("lower order exists");
            value -= r * s1 * lower.cdf_derivative(u, 1);
        }
        if self.s >= 5 {
            let lowest = self.truncated(self.s - 2).expect("lower order exists");
            value += r * r * s2 * lowest.cdf_derivative(u, 2);
        }
        value
    }

    pub fn to_json(&self) -> serde_json::Value {
        let monomials: Vec<_> = self
            .w
            .terms()
            .map(|((a, _), c)| json!({"a": a, "coeff": c}))
            .collect();
        let alphas: Vec<_> = self
            .alphas
            .iter()
            .map(|((i, j), v)| json!({"i": i, "j": j, "value": v}))
            .collect();
        json!({
            "s": self.s,
            "x_N": self.x_n,
            "monomials": monomials,
            "alphas": alphas,
            "pair_sums": self.pair_sums,
            "Lambda_N": self.lambda_n,
            "gamma_N": self.gamma_n,
            "sigma_N": self.sigma_n,
            "B_N": self.b_n,
            "N": self.num_cells,
        })
    }
}

/// 𝕎^(s)(u, x_N).
pub fn cdf_expansion(result: &ExpansionResult, u: f64) -> f64 {
    result.cdf(u)
}

/// (h/σ_N)·(d/du)𝕎^(s)(u_z, x_N).
pub fn pmf_expansion(result: &ExpansionResult, z: f64, lattice: &Lattice) -> Result<f64> {
    result.pmf(z, lattice)
}

/// Continuity-corrected lattice CDF P{R ≤ z(u)}.
pub fn lattice_cdf_corrected(result: &ExpansionResult, u: f64, lattice: &Lattice) -> Result<f64> {
    if result.s < 4 {
        return Err(Error::UnsupportedOrder { s: result.s });
    }
    Ok(result.lattice_cdf(u, lattice))
}

/// Inputs of the closed three-term CDF at x_N = 0.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ThreeTermInputs {
    pub n: f64,
    pub a30: f64,
    pub a21: f64,
    pub a12: f64,
    pub a03: f64,
    pub a40: f64,
    pub a22: f64,
    /// N^{−1} Σ α̂²_{20m}.
    pub s20_20: f64,
    /// N^{−1} Σ α̂²_{11m}.
    pub s11_11: f64,
    /// N^{−1} Σ α̂_{20m} α̂_{02m}.
    pub s20_02: f64,
}

impl ThreeTermInputs {
    pub fn from_centered(c: &CenteredStat) -> Result<Self> {
        Ok(ThreeTermInputs {
            n: c.num_cells() as f64,
            a30: c.joint_alpha(3, 0)?,
            a21: c.joint_alpha(2, 1)?,
            a12: c.joint_alpha(1, 2)?,
            a03: c.joint_alpha(0, 3)?,
            a40: c.joint_alpha(4, 0)?,
            a22: c.joint_alpha(2, 2)?,
            s20_20: c.pair_sum((2, 0), (2, 0)),
            s11_11: c.pair_sum((1, 1), (1, 1)),
            s20_02: c.pair_sum((2, 0), (0, 2)),
        })
    }
}

/// Explicit three-term CDF expansion at x_N = 0, written out term by term.
/// The second group carries the N^{−1} weight of the second order.
pub fn three_term_cdf_direct(p: &ThreeTermInputs, u: f64) -> f64 {
    let phi = normal_pdf(u);
    let u2 = u * u;
    let first = (u2 - 1.0) / 6.0 * p.a30 - 0.5 * p.a12;
    let he5 = u.powi(5) - 10.0 * u.powi(3) + 15.0 * u;
    let he3 = u.powi(3) - 3.0 * u;
    let second = he5 / 72.0 * p.a30 * p.a30
        + he3 / 24.0
            * (p.a40 - 3.0 * p.s20_20 - 3.0 * p.a21 * p.a21 - 2.0 * p.a30 * p.a12)
        + u / 8.0
            * (3.0 * p.a12 * p.a12 + 2.0 * p.a21 * p.a03 - 2.0 * p.a22
                + 4.0 * p.s11_11
                + 2.0 * p.s20_02);
    normal_cdf(u) - phi / p.n.sqrt() * first - phi / p.n * second
}
