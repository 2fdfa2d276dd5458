//! Kernels of decomposable statistics and their centering.
//!
//! A decomposable statistic is R = Σ_m f_m(η_m). Centering splits each
//! kernel into its mean, a common linear regression on the cell frequency
//! (slope γ_N) and a residual g_m that is orthogonal to the cell total in
//! aggregate. The residual's joint moments with the standardized frequency
//! drive the expansion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{cumulants_from_moments, moments_from_cumulants};
use crate::urn::GumSpec;

/// Highest total order i + j of the stored joint moments E g^i ξ̃^j.
pub const JOINT_ORDER: usize = 6;

/// A finite discrete increment law for compound-sum kernels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementLaw {
    pub support: Vec<f64>,
    pub probs: Vec<f64>,
}

impl IncrementLaw {
    pub fn new(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        let law = IncrementLaw { support, probs };
        law.validate()?;
        Ok(law)
    }

    /// A point mass at `y`.
    pub fn point(y: f64) -> Self {
        IncrementLaw {
            support: vec![y],
            probs: vec![1.0],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.support.is_empty() || self.support.len() != self.probs.len() {
            return Err(Error::InvalidInput(
                "increment law needs matching, non-empty support and probs".into(),
            ));
        }
        if self.probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite())
            || self.support.iter().any(|y| !y.is_finite())
        {
            return Err(Error::InvalidInput("increment law has invalid entries".into()));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "increment probabilities sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    /// Raw moments E Y^r for r = 0..=order.
    pub fn raw_moments(&self, order: usize) -> Vec<f64> {
        (0..=order)
            .map(|r| {
                self.support
                    .iter()
                    .zip(&self.probs)
                    .map(|(y, p)| p * y.powi(r as i32))
                    .sum()
            })
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.raw_moments(1)[1]
    }

    /// Moments E(Y − c)^r for r = 0..=order.
    pub fn moments_about(&self, c: f64, order: usize) -> Vec<f64> {
        (0..=order)
            .map(|r| {
                self.support
                    .iter()
                    .zip(&self.probs)
                    .map(|(y, p)| p * (y - c).powi(r as i32))
                    .sum()
            })
            .collect()
    }

    /// Law of the sum of `count` independent copies, with equal values
    /// merged (relative tolerance 1e-12).
    pub fn convolution_power(&self, count: usize) -> Vec<(f64, f64)> {
        let mut acc = vec![(0.0, 1.0)];
        for _ in 0..count {
            let mut next: Vec<(f64, f64)> = Vec::with_capacity(acc.len() * self.support.len());
            for &(v, pv) in &acc {
                for (y, py) in self.support.iter().zip(&self.probs) {
                    if *py > 0.0 {
                        next.push((v + y, pv * py));
                    }
                }
            }
            next.sort_by(|a, b| a.0.total_cmp(&b.0));
            acc = merge_close(next);
        }
        acc
    }
}

fn merge_close(sorted: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
    for (v, p) in sorted {
        match out.last_mut() {
            Some(last) if (v - last.0).abs() <= 1e-12 * v.abs().max(1.0) => last.1 += p,
            _ => out.push((v, p)),
        }
    }
    out
}

/// The kernel functions f_m of a decomposable statistic.
#[derive(Clone, Debug, PartialEq)]
pub enum Kernel {
    /// Dense value tables indexed from 0. A single table is shared by all
    /// cells.
    Tables(Vec<Vec<f64>>),
    /// f(x) = x^k.
    Power(u32),
    /// f(x) = 1{x = r}.
    Indicator(u64),
    /// f_m(j) = sum of j i.i.d. increments drawn from the cell's law.
    Compound(Vec<IncrementLaw>),
}

/// JSON shape of a kernel document.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelConfig {
    Builtin {
        builtin: String,
        #[serde(default)]
        k: Option<u32>,
        #[serde(default)]
        r: Option<u64>,
    },
    Tables {
        tables: Vec<Vec<f64>>,
    },
    Compound {
        compound: Vec<IncrementLaw>,
    },
}

/// Value of the kernel at one frequency: a number, or a compound sum.
#[derive(Clone, Copy, Debug)]
pub enum KernelValue<'a> {
    Point(f64),
    Compound { law: &'a IncrementLaw, count: usize },
}

impl<'a> KernelValue<'a> {
    /// Conditional mean of f given the frequency.
    pub fn mean(&self) -> f64 {
        match *self {
            KernelValue::Point(v) => v,
            KernelValue::Compound { law, count } => count as f64 * law.mean(),
        }
    }

    /// E[(f − c)^i] for i = 0..=order. Compound sums use their cumulants
    /// (count times the increment cumulants), never their support.
    pub fn moments_about(&self, c: f64, order: usize) -> Vec<f64> {
        match *self {
            KernelValue::Point(v) => {
                let d = v - c;
                let mut out = Vec::with_capacity(order + 1);
                let mut acc = 1.0;
                for _ in 0..=order {
                    out.push(acc);
                    acc *= d;
                }
                out
            }
            KernelValue::Compound { law, count } => {
                let kappa_y = cumulants_from_moments(&law.raw_moments(order));
                let mut kappa: Vec<f64> = kappa_y.iter().map(|k| count as f64 * k).collect();
                if order >= 1 {
                    kappa[1] -= c;
                }
                moments_from_cumulants(&kappa)
            }
        }
    }
}

impl Kernel {
    pub fn from_config(cfg: &KernelConfig) -> Result<Self> {
        match cfg {
            KernelConfig::Builtin { builtin, k, r } => match builtin.as_str() {
                "power" => Ok(Kernel::Power(k.ok_or_else(|| {
                    Error::InvalidInput("power kernel needs \"k\"".into())
                })?)),
                "indicator" => Ok(Kernel::Indicator(r.ok_or_else(|| {
                    Error::InvalidInput("indicator kernel needs \"r\"".into())
                })?)),
                other => Err(Error::InvalidInput(format!("unknown builtin kernel {other:?}"))),
            },
            KernelConfig::Tables { tables } => {
                if tables.is_empty() {
                    return Err(Error::InvalidInput("empty kernel tables".into()));
                }
                Ok(Kernel::Tables(tables.clone()))
            }
            KernelConfig::Compound { compound } => {
                for law in compound {
                    law.validate()?;
                }
                Ok(Kernel::Compound(compound.clone()))
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: KernelConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::from_config(&cfg)
    }

    pub fn config(&self) -> KernelConfig {
        match self {
            Kernel::Tables(t) => KernelConfig::Tables { tables: t.clone() },
            Kernel::Power(k) => KernelConfig::Builtin {
                builtin: "power".into(),
                k: Some(*k),
                r: None,
            },
            Kernel::Indicator(r) => KernelConfig::Builtin {
                builtin: "indicator".into(),
                k: None,
                r: Some(*r),
            },
            Kernel::Compound(c) => KernelConfig::Compound { compound: c.clone() },
        }
    }

    /// Checks that the kernel is defined on x = 0..=upto for cell `m` of a
    /// model with `cells` cells.
    pub fn check_support(&self, m: usize, cells: usize, upto: usize) -> Result<()> {
        match self {
            Kernel::Tables(t) => {
                if t.len() != 1 && t.len() != cells {
                    return Err(Error::InvalidInput(format!(
                        "kernel has {} tables for {} cells",
                        t.len(),
                        cells
                    )));
                }
                let table = if t.len() == 1 { &t[0] } else { &t[m] };
                if table.len() <= upto {
                    return Err(Error::SupportTooShort {
                        cell: m,
                        len: table.len(),
                        needed: upto + 1,
                    });
                }
                if let Some(x) = table[..=upto].iter().position(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "kernel table for cell {m} is not finite at {x}"
                    )));
                }
                Ok(())
            }
            Kernel::Compound(laws) => {
                if laws.len() != 1 && laws.len() != cells {
                    return Err(Error::InvalidInput(format!(
                        "kernel has {} increment laws for {} cells",
                        laws.len(),
                        cells
                    )));
                }
                Ok(())
            }
            Kernel::Power(_) | Kernel::Indicator(_) => Ok(()),
        }
    }

    /// f_m(x). Callers must have run [`Kernel::check_support`].
    pub fn value(&self, m: usize, x: usize) -> KernelValue<'_> {
        match self {
            Kernel::Tables(t) => {
                let table = if t.len() == 1 { &t[0] } else { &t[m] };
                KernelValue::Point(table[x])
            }
            Kernel::Power(k) => KernelValue::Point((x as f64).powi(*k as i32)),
            Kernel::Indicator(r) => KernelValue::Point(if x as u64 == *r { 1.0 } else { 0.0 }),
            Kernel::Compound(laws) => {
                let law = if laws.len() == 1 { &laws[0] } else { &laws[m] };
                KernelValue::Compound { law, count: x }
            }
        }
    }

    pub fn is_compound(&self) -> bool {
        matches!(self, Kernel::Compound(_))
    }
}

/// Per-cell centering data.
#[derive(Clone, Debug)]
pub struct CenteredCell {
    /// Eξ_m.
    pub mean: f64,
    /// P{ξ_m = x} for x = 0..=truncation.
    pub pmf: Vec<f64>,
    /// E f_m(ξ_m).
    pub kernel_mean: f64,
    /// The part of f_m removed by centering: E f_m + γ_N (x − Eξ_m).
    /// g_m(x) = f_m(x) − shift[x].
    pub shift: Vec<f64>,
    /// E g_m(ξ_m)^i (ξ_m − Eξ_m)^j, indexed [i][j], for i + j ≤ 6.
    pub joint: [[f64; JOINT_ORDER + 1]; JOINT_ORDER + 1],
}

/// A decomposable statistic centered against its urn model.
#[derive(Clone, Debug)]
pub struct CenteredStat {
    pub gum: GumSpec,
    pub kernel: Kernel,
    pub tail_eps: f64,
    /// Λ_N = Σ E f_m(ξ_m).
    pub lambda_n: f64,
    /// γ_N = Σ cov(f_m, ξ_m) / B_N².
    pub gamma_n: f64,
    /// σ_N² = Σ Var g_m(ξ_m).
    pub sigma2_n: f64,
    pub cells: Vec<CenteredCell>,
}

/// Residuals of the two orthogonality identities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Orthogonality {
    pub residual_mean: f64,
    pub residual_cov: f64,
}

/// Center a kernel against an urn model.
pub fn center(gum: &GumSpec, kernel: &Kernel, tail_eps: f64) -> Result<CenteredStat> {
    if !(tail_eps > 0.0 && tail_eps <= 1e-6) {
        return Err(Error::InvalidInput(format!("tail_eps {tail_eps} outside (0, 1e-6]")));
    }
    if !(gum.b2_n > 0.0) {
        return Err(Error::DegenerateStatistic {
            sigma2: 0.0,
            scale: 0.0,
        });
    }
    let n_cells = gum.num_cells();
    let mut cells = Vec::with_capacity(n_cells);
    let mut var_x_sum = 0.0;
    let mut cov_sum = 0.0;
    let mut lambda_n = 0.0;
    let mut var_f_sum = 0.0;
    for (m, law) in gum.cells.iter().enumerate() {
        let upto = law.truncation_point(tail_eps);
        kernel.check_support(m, n_cells, upto)?;
        let pmf = law.pmf_table(upto);
        let mean = law.mean();
        let mut ef = 0.0;
        for (x, p) in pmf.iter().enumerate() {
            ef += p * kernel.value(m, x).mean();
        }
        // Covariance and variance over the same truncated support, so that
        // the regression residual is orthogonal to ξ to rounding error.
        let mut cov = 0.0;
        for (x, p) in pmf.iter().enumerate() {
            let dx = x as f64 - mean;
            cov += p * (kernel.value(m, x).mean() - ef) * dx;
            var_x_sum += p * dx * dx;
        }
        let mut ef2 = 0.0;
        for (x, p) in pmf.iter().enumerate() {
            ef2 += p * kernel.value(m, x).moments_about(ef, 2)[2];
        }
        var_f_sum += ef2;
        lambda_n += ef;
        cov_sum += cov;
        cells.push(CenteredCell {
            mean,
            pmf,
            kernel_mean: ef,
            shift: Vec::new(),
            joint: [[0.0; JOINT_ORDER + 1]; JOINT_ORDER + 1],
        });
    }
    let gamma_n = cov_sum / var_x_sum;

    let mut sigma2_n = 0.0;
    for (m, cell) in cells.iter_mut().enumerate() {
        cell.shift = (0..cell.pmf.len())
            .map(|x| cell.kernel_mean + gamma_n * (x as f64 - cell.mean))
            .collect();
        let mut joint = [[0.0; JOINT_ORDER + 1]; JOINT_ORDER + 1];
        for (x, &p) in cell.pmf.iter().enumerate() {
            let g_moments = kernel.value(m, x).moments_about(cell.shift[x], JOINT_ORDER);
            let dx = x as f64 - cell.mean;
            for (i, gi) in g_moments.iter().enumerate() {
                let mut dxj = 1.0;
                for slot in joint[i].iter_mut().take(JOINT_ORDER + 1 - i) {
                    *slot += p * gi * dxj;
                    dxj *= dx;
                }
            }
        }
        cell.joint = joint;
        sigma2_n += joint[2][0];
    }

    if !(sigma2_n > 1e-14 * var_f_sum.max(f64::MIN_POSITIVE)) {
        return Err(Error::DegenerateStatistic {
            sigma2: sigma2_n,
            scale: var_f_sum,
        });
    }

    Ok(CenteredStat {
        gum: gum.clone(),
        kernel: kernel.clone(),
        tail_eps,
        lambda_n,
        gamma_n,
        sigma2_n,
        cells,
    })
}

impl CenteredStat {
    pub fn sigma_n(&self) -> f64 {
        self.sigma2_n.sqrt()
    }

    pub fn b_n(&self) -> f64 {
        self.gum.b_n()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// Σ_m E g_m^i ξ̃_m^j.
    pub fn joint_sum(&self, i: usize, j: usize) -> f64 {
        self.cells.iter().map(|c| c.joint[i][j]).sum()
    }

    /// Normalized joint moment α_{i,j,N} = N^{(i+j)/2 − 1} Σ_m E (g_m/σ_N)^i (ξ̃_m/B_N)^j,
    /// i.e. the average of E ĝ_m^i ξ̂_m^j with the hatted per-cell scaling.
    pub fn joint_alpha(&self, i: usize, j: usize) -> Result<f64> {
        if i + j > JOINT_ORDER {
            return Err(Error::OrderTooHigh {
                order: i + j,
                max: JOINT_ORDER,
            });
        }
        let n = self.num_cells() as f64;
        let scale = n.powf((i + j) as f64 / 2.0 - 1.0)
            / (self.sigma_n().powi(i as i32) * self.b_n().powi(j as i32));
        Ok(scale * self.joint_sum(i, j))
    }

    /// Per-cell hatted moment α̂_{ijm} = E ĝ_m^i ξ̂_m^j.
    pub fn cell_alpha(&self, m: usize, i: usize, j: usize) -> f64 {
        let n = self.num_cells() as f64;
        n.powf((i + j) as f64 / 2.0) * self.cells[m].joint[i][j]
            / (self.sigma_n().powi(i as i32) * self.b_n().powi(j as i32))
    }

    /// N^{-1} Σ_m α̂_{a,m} α̂_{b,m} for two index pairs.
    pub fn pair_sum(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let n = self.num_cells();
        (0..n)
            .map(|m| self.cell_alpha(m, a.0, a.1) * self.cell_alpha(m, b.0, b.1))
            .sum::<f64>()
            / n as f64
    }

    /// The two orthogonality residuals Σ E g_m and Σ cov(g_m, ξ_m),
    /// computed from the stored per-cell moments.
    pub fn check_orthogonality(&self) -> Orthogonality {
        Orthogonality {
            residual_mean: self.joint_sum(1, 0),
            residual_cov: self.joint_sum(1, 1),
        }
    }

    /// Deterministic residual g_m(x) on the truncated support, when the
    /// kernel is not a compound sum.
    pub fn g_value(&self, m: usize, x: usize) -> Option<f64> {
        if x >= self.cells.get(m)?.shift.len() {
            return None;
        }
        match self.kernel.value(m, x) {
            KernelValue::Point(v) => Some(v - self.cells[m].shift[x]),
            KernelValue::Compound { .. } => None,
        }
    }

    /// Law of g_m(ξ_m) on the truncated support: (value, probability)
    /// pairs. Compound kernels are expanded by convolution.
    pub fn residual_law(&self, m: usize) -> Vec<(f64, f64)> {
        let cell = &self.cells[m];
        let mut out = Vec::new();
        for (x, &p) in cell.pmf.iter().enumerate() {
            match self.kernel.value(m, x) {
                KernelValue::Point(v) => out.push((v - cell.shift[x], p)),
                KernelValue::Compound { law, count } => {
                    for (v, q) in law.convolution_power(count) {
                        out.push((v - cell.shift[x], p * q));
                    }
                }
            }
        }
        out
    }
}
