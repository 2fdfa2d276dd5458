//! Ground truth for the expansions.
//!
//! * [`exact_pmf`] convolves the joint law of (f_m(ξ_m), ξ_m) cell by cell
//!   and keeps the slice Σξ = n.
//! * [`local_prob`] is the one-dimensional version of the same convolution.
//! * [`conditional_charfn`] evaluates the conditional characteristic
//!   function as a ratio of two τ-integrals of the unconditional one.
//! * [`sample`] draws the conditioned frequencies directly.

use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Hypergeometric};
use rayon::prelude::*;
use serde::Serialize;

use crate::decomposable::{CenteredStat, Kernel, KernelValue};
use crate::edgeworth::{ExpansionResult, Lattice};
use crate::error::{Error, Result};
use crate::numeric::gcd_u64;
use crate::urn::{Family, GumSpec};

/// Default cap on the number of (value, k) states held by the DP.
pub const DEFAULT_STATE_BUDGET: usize = 10_000_000;

/// Options of the exact convolution.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ExactOptions {
    /// Cell supports are cut where the upper tail drops below this.
    pub tail_eps: f64,
    /// Value quantum. `None` detects it from the kernel values; a given
    /// quantum bins values to the nearest multiple.
    pub q_v: Option<f64>,
    pub budget: usize,
    /// States with joint probability below this are dropped from the ends
    /// of each DP row.
    pub prune_eps: f64,
}

impl Default for ExactOptions {
    fn default() -> Self {
        ExactOptions {
            tail_eps: 1e-14,
            q_v: None,
            budget: DEFAULT_STATE_BUDGET,
            prune_eps: 1e-24,
        }
    }
}

impl ExactOptions {
    pub fn with_tail_eps(tail_eps: f64) -> Self {
        ExactOptions {
            tail_eps,
            ..Self::default()
        }
    }
}

/// A finite distribution over statistic values.
#[derive(Clone, Debug, Serialize)]
pub struct ExactDist {
    /// Lattice offset z₀ (0 when `span` is 0).
    pub offset: f64,
    /// Lattice span h; 0 when the values are not lattice-regular.
    pub span: f64,
    /// Sorted (value, probability) pairs.
    pub values: Vec<(f64, f64)>,
    /// Σ probabilities after normalization.
    pub total_prob_check: f64,
    /// P{ξ₁ + ⋯ + ξ_N = n} before conditioning (exact DP only).
    pub local_prob: Option<f64>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
}

impl ExactDist {
    fn from_sorted(values: Vec<(f64, f64)>) -> Self {
        let total: f64 = values.iter().map(|v| v.1).sum();
        let values: Vec<(f64, f64)> = values.into_iter().map(|(z, p)| (z, p / total)).collect();
        let total_prob_check = values.iter().map(|v| v.1).sum();
        let (offset, span) = detect_lattice(&values);
        ExactDist {
            offset,
            span,
            values,
            total_prob_check,
            local_prob: None,
            seed: None,
            reps: None,
        }
    }

    pub fn lattice(&self) -> Option<Lattice> {
        (self.span > 0.0).then(|| Lattice::new(self.offset, self.span))
    }

    /// P{R ≤ z}.
    pub fn cdf(&self, z: f64) -> f64 {
        let k = self.values.partition_point(|v| v.0 <= z);
        self.values[..k].iter().map(|v| v.1).sum::<f64>().min(1.0)
    }

    /// P{R < z}.
    pub fn cdf_left(&self, z: f64) -> f64 {
        let k = self.values.partition_point(|v| v.0 < z);
        self.values[..k].iter().map(|v| v.1).sum::<f64>().min(1.0)
    }

    /// Cumulative probabilities aligned with `values`.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.values
            .iter()
            .map(|v| {
                acc += v.1;
                acc.min(1.0)
            })
            .collect()
    }

    pub fn prob(&self, z: f64) -> f64 {
        let tol = 1e-9 * z.abs().max(1.0);
        let k = self.values.partition_point(|v| v.0 < z - tol);
        match self.values.get(k) {
            Some(&(v, p)) if (v - z).abs() <= tol => p,
            _ => 0.0,
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|(z, p)| z * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|(z, p)| p * (z - m).powi(2)).sum()
    }

    /// Σ_z P{R = z} e^{it(z − center)/scale}.
    pub fn charfn(&self, t: f64, center: f64, scale: f64) -> Complex64 {
        self.values
            .iter()
            .map(|&(z, p)| Complex64::from_polar(p, t * (z - center) / scale))
            .sum()
    }

    /// CSV with a header row and 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,prob\n");
        for (z, p) in &self.values {
            out.push_str(&format!("{},{}\n", fmt17(*z), fmt17(*p)));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("ExactDist serializes")
    }
}

/// Float formatting used for every machine-readable output.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Finds q with every value an integer multiple of q, trying q = d_min / k
/// for small k. Returns the quantum refined by the gcd of the multiples.
fn detect_quantum(values: &[f64]) -> Option<f64> {
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let nonzero: Vec<f64> = values
        .iter()
        .copied()
        .filter(|v| v.abs() > 1e-12 * scale.max(1.0))
        .collect();
    let Some(dmin) = nonzero.iter().map(|v| v.abs()).min_by(f64::total_cmp) else {
        return Some(1.0);
    };
    for den in 1..=64u32 {
        let q = dmin / den as f64;
        let ok = nonzero.iter().all(|v| {
            let r = v / q;
            (r - r.round()).abs() <= 1e-9 * r.abs().max(1.0)
        });
        if ok {
            let g = nonzero
                .iter()
                .fold(0u64, |g, v| gcd_u64(g, (v / q).round().abs() as u64));
            return Some(q * g.max(1) as f64);
        }
    }
    None
}

/// Offset and span of a sorted support; span 0 if it is not lattice-regular.
fn detect_lattice(values: &[(f64, f64)]) -> (f64, f64) {
    let Some(&(first, _)) = values.first() else {
        return (0.0, 0.0);
    };
    if values.len() == 1 {
        return (first, 0.0);
    }
    let diffs: Vec<f64> = values.iter().map(|v| v.0 - first).collect();
    match detect_quantum(&diffs) {
        Some(h) => {
            // Offset reduced into [0, h).
            let offset = first - (first / h).floor() * h;
            let offset = if (offset - h).abs() <= 1e-9 * h { 0.0 } else { offset };
            (offset, h)
        }
        None => (0.0, 0.0),
    }
}

/// One row of the DP: probabilities of consecutive value indices.
#[derive(Clone, Debug, Default)]
struct Row {
    low: i64,
    probs: Vec<f64>,
}

impl Row {
    fn mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Drops end entries below `eps`, returning the dropped mass.
    fn trim(&mut self, eps: f64) -> f64 {
        let start = self.probs.iter().position(|&p| p >= eps);
        let Some(start) = start else {
            let m = self.mass();
            self.probs.clear();
            return m;
        };
        let end = self.probs.iter().rposition(|&p| p >= eps).unwrap() + 1;
        let dropped: f64 =
            self.probs[..start].iter().sum::<f64>() + self.probs[end..].iter().sum::<f64>();
        self.probs.truncate(end);
        self.probs.drain(..start);
        self.low += start as i64;
        dropped
    }
}

/// Per-cell contribution: for each frequency x, P{ξ = x} and the law of the
/// reduced kernel value as (index, probability) pairs.
struct CellTable {
    pmf: Vec<f64>,
    /// P{n < ξ ≤ truncation point}: mass that can never fit under n.
    beyond_n: f64,
    values: Vec<Vec<(i64, f64)>>,
}

/// Final state of the exact convolution.
#[derive(Clone, Debug)]
pub struct JointGrid {
    /// Value quantum.
    pub q_v: f64,
    /// Statistic value at index 0 on the slice Σξ = n.
    pub base: f64,
    /// Unconditional joint probabilities P{Σξ = n, R = base + q_v·i}.
    pub slice: Vec<(i64, f64)>,
    /// Mass removed because the running total could no longer reach n.
    pub dropped_total_mass: f64,
    /// Mass removed by row-end trimming.
    pub dropped_prune_mass: f64,
    /// Π_m P{ξ_m ≤ truncation point}.
    pub truncated_mass: f64,
    /// Largest number of states held at once.
    pub peak_states: usize,
}

impl JointGrid {
    /// Σ of the slice Σξ = n, i.e. P{ζ_N = n} under the truncation.
    pub fn slice_mass(&self) -> f64 {
        self.slice.iter().map(|v| v.1).sum()
    }
}

fn cell_tables(
    gum: &GumSpec,
    kernel: &Kernel,
    opts: &ExactOptions,
) -> Result<(Vec<CellTable>, f64, f64)> {
    let n = gum.n as usize;
    let cells = gum.num_cells();
    // Raw values per cell and frequency.
    let mut raw: Vec<(Vec<f64>, Vec<Vec<(f64, f64)>>)> = Vec::with_capacity(cells);
    let mut beyond: Vec<f64> = Vec::with_capacity(cells);
    for (m, law) in gum.cells.iter().enumerate() {
        let full = law.truncation_point(opts.tail_eps);
        let upto = full.min(n);
        kernel.check_support(m, cells, upto)?;
        let mut pmf = law.pmf_table(full);
        beyond.push(pmf[upto + 1..].iter().sum());
        pmf.truncate(upto + 1);
        let mut values = Vec::with_capacity(upto + 1);
        let mut conv: Vec<(f64, f64)> = vec![(0.0, 1.0)];
        for x in 0..=upto {
            match kernel.value(m, x) {
                KernelValue::Point(v) => values.push(vec![(v, 1.0)]),
                KernelValue::Compound { law: inc, .. } => {
                    if x > 0 {
                        conv = convolve_law(&conv, &inc.support, &inc.probs);
                    }
                    values.push(conv.clone());
                }
            }
        }
        raw.push((pmf, values));
    }

    // Common slope removed from every point kernel: Σ c·ξ_m = c·n.
    let slope = if kernel.is_compound() {
        0.0
    } else {
        match raw.first() {
            Some((_, v)) if v.len() > 1 => v[1][0].0 - v[0][0].0,
            _ => 0.0,
        }
    };
    let mut base = slope * n as f64;
    let mut reduced: Vec<Vec<Vec<(f64, f64)>>> = Vec::with_capacity(cells);
    for (_, values) in &raw {
        let f0 = if kernel.is_compound() { 0.0 } else { values[0][0].0 };
        base += f0;
        reduced.push(
            values
                .iter()
                .enumerate()
                .map(|(x, vs)| {
                    vs.iter()
                        .map(|&(v, p)| (v - f0 - slope * x as f64, p))
                        .collect()
                })
                .collect(),
        );
    }

    let q = match opts.q_v {
        Some(q) if q > 0.0 => q,
        Some(q) => return Err(Error::InvalidInput(format!("value quantum {q} must be positive"))),
        None => {
            let all: Vec<f64> = reduced.iter().flatten().flatten().map(|v| v.0).collect();
            detect_quantum(&all).ok_or_else(|| {
                Error::NonRepresentableValues(
                    "no common quantum found; supply one to bin the values".into(),
                )
            })?
        }
    };

    let tables = raw
        .into_iter()
        .zip(reduced)
        .zip(beyond)
        .map(|(((pmf, _), red), beyond_n)| {
            let values = red
                .into_iter()
                .map(|vs| {
                    let mut idx: Vec<(i64, f64)> =
                        vs.iter().map(|&(v, p)| ((v / q).round() as i64, p)).collect();
                    idx.sort_by_key(|e| e.0);
                    idx.dedup_by(|b, a| {
                        if a.0 == b.0 {
                            a.1 += b.1;
                            true
                        } else {
                            false
                        }
                    });
                    idx
                })
                .collect();
            CellTable {
                pmf,
                beyond_n,
                values,
            }
        })
        .collect();
    Ok((tables, q, base))
}

fn convolve_law(acc: &[(f64, f64)], support: &[f64], probs: &[f64]) -> Vec<(f64, f64)> {
    let mut next: Vec<(f64, f64)> = Vec::with_capacity(acc.len() * support.len());
    for &(v, pv) in acc {
        for (y, py) in support.iter().zip(probs) {
            if *py > 0.0 {
                next.push((v + y, pv * py));
            }
        }
    }
    next.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(next.len());
    for (v, p) in next {
        match out.last_mut() {
            Some(last) if (v - last.0).abs() <= 1e-12 * v.abs().max(1.0) => last.1 += p,
            _ => out.push((v, p)),
        }
    }
    out
}

/// Run the convolution and return the slice Σξ = n with bookkeeping.
pub fn exact_joint(gum: &GumSpec, kernel: &Kernel, opts: &ExactOptions) -> Result<JointGrid> {
    if !(opts.tail_eps > 0.0 && opts.tail_eps <= 1e-6) {
        return Err(Error::InvalidInput(format!(
            "tail_eps {} outside (0, 1e-6]",
            opts.tail_eps
        )));
    }
    let n = gum.n as usize;
    let (tables, q_v, base) = cell_tables(gum, kernel, opts)?;
    let truncated_mass: f64 = tables
        .iter()
        .map(|t| t.pmf.iter().sum::<f64>() + t.beyond_n)
        .product();

    // Largest total the cells after m can still add.
    let mut reach_after = vec![0usize; tables.len() + 1];
    for m in (0..tables.len()).rev() {
        reach_after[m] = reach_after[m + 1] + tables[m].pmf.len() - 1;
    }

    let mut rows: Vec<Row> = vec![Row::default(); n + 1];
    rows[0] = Row {
        low: 0,
        probs: vec![1.0],
    };
    let mut dropped_total_mass = 0.0;
    let mut dropped_prune_mass = 0.0;
    let mut peak_states = 1usize;

    for (m, cell) in tables.iter().enumerate() {
        let min_k = n.saturating_sub(reach_after[m + 1]);
        // Extent of every target row.
        let mut extent: Vec<Option<(i64, i64)>> = vec![None; n + 1];
        for (k, row) in rows.iter().enumerate() {
            if row.probs.is_empty() {
                continue;
            }
            let hi_row = row.low + row.probs.len() as i64 - 1;
            for (x, vals) in cell.values.iter().enumerate() {
                let kk = k + x;
                if kk > n {
                    break;
                }
                if kk < min_k || cell.pmf[x] == 0.0 {
                    continue;
                }
                let lo = row.low + vals[0].0;
                let hi = hi_row + vals[vals.len() - 1].0;
                extent[kk] = Some(match extent[kk] {
                    Some((a, b)) => (a.min(lo), b.max(hi)),
                    None => (lo, hi),
                });
            }
        }
        let states: usize = extent
            .iter()
            .flatten()
            .map(|(a, b)| (b - a + 1) as usize)
            .sum();
        if states > opts.budget {
            return Err(Error::StateBudgetExceeded {
                reached: states,
                budget: opts.budget,
            });
        }
        let mut next: Vec<Row> = extent
            .iter()
            .map(|e| match e {
                Some((a, b)) => Row {
                    low: *a,
                    probs: vec![0.0; (b - a + 1) as usize],
                },
                None => Row::default(),
            })
            .collect();
        for (k, row) in rows.iter().enumerate() {
            if row.probs.is_empty() {
                continue;
            }
            let row_mass = row.mass();
            dropped_total_mass += row_mass * cell.beyond_n;
            for (x, vals) in cell.values.iter().enumerate() {
                let kk = k + x;
                let px = cell.pmf[x];
                if kk > n || kk < min_k {
                    dropped_total_mass += row_mass * px;
                    continue;
                }
                if px == 0.0 {
                    continue;
                }
                let target = &mut next[kk];
                for &(w, pw) in vals {
                    let weight = px * pw;
                    let shift = (row.low + w - target.low) as usize;
                    let dst = &mut target.probs[shift..shift + row.probs.len()];
                    for (d, s) in dst.iter_mut().zip(&row.probs) {
                        *d += weight * s;
                    }
                }
            }
        }
        for row in next.iter_mut() {
            if !row.probs.is_empty() {
                dropped_prune_mass += row.trim(opts.prune_eps);
            }
        }
        peak_states = peak_states.max(states);
        rows = next;
    }

    let last = std::mem::take(&mut rows[n]);
    let slice = last
        .probs
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(i, p)| (last.low + i as i64, *p))
        .collect();
    Ok(JointGrid {
        q_v,
        base,
        slice,
        dropped_total_mass,
        dropped_prune_mass,
        truncated_mass,
        peak_states,
    })
}

/// Exact conditional law of R_N = Σ f_m(η_m).
pub fn exact_pmf(gum: &GumSpec, kernel: &Kernel, opts: &ExactOptions) -> Result<ExactDist> {
    let grid = exact_joint(gum, kernel, opts)?;
    let mass = grid.slice_mass();
    if !(mass > 0.0) {
        return Err(Error::InfeasibleTotal {
            n: gum.n,
            capacity: 0,
        });
    }
    let values: Vec<(f64, f64)> = grid
        .slice
        .iter()
        .map(|&(i, p)| (grid.base + grid.q_v * i as f64, p))
        .collect();
    let mut dist = ExactDist::from_sorted(values);
    dist.local_prob = Some(mass);
    Ok(dist)
}

/// P{ξ₁ + ⋯ + ξ_N = n} by one-dimensional convolution.
pub fn local_prob(gum: &GumSpec, tail_eps: f64) -> Result<f64> {
    if !(tail_eps > 0.0 && tail_eps <= 1e-6) {
        return Err(Error::InvalidInput(format!("tail_eps {tail_eps} outside (0, 1e-6]")));
    }
    let n = gum.n as usize;
    let mut acc = vec![0.0; n + 1];
    acc[0] = 1.0;
    for law in &gum.cells {
        let upto = law.truncation_point(tail_eps).min(n);
        let pmf = law.pmf_table(upto);
        let mut next = vec![0.0; n + 1];
        for (k, a) in acc.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (x, p) in pmf.iter().enumerate().take(n + 1 - k) {
                next[k + x] += a * p;
            }
        }
        acc = next;
    }
    Ok(acc[n])
}

/// P{ζ_N = n} by the trapezoid rule on (1/2π)∫ Π_m E e^{iτξ_m} e^{−iτn} dτ.
pub fn local_prob_fourier(gum: &GumSpec, points: usize) -> f64 {
    let n = gum.n as f64;
    let h = 2.0 * std::f64::consts::PI / points as f64;
    let sum: Complex64 = (0..points)
        .map(|j| {
            let tau = -std::f64::consts::PI + h * j as f64;
            let prod: Complex64 = gum.cells.iter().map(|c| c.charfn(tau)).product();
            prod * Complex64::from_polar(1.0, -tau * n)
        })
        .sum();
    sum.re / points as f64
}

/// Panel-doubling control for the Bartlett integrals.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct QuadSpec {
    pub initial_panels: usize,
    pub max_panels: usize,
    pub rel_tol: f64,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec {
            initial_panels: 64,
            max_panels: 1 << 20,
            rel_tol: 1e-8,
        }
    }
}

/// Per-cell data for the joint characteristic function E e^{isg + iτξ}.
enum CellCf {
    Point { pmf: Vec<f64>, g: Vec<f64> },
    Compound { pmf: Vec<f64>, shift: Vec<f64>, support: Vec<f64>, probs: Vec<f64> },
}

impl CellCf {
    /// Σ_x P{ξ = x} E[e^{i s g(x)}] e^{iτx}.
    fn eval(&self, s: f64, tau: f64) -> Complex64 {
        match self {
            CellCf::Point { pmf, g } => pmf
                .iter()
                .zip(g)
                .enumerate()
                .map(|(x, (p, gx))| Complex64::from_polar(*p, s * gx + tau * x as f64))
                .sum(),
            CellCf::Compound {
                pmf,
                shift,
                support,
                probs,
            } => {
                let phi_y: Complex64 = support
                    .iter()
                    .zip(probs)
                    .map(|(y, p)| Complex64::from_polar(*p, s * y))
                    .sum();
                let mut power = Complex64::new(1.0, 0.0);
                let mut acc = Complex64::new(0.0, 0.0);
                for (x, p) in pmf.iter().enumerate() {
                    acc += power * Complex64::from_polar(*p, tau * x as f64 - s * shift[x]);
                    power *= phi_y;
                }
                acc
            }
        }
    }
}

fn cell_cfs(centered: &CenteredStat) -> Vec<CellCf> {
    centered
        .cells
        .iter()
        .enumerate()
        .map(|(m, cell)| match &centered.kernel {
            Kernel::Compound(laws) => {
                let law = if laws.len() == 1 { &laws[0] } else { &laws[m] };
                CellCf::Compound {
                    pmf: cell.pmf.clone(),
                    shift: cell.shift.clone(),
                    support: law.support.clone(),
                    probs: law.probs.clone(),
                }
            }
            _ => CellCf::Point {
                pmf: cell.pmf.clone(),
                g: (0..cell.pmf.len())
                    .map(|x| centered.g_value(m, x).expect("point kernel"))
                    .collect(),
            },
        })
        .collect()
}

/// E[exp{it Σ g_m(η_m)/σ_N}] = Θ(t)/Θ(0), with
/// Θ(t) = ∫_{−π}^{π} Π_m E e^{i(t/σ_N)g_m(ξ_m) + iτξ_m} e^{−iτn} dτ.
pub fn conditional_charfn(centered: &CenteredStat, t: f64, quad: &QuadSpec) -> Result<Complex64> {
    if t == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let cfs = cell_cfs(centered);
    let s = t / centered.sigma_n();
    let n = centered.gum.n as f64;
    let integrand = |tau: f64| -> (Complex64, Complex64) {
        let mut num = Complex64::from_polar(1.0, -tau * n);
        let mut den = num;
        for cf in &cfs {
            num *= cf.eval(s, tau);
            den *= cf.eval(0.0, tau);
        }
        (num, den)
    };
    // Periodic trapezoid rule; doubling reuses the previous nodes.
    let pi = std::f64::consts::PI;
    let mut panels = quad.initial_panels.max(4);
    let mut sum_num = Complex64::new(0.0, 0.0);
    let mut sum_den = Complex64::new(0.0, 0.0);
    for j in 0..panels {
        let (a, b) = integrand(-pi + 2.0 * pi * j as f64 / panels as f64);
        sum_num += a;
        sum_den += b;
    }
    let mut prev = sum_num / sum_den;
    loop {
        let new_panels = panels * 2;
        let extra: Vec<(Complex64, Complex64)> = (0..panels)
            .into_par_iter()
            .map(|j| integrand(-pi + 2.0 * pi * (2 * j + 1) as f64 / new_panels as f64))
            .collect();
        for (a, b) in extra {
            sum_num += a;
            sum_den += b;
        }
        panels = new_panels;
        let cur = sum_num / sum_den;
        let change = (cur - prev).norm() / cur.norm().max(1e-300);
        if change <= quad.rel_tol || (cur - prev).norm() <= quad.rel_tol * 1e-4 {
            return Ok(cur);
        }
        if panels >= quad.max_panels {
            return Err(Error::QuadratureNotConverged { change, panels });
        }
        prev = cur;
    }
}

/// Number of reps per independently seeded block.
const SAMPLE_BLOCK: usize = 4096;

/// Worker-count cap from `URNEDGE_THREADS`, if set.
pub fn thread_cap() -> Option<usize> {
    std::env::var("URNEDGE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&k| k > 0)
}

/// Draw one frequency vector η from the conditioned model.
pub fn draw_frequencies<R: Rng + ?Sized>(gum: &GumSpec, rng: &mut R, out: &mut [u64]) {
    let cells = gum.num_cells();
    let mut remaining = gum.n;
    match gum.family {
        Family::Poisson => {
            let mut rest: f64 = gum.cells.iter().map(|c| c.mean()).sum();
            for (m, cell) in gum.cells.iter().enumerate() {
                let w = cell.mean();
                let x = if m + 1 == cells || remaining == 0 {
                    remaining
                } else {
                    let p = (w / rest).clamp(0.0, 1.0);
                    Binomial::new(remaining, p).expect("valid binomial").sample(rng)
                };
                out[m] = x;
                remaining -= x;
                rest -= w;
            }
        }
        Family::Binomial => {
            let mut pool: u64 = gum.cells.iter().map(|c| c.shape as u64).sum();
            for (m, cell) in gum.cells.iter().enumerate() {
                let w = cell.shape as u64;
                let x = if remaining == 0 {
                    0
                } else {
                    Hypergeometric::new(pool, w, remaining)
                        .expect("valid hypergeometric")
                        .sample(rng)
                };
                out[m] = x;
                remaining -= x;
                pool -= w;
            }
        }
        Family::NegBinomial => {
            // Pólya urn: each draw picks cell m with weight d_m + count_m.
            out.iter_mut().for_each(|x| *x = 0);
            let mut total: f64 = gum.cells.iter().map(|c| c.shape).sum();
            for _ in 0..gum.n {
                let mut r = rng.random::<f64>() * total;
                let mut pick = cells - 1;
                for (m, cell) in gum.cells.iter().enumerate() {
                    let w = cell.shape + out[m] as f64;
                    if r < w {
                        pick = m;
                        break;
                    }
                    r -= w;
                }
                out[pick] += 1;
                total += 1.0;
            }
        }
    }
}

/// Empirical law of R_N from `reps` direct draws of η.
///
/// Reps are split into fixed blocks seeded by (seed, block index), so the
/// result does not depend on the number of worker threads.
pub fn sample(gum: &GumSpec, kernel: &Kernel, reps: usize, seed: u64) -> Result<ExactDist> {
    if reps == 0 {
        return Err(Error::InvalidInput("reps must be at least 1".into()));
    }
    let cells = gum.num_cells();
    let n = gum.n as usize;
    kernel.check_support(0, cells, 0)?;
    if let Kernel::Tables(t) = kernel {
        for (m, table) in t.iter().enumerate() {
            let need = gum.cells.get(m).and_then(|c| c.max_support()).unwrap_or(n).min(n);
            if table.len() <= need {
                return Err(Error::SupportTooShort {
                    cell: m,
                    len: table.len(),
                    needed: need + 1,
                });
            }
        }
    }
    let samplers: Vec<Option<WeightedIndex<f64>>> = match kernel {
        Kernel::Compound(laws) => laws
            .iter()
            .map(|l| WeightedIndex::new(&l.probs).ok())
            .collect(),
        _ => Vec::new(),
    };

    let blocks = reps.div_ceil(SAMPLE_BLOCK);
    let run_block = |b: usize| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let count = SAMPLE_BLOCK.min(reps - b * SAMPLE_BLOCK);
        let mut eta = vec![0u64; cells];
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            draw_frequencies(gum, &mut rng, &mut eta);
            let mut r = 0.0;
            for (m, &x) in eta.iter().enumerate() {
                r += match kernel.value(m, x as usize) {
                    KernelValue::Point(v) => v,
                    KernelValue::Compound { law, count } => {
                        let idx = if samplers.len() == 1 { 0 } else { m };
                        let w = samplers[idx].as_ref().expect("valid increment law");
                        (0..count).map(|_| law.support[w.sample(&mut rng)]).sum()
                    }
                };
            }
            out.push(r);
        }
        out
    };
    let draws: Vec<Vec<f64>> = match thread_cap() {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::InvalidInput(e.to_string()))?
            .install(|| (0..blocks).into_par_iter().map(run_block).collect()),
        None => (0..blocks).into_par_iter().map(run_block).collect(),
    };
    let mut all: Vec<f64> = draws.into_iter().flatten().collect();
    all.sort_by(f64::total_cmp);
    let mut values: Vec<(f64, f64)> = Vec::new();
    let w = 1.0 / reps as f64;
    for v in all {
        match values.last_mut() {
            Some(last) if (v - last.0).abs() <= 1e-12 * v.abs().max(1.0) => last.1 += w,
            _ => values.push((v, w)),
        }
    }
    let mut dist = ExactDist::from_sorted(values);
    dist.seed = Some(seed);
    dist.reps = Some(reps);
    Ok(dist)
}

/// Half-width of the two-sided DKW band at confidence 1 − alpha.
pub fn dkw_halfwidth(reps: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * reps as f64)).sqrt()
}

/// sup_z |F̂(z) − F(z)| over the union of both supports.
pub fn ks_distance(empirical: &ExactDist, exact: &ExactDist) -> f64 {
    let mut zs: Vec<f64> = empirical
        .values
        .iter()
        .chain(&exact.values)
        .map(|v| v.0)
        .collect();
    zs.sort_by(f64::total_cmp);
    zs.dedup();
    zs.iter()
        .map(|&z| (empirical.cdf(z) - exact.cdf(z)).abs())
        .fold(0.0, f64::max)
}

/// Expansion value for P{R ≤ z(u)}, or P{R < z(u)} when `strict`.
/// On a lattice the sawtooth continuity terms are applied.
pub fn expansion_cdf(exp: &ExpansionResult, u: f64, lattice: Option<&Lattice>, strict: bool) -> f64 {
    match lattice {
        Some(lat) if strict => exp.lattice_cdf_strict(u, lat),
        Some(lat) => exp.lattice_cdf(u, lat),
        None => exp.cdf(u),
    }
}

/// sup-norm distance between the exact CDF and an expansion, checked at
/// every support point from both sides and, on a lattice, at the
/// mid-points between support points.
pub fn sup_cdf_error(exact: &ExactDist, exp: &ExpansionResult) -> f64 {
    let lat = exact.lattice();
    let lat = lat.as_ref();
    let mut worst: f64 = 0.0;
    for &(z, _) in &exact.values {
        let u = exp.u_of(z);
        worst = worst.max((exact.cdf(z) - expansion_cdf(exp, u, lat, false)).abs());
        worst = worst.max((exact.cdf_left(z) - expansion_cdf(exp, u, lat, true)).abs());
        if let Some(l) = lat {
            let um = exp.u_of(z + l.span / 2.0);
            worst = worst.max((exact.cdf(z) - expansion_cdf(exp, um, lat, false)).abs());
        }
    }
    worst
}
