//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::time::Instant;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use urnedge::catalog::{chisq_closed_form, cross_check, dixon_closed_form, ClosedForm, SampleSumParams};
use urnedge::diagnostics::{gates, m_inf};
use urnedge::edgeworth::{three_term_cdf_direct, ThreeTermInputs};
use urnedge::numeric::normal_cdf;
use urnedge::oracle::{conditional_charfn, dkw_halfwidth, ks_distance, sample, QuadSpec};
use urnedge::{build_w, center, exact_pmf, ExactDist, ExactOptions, ExpansionResult, Family, GumSpec, IncrementLaw, Kernel};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ------------------------------------------------------------ shared helpers

/// Sup-norm distance between a lattice law and a CDF approximation, taken
/// over right limits at support points, left limits at support points and
/// mid-lattice points. `approx(u, strict)` approximates P{R ≤ z(u)} or,
/// when `strict`, P{R < z(u)}.
fn lattice_sup_error(exact: &ExactDist, exp: &ExpansionResult, approx: &dyn Fn(f64, bool) -> f64) -> f64 {
    let h = exact.span;
    let mut worst: f64 = 0.0;
    for &(z, _) in &exact.values {
        let u = exp.u_of(z);
        worst = worst.max((exact.cdf(z) - approx(u, false)).abs());
        worst = worst.max((exact.cdf_left(z) - approx(u, true)).abs());
        let um = exp.u_of(z + h / 2.0);
        worst = worst.max((exact.cdf(z) - approx(um, false)).abs());
    }
    worst
}

fn chisq_equal(n_cells: usize, lambda: usize) -> (GumSpec, Kernel) {
    let gum = GumSpec::calibrate(Family::Poisson, &vec![1.0 / n_cells as f64; n_cells], (lambda * n_cells) as u64)
        .expect("valid model");
    (gum, Kernel::Power(2))
}

/// Errors (Φ, corrected 𝕎⁴, corrected 𝕎⁵) for equal-p chi-square.
fn chisq_errors(n_cells: usize) -> (f64, f64, f64, ExactDist, ExpansionResult) {
    let (gum, kernel) = chisq_equal(n_cells, 2);
    let exact = exact_pmf(&gum, &kernel, &ExactOptions::default()).unwrap();
    let c = center(&gum, &kernel, 1e-15).unwrap();
    let w5 = build_w(&c, 5, 0.0).unwrap();
    let w4 = w5.truncated(4).unwrap();
    let lat = exact.lattice().expect("chi-square is lattice");
    let e3 = lattice_sup_error(&exact, &w5, &|u, _| normal_cdf(u));
    let e4 = lattice_sup_error(&exact, &w4, &|u, strict| {
        if strict {
            w4.lattice_cdf_strict(u, &lat)
        } else {
            w4.lattice_cdf(u, &lat)
        }
    });
    let e5 = lattice_sup_error(&exact, &w5, &|u, strict| {
        if strict {
            w5.lattice_cdf_strict(u, &lat)
        } else {
            w5.lattice_cdf(u, &lat)
        }
    });
    (e3, e4, e5, exact, w5)
}

fn random_probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let t: f64 = raw.iter().sum();
    raw.iter().map(|x| x / t).collect()
}

// ------------------------------------------------------------ criteria

/// Exact multinomial law of Σ f(η_m) by rational enumeration.
fn rational_multinomial(p: &[BigRational], n: usize, f: &dyn Fn(usize) -> i64) -> BTreeMap<i64, BigRational> {
    fn rec(
        m: usize,
        left: usize,
        p: &[BigRational],
        f: &dyn Fn(usize) -> i64,
        acc_val: i64,
        acc_prob: BigRational,
        out: &mut BTreeMap<i64, BigRational>,
    ) {
        if m + 1 == p.len() {
            let prob = acc_prob * pow(&p[m], left) / fact(left);
            *out.entry(acc_val + f(left)).or_insert_with(BigRational::zero) += prob;
            return;
        }
        for k in 0..=left {
            let prob = acc_prob.clone() * pow(&p[m], k) / fact(k);
            rec(m + 1, left - k, p, f, acc_val + f(k), prob, out);
        }
    }
    fn pow(x: &BigRational, k: usize) -> BigRational {
        (0..k).fold(BigRational::one(), |a, _| a * x)
    }
    fn fact(k: usize) -> BigRational {
        BigRational::from_integer((1..=k).fold(BigInt::one(), |a, i| a * BigInt::from(i)))
    }
    let mut out = BTreeMap::new();
    rec(0, n, p, f, 0, fact(n), &mut out);
    out
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let weights: [&[i64]; 4] = [&[1, 1], &[1, 2, 3], &[1, 1, 1, 1], &[5, 1, 2, 4]];
    let kernels: [(&str, Kernel, fn(usize) -> i64); 3] = [
        ("x^2", Kernel::Power(2), |x| (x * x) as i64),
        ("x^3", Kernel::Power(3), |x| (x * x * x) as i64),
        ("1{x=1}", Kernel::Indicator(1), |x| (x == 1) as i64),
    ];
    let mut worst: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    let mut cases = 0;
    for w in weights {
        let total: i64 = w.iter().sum();
        let p_rat: Vec<BigRational> = w.iter().map(|&x| BigRational::new(x.into(), total.into())).collect();
        let p_f: Vec<f64> = w.iter().map(|&x| x as f64 / total as f64).collect();
        for n in 1..=6usize {
            let gum = GumSpec::calibrate(Family::Poisson, &p_f, n as u64).unwrap();
            for (_, kernel, f) in &kernels {
                let exact = exact_pmf(&gum, kernel, &ExactOptions::default()).unwrap();
                let truth = rational_multinomial(&p_rat, n, f);
                for (&z, prob) in &truth {
                    let want = prob.to_f64().unwrap();
                    worst = worst.max((exact.prob(z as f64) - want).abs());
                }
                let covered: f64 = exact.values.iter().filter(|(z, _)| truth.contains_key(&(z.round() as i64))).map(|v| v.1).sum();
                worst = worst.max((1.0 - covered).abs());
                worst_sum = worst_sum.max((exact.total_prob_check - 1.0).abs());
                cases += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-12 && worst_sum <= 1e-10 && secs < 1.0,
        format!("{cases} cases, max |dp - rational| = {worst:.2e}, max |sum - 1| = {worst_sum:.2e}, {secs:.2}s"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let models = [
        GumSpec::calibrate(Family::Poisson, &random_probs(&mut rng, 10), 20).unwrap(),
        GumSpec::calibrate(Family::Binomial, &[3.0, 4.0, 2.0, 5.0, 3.0, 4.0, 6.0, 2.0, 3.0, 4.0], 20).unwrap(),
        GumSpec::calibrate(Family::NegBinomial, &[1.0, 2.0, 0.5, 1.5, 3.0, 1.0, 2.0, 0.8, 1.2, 2.5], 20).unwrap(),
    ];
    let kernel = Kernel::Power(2);
    let quad = QuadSpec::default();
    let mut worst: f64 = 0.0;
    for gum in &models {
        let exact = exact_pmf(gum, &kernel, &ExactOptions::with_tail_eps(1e-15)).unwrap();
        let c = center(gum, &kernel, 1e-15).unwrap();
        for i in 0..21 {
            let t = -3.0 + 0.3 * i as f64;
            let bart = conditional_charfn(&c, t, &quad).unwrap();
            let four = exact.charfn(t, c.lambda_n, c.sigma_n());
            worst = worst.max((bart - four).norm());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-6 && secs < 30.0, format!("max |Bartlett - Fourier| = {worst:.2e} over 3 families x 21 t, {secs:.2}s"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut ordered = true;
    let mut e4s = Vec::new();
    for n_cells in [20, 50, 100] {
        let (e3, e4, e5, _, _) = chisq_errors(n_cells);
        ordered &= e5 < e4 && e4 < e3;
        e4s.push(e4);
        rows.push(format!("N={n_cells}: Phi {e3:.3e}, W4 {e4:.3e}, W5 {e5:.3e}"));
    }
    let ratio = e4s[1] / e4s[2];
    let secs = start.elapsed().as_secs_f64();
    outcome(
        ordered && ratio >= 1.7 && secs < 300.0,
        format!("{}; W4 ratio N=50->100 {ratio:.2}; {secs:.2}s", rows.join("; ")),
    )
}

fn criterion_4() -> Outcome {
    let mut errs = Vec::new();
    for n_cells in [20, 50, 100] {
        let (_, _, _, exact, w5) = chisq_errors(n_cells);
        let scale = w5.sigma_n / exact.span;
        let worst = exact
            .values
            .iter()
            .map(|&(z, p)| (scale * p - w5.cdf_derivative(w5.u_of(z), 1)).abs())
            .fold(0.0, f64::max);
        errs.push(worst);
    }
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    outcome(monotone, format!("sup pmf error N=20,50,100: {:.3e}, {:.3e}, {:.3e}", errs[0], errs[1], errs[2]))
}

fn criterion_5() -> Outcome {
    let tol = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut notes = Vec::new();
    let mut pass = true;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);

    // Chi-square: Λ and σ² as printed; α12 after the normalization rescale.
    let mut worst: f64 = 0.0;
    let mut flagged_rows = 0;
    for _ in 0..50 {
        let n_cells = rng.random_range(5..=20);
        let n = rng.random_range(n_cells..=4 * n_cells) as u64;
        let params = chisq_closed_form(n, &random_probs(&mut rng, n_cells));
        let c = params.centered(1e-16).unwrap();
        match cross_check(&params, &c, tol) {
            Ok(report) => {
                for name in ["Lambda_N", "sigma2_N", "alpha_12"] {
                    worst = worst.max(report.row(name).unwrap().rel_diff);
                }
                flagged_rows += report.flagged().count();
            }
            Err(e) => {
                pass = false;
                notes.push(format!("chi-square cross_check error: {e}"));
            }
        }
    }
    pass &= worst <= tol && flagged_rows > 0;
    notes.push(format!("chi-square max rel {worst:.1e} ({flagged_rows} flagged rows reported)"));

    // Sample sum: γ, σ², α12 = 0 and the √N-rescaled α21.
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n_cells = rng.random_range(3..=8);
        let omega: Vec<f64> = (0..n_cells).map(|_| rng.random_range(1..=5) as f64).collect();
        let total: f64 = omega.iter().sum();
        let n = rng.random_range(1..total as u64);
        let laws: Vec<IncrementLaw> = (0..n_cells)
            .map(|_| {
                let probs = random_probs(&mut rng, 3);
                IncrementLaw::new(vec![0.0, rng.random_range(1..4) as f64, rng.random_range(4..7) as f64], probs).unwrap()
            })
            .collect();
        let params = SampleSumParams::from_laws(&omega, &laws, n).unwrap();
        let c = params.centered(1e-16).unwrap();
        match cross_check(&params, &c, tol) {
            Ok(report) => {
                for name in ["gamma_N", "sigma2_N", "alpha_12", "alpha_21"] {
                    worst = worst.max(report.row(name).unwrap().rel_diff);
                }
            }
            Err(e) => {
                pass = false;
                notes.push(format!("sample-sum cross_check error: {e}"));
            }
        }
    }
    pass &= worst <= tol;
    notes.push(format!("sample-sum max rel {worst:.1e}"));

    // Dixon: the printed Λ, γ, σ², α12 against the engine on NB cells.
    let mut worst_printed = BTreeMap::new();
    let mut worst_corrected: f64 = 0.0;
    for _ in 0..50 {
        let k = rng.random_range(1..=4u64);
        let cells = rng.random_range(4..=15u64);
        let m = k * cells;
        let n = rng.random_range(1..=2 * m);
        let params = dixon_closed_form(m, n, k).unwrap();
        let c = params.centered(1e-20).unwrap();
        match cross_check(&params, &c, tol) {
            Ok(report) => {
                for name in ["Lambda_N", "gamma_N", "sigma2_N", "alpha_12"] {
                    let row = report.row(name).unwrap();
                    let e = worst_printed.entry(name).or_insert(0.0f64);
                    *e = e.max(rel(row.printed, row.engine));
                    worst_corrected = worst_corrected.max(row.rel_diff);
                }
            }
            Err(e) => {
                pass = false;
                notes.push(format!("Dixon cross_check error: {e}"));
            }
        }
    }
    for (name, w) in &worst_printed {
        pass &= *w <= tol;
        notes.push(format!("Dixon printed {name} max rel {w:.1e}"));
    }
    notes.push(format!("Dixon corrected forms max rel {worst_corrected:.1e}"));
    outcome(pass, notes.join("; "))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let n_cells = rng.random_range(4..=12);
        let (gum, kernel) = match i % 3 {
            0 => (
                GumSpec::calibrate(Family::Poisson, &random_probs(&mut rng, n_cells), rng.random_range(5..40)).unwrap(),
                Kernel::Power(2),
            ),
            1 => {
                let omega: Vec<f64> = (0..n_cells).map(|_| rng.random_range(2..=6) as f64).collect();
                let total: f64 = omega.iter().sum();
                let n = rng.random_range(2..total as u64 - 1);
                (GumSpec::calibrate(Family::Binomial, &omega, n).unwrap(), Kernel::Power(3))
            }
            _ => {
                let d: Vec<f64> = (0..n_cells).map(|_| rng.random_range(0.5..3.0)).collect();
                let table: Vec<f64> = (0..400).map(|x| ((x as f64) + 1.0).ln() * (1.0 + 0.1 * x as f64)).collect();
                (
                    GumSpec::calibrate(Family::NegBinomial, &d, rng.random_range(5..30)).unwrap(),
                    Kernel::Tables(vec![table]),
                )
            }
        };
        let c = center(&gum, &kernel, 1e-15).unwrap();
        let w5 = build_w(&c, 5, 0.0).unwrap();
        let inputs = ThreeTermInputs::from_centered(&c).unwrap();
        for _ in 0..100 {
            let u = rng.random_range(-4.0..4.0);
            worst = worst.max((w5.cdf(u) - three_term_cdf_direct(&inputs, u)).abs());
        }
    }
    outcome(worst <= 1e-12, format!("max |generic - hand-coded| = {worst:.2e} over 10 models x 100 u"))
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let reps = 100_000;
    let alpha = 0.01;
    let band = dkw_halfwidth(reps, alpha);
    let models = [
        ("poisson", GumSpec::calibrate(Family::Poisson, &[0.1, 0.2, 0.3, 0.15, 0.25], 10).unwrap()),
        ("binomial", GumSpec::calibrate(Family::Binomial, &[3.0, 4.0, 2.0, 5.0, 3.0], 8).unwrap()),
        ("negbinomial", GumSpec::calibrate(Family::NegBinomial, &[1.0, 2.0, 0.5, 1.5, 3.0], 10).unwrap()),
    ];
    let kernel = Kernel::Power(2);
    let seeds = 50;
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, gum) in &models {
        let exact = exact_pmf(gum, &kernel, &ExactOptions::default()).unwrap();
        let first = ks_distance(&sample(gum, &kernel, reps, 7).unwrap(), &exact);
        let failures = (0..seeds)
            .filter(|&s| ks_distance(&sample(gum, &kernel, reps, 1000 + s).unwrap(), &exact) > band)
            .count();
        let allowed = (alpha * seeds as f64).ceil() as usize;
        pass &= first <= band && failures <= allowed;
        notes.push(format!("{name}: KS {first:.2e} (band {band:.2e}), {failures}/{seeds} seeds outside"));
    }
    notes.push(format!("{:.1}s", start.elapsed().as_secs_f64()));
    outcome(pass, notes.join("; "))
}

fn criterion_8() -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for n_cells in [20, 50, 100] {
        let (gum, kernel) = chisq_equal(n_cells, 2);
        let c = center(&gum, &kernel, 1e-15).unwrap();
        let r = gates(&c, 5, 1.0).unwrap();
        let n = gum.n as f64;
        let lam = 2.0;
        let envelope = 5.0 * (1.0 / (n * lam) + 1.0 / n_cells as f64);
        let b4 = r.beta(4.0).unwrap();
        pass &= r.upsilon <= 0.01 && b4 <= envelope;
        notes.push(format!("N={n_cells}: Upsilon_5 {:.3e} (gate 0.01), beta_4 {b4:.3e} (envelope {envelope:.3e})", r.upsilon));
    }
    let mut worst: f64 = 0.0;
    for (n_cells, lam) in [(10usize, 0.5f64), (40, 2.0), (100, 5.0)] {
        let gum = GumSpec::calibrate(Family::Poisson, &vec![1.0; n_cells], (lam * n_cells as f64) as u64).unwrap();
        for t in [0.05f64, 0.3, 1.0, 2.0] {
            let want = n_cells as f64 * (1.0 - (-2.0 * lam * (1.0 - t.cos())).exp());
            let got = m_inf(&gum, t, 1024);
            worst = worst.max((got - want).abs() / want);
        }
    }
    pass &= worst <= 1e-8;
    notes.push(format!("M_N closed form max rel {worst:.1e}"));
    outcome(pass, notes.join("; "))
}

fn criterion_9() -> Outcome {
    let k = 2u64;
    let rho = 0.5;
    let mut pts = Vec::new();
    for cells in [16u64, 32, 64, 128] {
        let m = k * cells;
        let n = (rho * m as f64).round() as u64;
        let params = dixon_closed_form(m, n, k).unwrap();
        let gum = params.model().unwrap();
        let kernel = params.kernel();
        let exact = exact_pmf(&gum, &kernel, &ExactOptions::default()).unwrap();
        let c = center(&gum, &kernel, 1e-15).unwrap();
        let w3 = build_w(&c, 3, 0.0).unwrap();
        let err = lattice_sup_error(&exact, &w3, &|u, _| normal_cdf(u));
        pts.push(((cells as f64).ln(), err.ln(), err));
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let errs: Vec<String> = pts.iter().map(|p| format!("{:.3e}", p.2)).collect();
    outcome(
        (slope + 0.5).abs() <= 0.25,
        format!("sup errors N=16..128: [{}], log-log slope {slope:.3}", errs.join(", ")),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 oracle soundness", criterion_1),
        ("2 Bartlett bridge", criterion_2),
        ("3 expansion ordering", criterion_3),
        ("4 lattice pmf", criterion_4),
        ("5 closed-form reconciliation", criterion_5),
        ("6 pipeline identity", criterion_6),
        ("7 sampler fidelity", criterion_7),
        ("8 diagnostics gates", criterion_8),
        ("9 Dixon rate", criterion_9),
    ];
    if std::env::args().any(|a| a == "--list") {
        for (name, _) in criteria {
            println!("criterion {name}: test");
        }
        return;
    }
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {name}: {}", o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
