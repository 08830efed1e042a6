//! Gauss–Legendre rules.

const G1: [(f64, f64); 1] = [(0.0, 2.0)];
const G2: [(f64, f64); 2] = [
    (-0.577_350_269_189_625_8, 1.0),
    (0.577_350_269_189_625_8, 1.0),
];
const G4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];
const G8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
];

/// Nodes and weights on `[−1, 1]`; supported orders are 1, 2, 4 and 8.
pub fn gauss_legendre(order: usize) -> Option<&'static [(f64, f64)]> {
    match order {
        1 => Some(&G1),
        2 => Some(&G2),
        4 => Some(&G4),
        8 => Some(&G8),
        _ => None,
    }
}

/// Rule of the given order mapped to `[a, b]`.
pub fn gauss_on(a: f64, b: f64, order: usize) -> Vec<(f64, f64)> {
    let rule = gauss_legendre(order).expect("unsupported Gauss order");
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    rule.iter().map(|&(x, w)| (mid + half * x, half * w)).collect()
}

/// Integral with an error estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Quad {
    pub value: f64,
    pub error: f64,
}

const MAX_DEPTH: u32 = 40;

fn g4_panel<F: Fn(f64) -> (f64, f64)>(f: &F, a: f64, b: f64) -> Quad {
    let mut q = Quad::default();
    for (x, w) in gauss_on(a, b, 4) {
        let (v, e) = f(x);
        q.value += w * v;
        q.error += w.abs() * e;
    }
    q
}

fn refine<F: Fn(f64) -> (f64, f64)>(f: &F, a: f64, b: f64, whole: Quad, tol: f64, depth: u32) -> Quad {
    let m = 0.5 * (a + b);
    let l = g4_panel(f, a, m);
    let r = g4_panel(f, m, b);
    let est = (l.value + r.value - whole.value).abs();
    if est <= tol || depth >= MAX_DEPTH || (b - a) < 1e-14 * (1.0 + a.abs()) {
        return Quad {
            value: l.value + r.value,
            error: est + l.error + r.error,
        };
    }
    let ql = refine(f, a, m, l, 0.5 * tol, depth + 1);
    let qr = refine(f, m, b, r, 0.5 * tol, depth + 1);
    Quad {
        value: ql.value + qr.value,
        error: ql.error + qr.error,
    }
}

/// Adaptive composite 4-point Gauss over `panels` equal starting panels.
/// The integrand returns `(value, pointwise error)`; pointwise errors are
/// integrated alongside, so nested integrals carry their inner error out.
/// The reported error is the fine-versus-coarse difference summed over the
/// final panels plus the integrated pointwise error.
pub fn adaptive<F>(f: F, a: f64, b: f64, panels: usize, tol: f64) -> Quad
where
    F: Fn(f64) -> (f64, f64) + Sync,
{
    use rayon::prelude::*;
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let per = tol / panels as f64;
    (0..panels)
        .into_par_iter()
        .map(|i| {
            let lo = a + h * i as f64;
            let hi = if i + 1 == panels { b } else { lo + h };
            let whole = g4_panel(&f, lo, hi);
            refine(&f, lo, hi, whole, per, 0)
        })
        .reduce(Quad::default, |x, y| Quad {
            value: x.value + y.value,
            error: x.error + y.error,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_resolves_narrow_bump() {
        // ∫ (1 − (x/ρ)²)² over |x| < ρ is 16ρ/15.
        let rho = 1e-3;
        let f = |x: f64| {
            let s = x - 0.3;
            let v = if s.abs() < rho { (1.0 - (s / rho).powi(2)).powi(2) } else { 0.0 };
            (v, 0.0)
        };
        let q = adaptive(f, 0.0, 1.0, 64, 1e-12);
        assert!((q.value - 16.0 * rho / 15.0).abs() < 1e-10, "{q:?}");
        assert!(q.error < 1e-9);
        let q = adaptive(|x: f64| (x.sin(), 0.0), 0.0, std::f64::consts::PI, 1, 1e-13);
        assert!((q.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn exact_for_polynomials() {
        for (order, deg) in [(1, 1), (2, 3), (4, 7), (8, 15)] {
            for d in 0..=deg {
                let got: f64 = gauss_on(0.0, 2.0, order)
                    .iter()
                    .map(|&(x, w)| w * x.powi(d))
                    .sum();
                let want = 2f64.powi(d + 1) / (d + 1) as f64;
                assert!((got - want).abs() < 1e-12 * want.max(1.0), "order {order} deg {d}");
            }
        }
        assert!(gauss_legendre(3).is_none());
    }
}
