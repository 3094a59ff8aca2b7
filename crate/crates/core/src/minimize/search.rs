//! One-dimensional search over the duration `τ`, on a log scale.

const INV_PHI_SQ: f64 = 0.381_966_011_250_105_1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum SearchEnd {
    /// A bracket was found and refined.
    Closed,
    /// The values kept decreasing towards `τ → ∞` (or `τ → 0`).
    Unbounded,
}

pub(crate) struct SearchResult {
    pub best_tau: f64,
    pub end: SearchEnd,
}

/// Brackets a minimum of `f` by doubling/halving from `tau0`, then refines it
/// by golden section on `ln τ` until the bracket is narrower than `rel_tol`.
pub(crate) fn search_tau(
    tau0: f64,
    rel_tol: f64,
    max_expansions: usize,
    mut f: impl FnMut(f64) -> f64,
) -> SearchResult {
    let mut best = (tau0, f64::INFINITY);
    let mut eval = |u: f64, best: &mut (f64, f64)| {
        let tau = u.exp();
        let v = f(tau);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v < best.1 {
            *best = (tau, v);
        }
        v
    };
    let step = std::f64::consts::LN_2;
    let u0 = tau0.ln();
    let f0 = eval(u0, &mut best);
    let f1 = eval(u0 + step, &mut best);

    let (mut a, mut b, mut c, mut fb);
    if f1 < f0 {
        a = u0;
        b = u0 + step;
        fb = f1;
        let mut expansions = 0;
        loop {
            c = b + step;
            let fc = eval(c, &mut best);
            if fc >= fb {
                break;
            }
            a = b;
            b = c;
            fb = fc;
            expansions += 1;
            if expansions >= max_expansions {
                return SearchResult {
                    best_tau: best.0,
                    end: SearchEnd::Unbounded,
                };
            }
        }
    } else {
        b = u0;
        c = u0 + step;
        fb = f0;
        let mut expansions = 0;
        loop {
            a = b - step;
            let fa = eval(a, &mut best);
            if fa >= fb {
                break;
            }
            c = b;
            b = a;
            fb = fa;
            expansions += 1;
            if expansions >= max_expansions {
                return SearchResult {
                    best_tau: best.0,
                    end: SearchEnd::Unbounded,
                };
            }
        }
    }

    let mut iters = 0;
    while c - a > rel_tol && iters < 200 {
        iters += 1;
        let x = if c - b > b - a {
            b + INV_PHI_SQ * (c - b)
        } else {
            b - INV_PHI_SQ * (b - a)
        };
        let fx = eval(x, &mut best);
        if fx < fb {
            if x > b {
                a = b;
            } else {
                c = b;
            }
            b = x;
            fb = fx;
        } else if x > b {
            c = x;
        } else {
            a = x;
        }
    }
    SearchResult {
        best_tau: best.0,
        end: SearchEnd::Closed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_free_particle_optimum() {
        // h τ + ℓ²/(2τ) with h = 2, ℓ² = 9·2 → τ* = 3/√2·…
        let (h, l2) = (2.0, 18.0);
        let r = search_tau(0.1, 1e-10, 60, |t| h * t + l2 / (2.0 * t));
        assert_eq!(r.end, SearchEnd::Closed);
        let exact = (l2 / (2.0 * h)).sqrt();
        assert!((r.best_tau - exact).abs() < 1e-6 * exact);
    }

    #[test]
    fn reports_unbounded_decrease() {
        let r = search_tau(1.0, 1e-8, 20, |t| 1.0 / t);
        assert_eq!(r.end, SearchEnd::Unbounded);
    }
}
