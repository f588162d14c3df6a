//! Golden-section search for one-dimensional minimization.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Minimize a unimodal function on `[lo, hi]` to within `tol` in the
/// argument. Returns the bracket midpoint after shrinking.
pub fn golden_section_min<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    assert!(lo < hi, "bracket must be ordered");
    assert!(tol > 0.0, "tolerance must be positive");
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::golden_section_min;

    #[test]
    fn quadratic_minimum_is_found() {
        let m = golden_section_min(|x| (x - 1.25) * (x - 1.25), -3.0, 5.0, 1e-10);
        assert!((m - 1.25).abs() < 1e-8);
    }

    #[test]
    fn asymmetric_function_is_handled() {
        let m = golden_section_min(|x: f64| x.exp() - 2.0 * x, -2.0, 3.0, 1e-10);
        assert!((m - (2.0f64).ln()).abs() < 1e-8);
    }
}
