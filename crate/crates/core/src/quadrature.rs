//! Small quadrature toolbox: Gauss–Legendre rules, adaptive Gauss–Kronrod,
//! and composite trapezoid weights.

/// Gauss–Legendre nodes and weights on [0, 1].
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Newton on P_n from the Chebyshev-like initial guess.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pnm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wt = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * wt;
        w[n - 1 - i] = 0.5 * wt;
    }
    (x, w)
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// One GK15 panel for a vector integrand; returns (estimate, error estimate).
fn gk15<F: FnMut(f64) -> Vec<f64>>(f: &mut F, a: f64, b: f64, dim: usize) -> (Vec<f64>, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    let fc = f(c);
    for d in 0..dim {
        kron[d] = WGK[7] * fc[d];
        gauss[d] = WG[3] * fc[d];
    }
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        for d in 0..dim {
            let s = f1[d] + f2[d];
            kron[d] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[d] += WG[j / 2] * s;
            }
        }
    }
    let mut err: f64 = 0.0;
    for d in 0..dim {
        kron[d] *= h;
        gauss[d] *= h;
        err = err.max((kron[d] - gauss[d]).abs());
    }
    (kron, err)
}

/// Adaptive Gauss–Kronrod integration of a vector-valued function,
/// bisecting panels until the max-norm error estimate is below
/// `abs_tol` (distributed over the interval length).
pub fn integrate_adaptive<F: FnMut(f64) -> Vec<f64>>(mut f: F, a: f64, b: f64, dim: usize, abs_tol: f64) -> Vec<f64> {
    let mut total = vec![0.0; dim];
    if b <= a {
        return total;
    }
    let width = b - a;
    let mut stack = vec![(a, b, 0u32)];
    while let Some((lo, hi, depth)) = stack.pop() {
        let (est, err) = gk15(&mut f, lo, hi, dim);
        let budget = abs_tol * (hi - lo) / width;
        if err <= budget || depth >= 40 {
            for d in 0..dim {
                total[d] += est[d];
            }
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    total
}

/// Scalar convenience wrapper around [`integrate_adaptive`].
pub fn integrate_scalar<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    integrate_adaptive(|x| vec![f(x)], a, b, 1, abs_tol)[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        for n in 1..12 {
            let (x, w) = gauss_legendre_unit(n);
            for p in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p as i32)).sum();
                assert_relative_eq!(q, 1.0 / (p as f64 + 1.0), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn adaptive_handles_kinks() {
        let v = integrate_scalar(|x| (x - 1.0f64 / 3.0).abs(), 0.0, 1.0, 1e-13);
        assert_relative_eq!(v, 5.0 / 18.0, epsilon = 1e-12);
        let v = integrate_adaptive(|x| vec![x.exp(), x.sin()], 0.0, 2.0, 2, 1e-13);
        assert_relative_eq!(v[0], 2f64.exp() - 1.0, epsilon = 1e-12);
        assert_relative_eq!(v[1], 1.0 - 2f64.cos(), epsilon = 1e-12);
    }
}
