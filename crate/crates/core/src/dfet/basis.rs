//! Reference-element quadrature and Lagrange bases on `[-1, 1]`.

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = if (1.0 - x * x).abs() < 1e-300 {
        0.5 * nf * (nf + 1.0) * x.powi(n as i32 + 1)
    } else {
        nf * (p0 - x * p1) / (1.0 - x * x)
    };
    (p1, dp)
}

/// `n`-point Gauss-Legendre nodes (ascending) and weights.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// `n`-point Gauss-Lobatto nodes (ascending, including both ends).
pub fn gauss_lobatto(n: usize) -> Vec<f64> {
    assert!(n >= 2, "Lobatto rule needs at least two points");
    let m = n - 1;
    let mut nodes = vec![-1.0; n];
    nodes[m] = 1.0;
    for (i, node) in nodes.iter_mut().enumerate().take(m).skip(1) {
        let mut x = -(std::f64::consts::PI * i as f64 / m as f64).cos();
        for _ in 0..100 {
            // Roots of P'_m; second derivative from Legendre's equation.
            let (p, dp) = legendre(m, x);
            let mf = m as f64;
            let d2p = (2.0 * x * dp - mf * (mf + 1.0) * p) / (1.0 - x * x);
            let dx = dp / d2p;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        *node = x;
    }
    nodes
}

/// Values and derivatives of every Lagrange polynomial on `nodes` at `x`.
pub fn lagrange(nodes: &[f64], x: f64) -> (Vec<f64>, Vec<f64>) {
    let n = nodes.len();
    let mut val = vec![0.0; n];
    let mut der = vec![0.0; n];
    for j in 0..n {
        let mut l = 1.0;
        for k in 0..n {
            if k != j {
                l *= (x - nodes[k]) / (nodes[j] - nodes[k]);
            }
        }
        val[j] = l;
        let mut d = 0.0;
        for m in 0..n {
            if m == j {
                continue;
            }
            let mut term = 1.0 / (nodes[j] - nodes[m]);
            for k in 0..n {
                if k != j && k != m {
                    term *= (x - nodes[k]) / (nodes[j] - nodes[k]);
                }
            }
            d += term;
        }
        der[j] = d;
    }
    (val, der)
}

/// Precomputed tables for an element of order `p`: trial functions are
/// Lagrange polynomials of degree `p − 1` on the `p` Gauss points, test
/// functions Lagrange polynomials of degree `p` on `p + 1` Lobatto points.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementBasis {
    pub p: usize,
    pub gauss: Vec<f64>,
    pub weights: Vec<f64>,
    pub lobatto: Vec<f64>,
    /// `test[k][q] = g_k(ξ_q)`
    pub test: Vec<Vec<f64>>,
    /// `test_d[k][q] = g_k'(ξ_q)`
    pub test_d: Vec<Vec<f64>>,
    /// Trial functions at the element ends: `[f_s(-1)], [f_s(1)]`.
    pub trial_left: Vec<f64>,
    pub trial_right: Vec<f64>,
}

impl ElementBasis {
    pub fn new(p: usize) -> Self {
        assert!(p >= 1, "element order must be at least 1");
        let (gauss, weights) = gauss_legendre(p);
        let lobatto = gauss_lobatto(p + 1);
        let mut test = vec![vec![0.0; p]; p + 1];
        let mut test_d = vec![vec![0.0; p]; p + 1];
        for (q, &xi) in gauss.iter().enumerate() {
            let (v, d) = lagrange(&lobatto, xi);
            for k in 0..=p {
                test[k][q] = v[k];
                test_d[k][q] = d[k];
            }
        }
        let trial_left = lagrange(&gauss, -1.0).0;
        let trial_right = lagrange(&gauss, 1.0).0;
        Self {
            p,
            gauss,
            weights,
            lobatto,
            test,
            test_d,
            trial_left,
            trial_right,
        }
    }

    /// Trial-function values at reference coordinate `tau`.
    pub fn trial_at(&self, tau: f64) -> Vec<f64> {
        lagrange(&self.gauss, tau).0
    }
}
