//! Clamped cubic spline through sampled data.
//!
//! End slopes come from the cubic through the first (last) four samples, so
//! the interpolant keeps fourth-order accuracy up to the boundaries. With
//! fewer than four samples the slope is taken from the lower-order
//! polynomial through all of them.

#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    t: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

/// Derivative at `x0` of the Lagrange polynomial through `(xs, ys)`.
fn lagrange_slope(xs: &[f64], ys: &[f64], x0: f64) -> f64 {
    let n = xs.len();
    let mut d = 0.0;
    for j in 0..n {
        // d/dx of basis polynomial l_j at x0.
        let mut denom = 1.0;
        for m in 0..n {
            if m != j {
                denom *= xs[j] - xs[m];
            }
        }
        let mut sum = 0.0;
        for k in 0..n {
            if k == j {
                continue;
            }
            let mut prod = 1.0;
            for m in 0..n {
                if m != j && m != k {
                    prod *= x0 - xs[m];
                }
            }
            sum += prod;
        }
        d += ys[j] * sum / denom;
    }
    d
}

impl CubicSpline {
    /// Knots must be strictly increasing and at least two.
    pub fn new(t: Vec<f64>, y: Vec<f64>) -> Result<Self, String> {
        let n = t.len();
        if n != y.len() {
            return Err(format!("{} knots but {} values", n, y.len()));
        }
        if n < 2 {
            return Err("need at least two samples".into());
        }
        if t.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err("non-finite sample".into());
        }
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return Err("sample times must be strictly increasing".into());
        }
        let k = n.min(4);
        let s0 = lagrange_slope(&t[..k], &y[..k], t[0]);
        let s1 = lagrange_slope(&t[n - k..], &y[n - k..], t[n - 1]);

        // Tridiagonal system for the second derivatives (clamped ends).
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        let h0 = t[1] - t[0];
        diag[0] = h0 / 3.0;
        sup[0] = h0 / 6.0;
        rhs[0] = (y[1] - y[0]) / h0 - s0;
        for i in 1..n - 1 {
            let hl = t[i] - t[i - 1];
            let hr = t[i + 1] - t[i];
            sub[i] = hl / 6.0;
            diag[i] = (hl + hr) / 3.0;
            sup[i] = hr / 6.0;
            rhs[i] = (y[i + 1] - y[i]) / hr - (y[i] - y[i - 1]) / hl;
        }
        let hn = t[n - 1] - t[n - 2];
        sub[n - 1] = hn / 6.0;
        diag[n - 1] = hn / 3.0;
        rhs[n - 1] = s1 - (y[n - 1] - y[n - 2]) / hn;

        // Thomas algorithm.
        for i in 1..n {
            let w = sub[i] / diag[i - 1];
            diag[i] -= w * sup[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        let mut m = vec![0.0; n];
        m[n - 1] = rhs[n - 1] / diag[n - 1];
        for i in (0..n - 1).rev() {
            m[i] = (rhs[i] - sup[i] * m[i + 1]) / diag[i];
        }
        Ok(Self { t, y, m })
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn start(&self) -> f64 {
        self.t[0]
    }

    pub fn end(&self) -> f64 {
        self.t[self.t.len() - 1]
    }

    fn interval(&self, x: f64) -> usize {
        let n = self.t.len();
        match self.t.partition_point(|&v| v <= x) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    /// Value at `x`; outside the knot range the end cubic is extended.
    pub fn eval(&self, x: f64) -> f64 {
        let i = self.interval(x);
        let h = self.t[i + 1] - self.t[i];
        let a = (self.t[i + 1] - x) / h;
        let b = (x - self.t[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let i = self.interval(x);
        let h = self.t[i + 1] - self.t[i];
        let a = (self.t[i + 1] - x) / h;
        let b = (x - self.t[i]) / h;
        (self.y[i + 1] - self.y[i]) / h
            + (-(3.0 * a * a - 1.0) * self.m[i] + (3.0 * b * b - 1.0) * self.m[i + 1]) * h / 6.0
    }
}
