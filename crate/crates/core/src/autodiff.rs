//! Minimal tape-based reverse-mode differentiation over `f64` scalars.
//!
//! Every node stores its value and the local partial derivatives with
//! respect to its parents. Nodes may have any number of parents, which keeps
//! dot products and affine maps to a single node each.

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<f64>,
    // (start, len) into `parents`/`partials`
    spans: Vec<(u32, u32)>,
    parents: Vec<u32>,
    partials: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn with_capacity(nodes: usize, edges: usize) -> Self {
        Tape {
            values: Vec::with_capacity(nodes),
            spans: Vec::with_capacity(nodes),
            parents: Vec::with_capacity(edges),
            partials: Vec::with_capacity(edges),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn value(&self, v: Var) -> f64 {
        self.values[v.index()]
    }

    /// Independent input.
    pub fn leaf(&mut self, value: f64) -> Var {
        self.push(value, std::iter::empty())
    }

    fn push(&mut self, value: f64, edges: impl IntoIterator<Item = (Var, f64)>) -> Var {
        let start = self.parents.len() as u32;
        for (p, d) in edges {
            self.parents.push(p.0);
            self.partials.push(d);
        }
        let len = self.parents.len() as u32 - start;
        self.values.push(value);
        self.spans.push((start, len));
        Var(self.values.len() as u32 - 1)
    }

    fn unary(&mut self, x: Var, value: f64, dx: f64) -> Var {
        self.push(value, [(x, dx)])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, [(a, 1.0), (b, 1.0)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, [(a, 1.0), (b, -1.0)])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        self.push(va * vb, [(a, vb), (b, va)])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        self.push(va / vb, [(a, 1.0 / vb), (b, -va / (vb * vb))])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.unary(a, v, k)
    }

    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) + k;
        self.unary(a, v, 1.0)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).exp();
        self.unary(a, v, v)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).sqrt();
        self.unary(a, v, 0.5 / v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).tanh();
        self.unary(a, v, 1.0 - v * v)
    }

    /// `max(0, a)`, with derivative 0 at the kink.
    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        if x > 0.0 {
            self.unary(a, x, 1.0)
        } else {
            self.unary(a, 0.0, 0.0)
        }
    }

    /// `acosh(max(a, 1))`; derivative 0 where the clamp is active.
    pub fn acosh_clamped(&mut self, a: Var) -> Var {
        let x = self.value(a);
        if x <= 1.0 {
            self.unary(a, 0.0, 0.0)
        } else {
            self.unary(a, x.acosh(), 1.0 / (x * x - 1.0).sqrt())
        }
    }

    /// `asin(min(a, 1))`; derivative 0 where the clamp is active.
    pub fn asin_clamped(&mut self, a: Var) -> Var {
        let x = self.value(a);
        if x >= 1.0 {
            self.unary(a, std::f64::consts::FRAC_PI_2, 0.0)
        } else {
            self.unary(a, x.asin(), 1.0 / (1.0 - x * x).sqrt())
        }
    }

    /// `acos(clamp(a, -1, 1))`; derivative 0 where the clamp is active.
    pub fn acos_clamped(&mut self, a: Var) -> Var {
        let x = self.value(a);
        if x >= 1.0 {
            self.unary(a, 0.0, 0.0)
        } else if x <= -1.0 {
            self.unary(a, std::f64::consts::PI, 0.0)
        } else {
            self.unary(a, x.acos(), -1.0 / (1.0 - x * x).sqrt())
        }
    }

    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let v = xs.iter().map(|&x| self.value(x)).sum();
        self.push(v, xs.iter().map(|&x| (x, 1.0)))
    }

    /// `sum_i k_i * x_i` for constant coefficients.
    pub fn weighted_sum(&mut self, xs: &[Var], ks: &[f64]) -> Var {
        let v = xs.iter().zip(ks).map(|(&x, k)| self.value(x) * k).sum();
        self.push(v, xs.iter().zip(ks).map(|(&x, &k)| (x, k)))
    }

    /// `sum_i w_i * x_i + b` with constant inputs `x`.
    pub fn affine_const(&mut self, w: &[Var], x: &[f64], b: Var) -> Var {
        let v = self.value(b) + w.iter().zip(x).map(|(&wi, xi)| self.value(wi) * xi).sum::<f64>();
        let edges: Vec<(Var, f64)> = w
            .iter()
            .zip(x)
            .map(|(&wi, &xi)| (wi, xi))
            .chain(std::iter::once((b, 1.0)))
            .collect();
        self.push(v, edges)
    }

    /// `sum_i w_i * x_i + b`.
    pub fn affine(&mut self, w: &[Var], x: &[Var], b: Var) -> Var {
        let mut v = self.value(b);
        let mut edges = Vec::with_capacity(2 * w.len() + 1);
        for (&wi, &xi) in w.iter().zip(x) {
            let (vw, vx) = (self.value(wi), self.value(xi));
            v += vw * vx;
            edges.push((wi, vx));
            edges.push((xi, vw));
        }
        edges.push((b, 1.0));
        self.push(v, edges)
    }

    pub fn dot(&mut self, a: &[Var], b: &[Var]) -> Var {
        let mut v = 0.0;
        let mut edges = Vec::with_capacity(2 * a.len());
        for (&x, &y) in a.iter().zip(b) {
            let (vx, vy) = (self.value(x), self.value(y));
            v += vx * vy;
            edges.push((x, vy));
            edges.push((y, vx));
        }
        self.push(v, edges)
    }

    /// Euclidean norm; the derivative at the zero vector is taken as 0.
    pub fn norm(&mut self, xs: &[Var]) -> Var {
        let vals: Vec<f64> = xs.iter().map(|&x| self.value(x)).collect();
        let n = crate::manifold::euclidean_norm(&vals);
        if n == 0.0 {
            return self.push(0.0, xs.iter().map(|&x| (x, 0.0)));
        }
        self.push(n, xs.iter().zip(&vals).map(|(&x, v)| (x, v / n)))
    }

    /// `log(sum_i exp(x_i))` with the max-shift.
    pub fn log_sum_exp(&mut self, xs: &[Var]) -> Var {
        let vals: Vec<f64> = xs.iter().map(|&x| self.value(x)).collect();
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = vals.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let v = max + total.ln();
        self.push(v, xs.iter().zip(&exps).map(|(&x, e)| (x, e / total)))
    }

    /// Node with a caller-supplied value and local partials.
    pub fn custom(&mut self, value: f64, edges: &[(Var, f64)]) -> Var {
        self.push(value, edges.iter().copied())
    }

    /// Adjoints of every node with respect to `output`.
    ///
    /// Nodes whose adjoint is exactly zero are not expanded, so infinite
    /// local partials behind an inactive branch never poison the result.
    pub fn gradient(&self, output: Var) -> Vec<f64> {
        let mut adj = vec![0.0; self.values.len()];
        adj[output.index()] = 1.0;
        for i in (0..=output.index()).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let (start, len) = self.spans[i];
            let (s, e) = (start as usize, (start + len) as usize);
            for (p, d) in self.parents[s..e].iter().zip(&self.partials[s..e]) {
                adj[*p as usize] += a * d;
            }
        }
        adj
    }
}
