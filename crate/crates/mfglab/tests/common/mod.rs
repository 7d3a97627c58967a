//! Shared test oracles, independent of the solver paths they check.
// Not every test binary uses every oracle.
#![allow(dead_code)]

/// Dense RK4 integration of the scalar Riccati equation P' = P^2 - c0 with
/// P(T) = gamma, sampled on a fine grid. Returns P(t) evaluated by linear
/// interpolation of the dense grid.
pub struct RiccatiOracle {
    pub c0: f64,
    pub gamma: f64,
    pub horizon: f64,
    ts: Vec<f64>,
    ps: Vec<f64>,
}

impl RiccatiOracle {
    pub fn new(c0: f64, gamma: f64, horizon: f64) -> Self {
        // Integrate backward from T with step 1e-4 in the reversed time
        // s = T - t, where dP/ds = c0 - P^2.
        let n = (horizon / 1e-4).ceil() as usize;
        let ds = horizon / n as f64;
        let f = |p: f64| c0 - p * p;
        let mut ps_rev = Vec::with_capacity(n + 1);
        let mut p = gamma;
        ps_rev.push(p);
        for _ in 0..n {
            let k1 = f(p);
            let k2 = f(p + 0.5 * ds * k1);
            let k3 = f(p + 0.5 * ds * k2);
            let k4 = f(p + ds * k3);
            p += ds / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            ps_rev.push(p);
        }
        // ps_rev[k] = P(T - k ds); flip to t-ordering.
        let ts = (0..=n).map(|k| k as f64 * ds).collect();
        let ps = ps_rev.into_iter().rev().collect();
        Self {
            c0,
            gamma,
            horizon,
            ts,
            ps,
        }
    }

    pub fn p(&self, t: f64) -> f64 {
        let ds = self.ts[1] - self.ts[0];
        let pos = (t / ds).clamp(0.0, (self.ts.len() - 1) as f64);
        let j = (pos.floor() as usize).min(self.ts.len() - 2);
        let frac = pos - j as f64;
        self.ps[j] * (1.0 - frac) + self.ps[j + 1] * frac
    }

    /// Closed form used as the oracle's own self-check:
    /// P(T - s) = c (gamma + c tanh(c s)) / (c + gamma tanh(c s)).
    pub fn p_closed(&self, t: f64) -> f64 {
        let c = self.c0.sqrt();
        let s = self.horizon - t;
        let th = (c * s).tanh();
        c * (self.gamma + c * th) / (c + self.gamma * th)
    }

    /// Value function of the collapsed linear-quadratic problem.
    pub fn value(&self, t: f64, x: f64) -> f64 {
        0.5 * self.p(t) * x * x
    }

    /// State started at (t0, x) propagated along X' = -P X.
    pub fn state(&self, t0: f64, x: f64, t: f64) -> f64 {
        // exp(-int_t0^t P) by trapezoid on the dense grid.
        let ds = self.ts[1] - self.ts[0];
        let mut acc = 0.0;
        let mut s = t0;
        while s + ds <= t + 1e-12 {
            acc += 0.5 * (self.p(s) + self.p(s + ds)) * ds;
            s += ds;
        }
        if t > s {
            acc += 0.5 * (self.p(s) + self.p(t)) * (t - s);
        }
        x * (-acc).exp()
    }
}

pub fn assert_close(got: f64, want: f64, tol: f64, what: &str) {
    assert!(
        (got - want).abs() <= tol,
        "{what}: got {got}, want {want} (tol {tol})"
    );
}
