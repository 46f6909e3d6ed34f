//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use lobres::lob::{EventKind, LobEvent, Side};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

/// Adaptive Gauss-Kronrod (7, 15) quadrature of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    const XK: [f64; 8] = [
        0.991455371120812639206854697526329,
        0.949107912342758524526189684047851,
        0.864864423359769072789712788640926,
        0.741531185599394439863864773280788,
        0.586087235467691130294144845693013,
        0.405845151377397166906606412076961,
        0.207784955007898467600689403773245,
        0.000000000000000000000000000000000,
    ];
    const WK: [f64; 8] = [
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
    fn rule<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let fc = f(c);
        let mut k = WK[7] * fc;
        let mut g = WG[3] * fc;
        for i in 0..7 {
            let dx = h * XK[i];
            let s = f(c - dx) + f(c + dx);
            k += WK[i] * s;
            if i % 2 == 1 {
                g += WG[i / 2] * s;
            }
        }
        (k * h, ((k - g) * h).abs())
    }
    // global subdivision: always split the interval with the largest error
    let mut parts = vec![(a, b, rule(f, a, b))];
    for _ in 0..20_000 {
        let err: f64 = parts.iter().map(|p| p.2 .1).sum();
        if err <= tol {
            break;
        }
        let i = (0..parts.len()).max_by(|&i, &j| parts[i].2 .1.total_cmp(&parts[j].2 .1)).unwrap();
        let (lo, hi, _) = parts.swap_remove(i);
        let m = 0.5 * (lo + hi);
        parts.push((lo, m, rule(f, lo, m)));
        parts.push((m, hi, rule(f, m, hi)));
    }
    parts.iter().map(|p| p.2 .0).sum()
}

/// Generalised gamma in the `(mu, sigma, nu)` form, textbook expressions.
pub fn gg_log_pdf(mu: f64, sigma: f64, nu: f64, tau: f64) -> f64 {
    let theta = 1.0 / (sigma * sigma * nu * nu);
    let z = theta * (tau / mu).powf(nu);
    nu.abs().ln() + theta * z.ln() - z - tau.ln() - ln_gamma(theta)
}

pub fn gg_cdf(mu: f64, sigma: f64, nu: f64, tau: f64) -> f64 {
    let theta = 1.0 / (sigma * sigma * nu * nu);
    let z = theta * (tau / mu).powf(nu);
    if nu > 0.0 {
        gamma_lr(theta, z)
    } else {
        gamma_ur(theta, z)
    }
}

/// Bisection on a monotone CDF, in log space.
pub fn invert_cdf<F: Fn(f64) -> f64>(cdf: F, u: f64, mut lo: f64, mut hi: f64) -> f64 {
    while cdf(lo) > u {
        lo *= 0.5;
    }
    while cdf(hi) < u {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if cdf(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    (lo * hi).sqrt()
}

/// A deliberately plain book: a flat map of resting orders, with levels
/// recomputed by sorting on every query.
#[derive(Default, Clone)]
pub struct NaiveBook {
    pub orders: HashMap<u64, NaiveOrder>,
}

#[derive(Clone, Copy, Debug)]
pub struct NaiveOrder {
    pub side: Side,
    pub price: i64,
    pub size: u64,
    pub entered: i64,
    pub modified: bool,
}

impl NaiveBook {
    pub fn apply(&mut self, e: &LobEvent) {
        match e.kind {
            EventKind::Add => {
                self.orders.insert(
                    e.order_id,
                    NaiveOrder { side: e.side, price: e.price, size: e.size, entered: e.timestamp_ms, modified: false },
                );
            }
            EventKind::Cancel | EventKind::Execute => {
                let o = self.orders.get_mut(&e.order_id).expect("known order");
                if (e.kind == EventKind::Cancel && e.size == 0) || e.size >= o.size {
                    self.orders.remove(&e.order_id);
                } else {
                    o.size -= e.size;
                }
            }
            EventKind::Modify => {
                if e.size == 0 {
                    self.orders.remove(&e.order_id);
                } else {
                    let o = self.orders.get_mut(&e.order_id).expect("known order");
                    *o = NaiveOrder { price: e.price, size: e.size, entered: e.timestamp_ms, modified: true, ..*o };
                }
            }
        }
    }

    pub fn best(&self, side: Side) -> Option<i64> {
        let prices = self.orders.values().filter(|o| o.side == side).map(|o| o.price);
        match side {
            Side::Bid => prices.max(),
            Side::Ask => prices.min(),
        }
    }

    pub fn spread(&self) -> Option<i64> {
        Some(self.best(Side::Ask)? - self.best(Side::Bid)?)
    }

    /// Orders on the `n` price levels nearest the touch.
    pub fn top_levels(&self, side: Side, n: usize) -> Vec<NaiveOrder> {
        let mut prices: Vec<i64> = self.orders.values().filter(|o| o.side == side).map(|o| o.price).collect();
        prices.sort_unstable();
        prices.dedup();
        if side == Side::Bid {
            prices.reverse();
        }
        prices.truncate(n);
        self.orders.values().filter(|o| o.side == side && prices.contains(&o.price)).copied().collect()
    }

    /// count, volume, modified count, mean age at `t`.
    pub fn side_stats(&self, side: Side, n: usize, t: i64) -> [f64; 4] {
        let top = self.top_levels(side, n);
        if top.is_empty() {
            return [0.0; 4];
        }
        let count = top.len() as f64;
        let volume: u64 = top.iter().map(|o| o.size).sum();
        let modified = top.iter().filter(|o| o.modified).count() as f64;
        let age: i64 = top.iter().map(|o| t - o.entered).sum();
        [count, volume as f64, modified, age as f64 / count]
    }
}

/// Residual sum of squares of the OLS regression of `y` on an
/// intercept and the chosen columns, by normal equations and Gaussian
/// elimination with partial pivoting.
pub fn ols_rss(x: &[Vec<f64>], y: &[f64], cols: &[usize]) -> f64 {
    let q = cols.len() + 1;
    let row = |i: usize| -> Vec<f64> { std::iter::once(1.0).chain(cols.iter().map(|&j| x[i][j])).collect() };
    let mut a = vec![vec![0.0; q + 1]; q];
    for i in 0..y.len() {
        let r = row(i);
        for j in 0..q {
            for k in 0..q {
                a[j][k] += r[j] * r[k];
            }
            a[j][q] += r[j] * y[i];
        }
    }
    for c in 0..q {
        let p = (c..q).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        for r in 0..q {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=q {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    let beta: Vec<f64> = (0..q).map(|j| a[j][q] / a[j][j]).collect();
    (0..y.len())
        .map(|i| {
            let fit: f64 = row(i).iter().zip(&beta).map(|(r, b)| r * b).sum();
            (y[i] - fit).powi(2)
        })
        .sum()
}
