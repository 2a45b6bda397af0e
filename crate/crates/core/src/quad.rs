//! Composite Gauss–Legendre rules with a panel-doubling error estimate.

use gauss_quad::legendre::GaussLegendre;

use crate::util::KahanSum;

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(order: usize) -> Vec<(f64, f64)> {
    let order = order.max(2);
    GaussLegendre::new(order)
        .expect("order >= 2")
        .as_node_weight_pairs()
        .to_vec()
}

/// A composite rule on [0, 1]: `panels` equal panels, `order` nodes each.
#[derive(Debug, Clone)]
pub struct CompositeGauss {
    order: usize,
    panels: usize,
    points: Vec<(f64, f64)>,
}

impl CompositeGauss {
    pub fn new(order: usize, panels: usize) -> Self {
        let panels = panels.max(1);
        let base = gauss_legendre(order);
        let h = 1.0 / panels as f64;
        let mut points = Vec::with_capacity(panels * base.len());
        for p in 0..panels {
            let a = p as f64 * h;
            for &(x, w) in &base {
                points.push((a + 0.5 * h * (x + 1.0), 0.5 * h * w));
            }
        }
        Self {
            order: base.len(),
            panels,
            points,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn panels(&self) -> usize {
        self.panels
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nodes and weights mapped onto [a, b].
    pub fn points(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let len = b - a;
        self.points.iter().map(move |&(x, w)| (a + len * x, len * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let mut acc = KahanSum::new();
        for (x, w) in self.points(a, b) {
            acc.add(w * f(x));
        }
        acc.value()
    }
}

/// A quadrature value with an a-posteriori error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub nodes: usize,
}

/// Doubles the panel count of a composite rule until two consecutive values
/// agree within `tol`. The reported value is the finer one; the estimate is
/// the observed difference, floored at the round-off level of the sum.
pub fn adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    order: usize,
    start_panels: usize,
    tol: f64,
    max_panels: usize,
) -> Estimate {
    let mut panels = start_panels.max(1);
    let (mut prev, _) = rule_with_abs(&mut f, a, b, order, panels);
    loop {
        panels *= 2;
        let (cur, abs) = rule_with_abs(&mut f, a, b, order, panels);
        let floor = 64.0 * f64::EPSILON * abs;
        let err = (cur - prev).abs().max(floor);
        if err <= tol || panels >= max_panels {
            return Estimate {
                value: cur,
                error: err,
                nodes: panels * order.max(2),
            };
        }
        prev = cur;
    }
}

fn rule_with_abs<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    order: usize,
    panels: usize,
) -> (f64, f64) {
    let rule = CompositeGauss::new(order, panels);
    let mut acc = KahanSum::new();
    let mut abs = KahanSum::new();
    for (x, w) in rule.points(a, b) {
        let v = w * f(x);
        acc.add(v);
        abs.add(v.abs());
    }
    (acc.value(), abs.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    #[test]
    fn composite_rule_integrates_trig() {
        let rule = CompositeGauss::new(16, 8);
        let v = rule.integrate(0.0, 1.0, |t| (TAU * 5.0 * t).cos().powi(2));
        assert!((v - 0.5).abs() < 1e-14);
        assert_eq!(rule.len(), 128);
    }

    #[test]
    fn adaptive_reports_error_above_observed_refinement() {
        let f = |t: f64| (3.0 * t).exp() * (TAU * 7.0 * t).sin();
        let est = adaptive(f, 0.0, 1.0, 4, 1, 1e-10, 1 << 12);
        let finer = CompositeGauss::new(4, 1 << 14).integrate(0.0, 1.0, f);
        assert!((finer - est.value).abs() <= est.error);
        assert!(est.error <= 1e-10);
    }
}
