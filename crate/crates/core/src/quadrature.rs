//! Symmetric quadrature on the reference triangle and Gauss rules on facets.

/// Rule on the reference triangle in barycentric coordinates. Weights sum to
/// the reference area `1/2`, so a physical integral is `2|K| * sum(w f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: u32,
}

impl QuadratureRule {
    /// Smallest tabulated rule exact for polynomials of total degree `degree`
    /// (tabulated: 1, 2, 4, 6).
    pub fn with_degree(degree: u32) -> Self {
        match degree {
            0 | 1 => Self::centroid(),
            2 => Self::three_point(),
            3 | 4 => Self::six_point(),
            _ => Self::twelve_point(),
        }
    }

    fn centroid() -> Self {
        Self { points: vec![[1.0 / 3.0; 3]], weights: vec![0.5], degree: 1 }
    }

    fn three_point() -> Self {
        let (a, b) = (1.0 / 6.0, 2.0 / 3.0);
        Self { points: vec![[b, a, a], [a, b, a], [a, a, b]], weights: vec![1.0 / 6.0; 3], degree: 2 }
    }

    fn six_point() -> Self {
        let mut rule = Self { points: Vec::new(), weights: Vec::new(), degree: 4 };
        rule.orbit3(0.44594849091596488632, 0.22338158967801146570);
        rule.orbit3(0.09157621350977074346, 0.10995174365532186764);
        rule
    }

    fn twelve_point() -> Self {
        let mut rule = Self { points: Vec::new(), weights: Vec::new(), degree: 6 };
        rule.orbit3(0.24928674517091042129, 0.11678627572637936603);
        rule.orbit3(0.06308901449150222834, 0.05084490637020681692);
        rule.orbit6(0.05314504984481694735, 0.31035245103378440542, 0.08285107561837357519);
        rule
    }

    // weights are tabulated for unit total; stored scaled to area 1/2
    fn orbit3(&mut self, a: f64, w: f64) {
        let b = 1.0 - 2.0 * a;
        for p in [[a, a, b], [a, b, a], [b, a, a]] {
            self.points.push(p);
            self.weights.push(0.5 * w);
        }
    }

    fn orbit6(&mut self, a: f64, b: f64, w: f64) {
        let c = 1.0 - a - b;
        for p in [[a, b, c], [b, a, c], [a, c, b], [c, a, b], [b, c, a], [c, b, a]] {
            self.points.push(p);
            self.weights.push(0.5 * w);
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64; 3], f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }
}

/// Volume rule used for every assembled term. Degree 6 integrates the worst
/// polynomial integrand exactly (bubble x bubble x P1 gradient products).
pub fn default_quadrature() -> QuadratureRule {
    QuadratureRule::with_degree(6)
}

/// Gauss-Legendre rule on `[0, 1]`: (parameter, weight) with weights summing to 1.
pub fn gauss_legendre_unit(npoints: usize) -> Vec<(f64, f64)> {
    let table: &[(f64, f64)] = match npoints {
        1 => &[(0.0, 2.0)],
        2 => &[(-0.5773502691896257, 1.0), (0.5773502691896257, 1.0)],
        3 => &[(-0.7745966692414834, 5.0 / 9.0), (0.0, 8.0 / 9.0), (0.7745966692414834, 5.0 / 9.0)],
        _ => &[
            (-0.8611363115940526, 0.3478548451374538),
            (-0.3399810435848563, 0.6521451548625461),
            (0.3399810435848563, 0.6521451548625461),
            (0.8611363115940526, 0.3478548451374538),
        ],
    };
    table.iter().map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    /// Closed form: integral of l1^a l2^b l3^c over the reference triangle.
    fn exact_monomial(a: u32, b: u32, c: u32) -> f64 {
        2.0 * 0.5 * factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 2)
    }

    #[test]
    fn weights_sum_to_reference_area() {
        for d in [1, 2, 4, 6] {
            let rule = QuadratureRule::with_degree(d);
            let s: f64 = rule.weights.iter().sum();
            assert!((s - 0.5).abs() < 1e-14, "degree {d}: {s}");
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            for p in &rule.points {
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn monomials_up_to_stated_degree() {
        for d in [1, 2, 4, 6] {
            let rule = QuadratureRule::with_degree(d);
            assert!(rule.degree >= d);
            for a in 0..=d {
                for b in 0..=(d - a) {
                    for c in 0..=(d - a - b) {
                        let approx: f64 = rule
                            .iter()
                            .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32) * p[2].powi(c as i32))
                            .sum();
                        let exact = exact_monomial(a, b, c);
                        assert!((approx - exact).abs() < 1e-15, "degree {d}: l^({a},{b},{c}) {approx} vs {exact}");
                    }
                }
            }
        }
    }

    #[test]
    fn degree_six_cubic_product() {
        let rule = default_quadrature();
        let approx: f64 = rule.iter().map(|(p, w)| w * p[0].powi(3) * p[1].powi(3)).sum();
        // 3! 3! / 8! over a triangle of area 1/2, times 2|K| = 1
        assert!((approx - 36.0 / 40320.0).abs() < 1e-17);
    }

    #[test]
    fn gauss_rules_integrate_polynomials() {
        for n in 1..=4 {
            let rule = gauss_legendre_unit(n);
            for k in 0..(2 * n) as i32 {
                let approx: f64 = rule.iter().map(|&(s, w)| w * s.powi(k)).sum();
                assert!((approx - 1.0 / (k as f64 + 1.0)).abs() < 1e-15, "n={n}, k={k}");
            }
        }
    }
}
