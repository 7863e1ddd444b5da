//! Quadrature rules in physical coordinates: Gauss-Legendre on segments and
//! squares, symmetric rules and collapsed Gauss rules on triangles.

use crate::mesh::Square;

/// Points and positive weights in physical coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Quadrature {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn([f64; 2]) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(*p))
            .sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn extend(&mut self, other: Quadrature) {
        self.points.extend(other.points);
        self.weights.extend(other.weights);
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, computed by Newton iteration
/// on the Legendre polynomial.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss rule needs at least one point");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, dp)
}

/// Gauss-Legendre rule mapped to `[0, 1]`.
pub fn gauss_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    (
        x.iter().map(|v| 0.5 * (v + 1.0)).collect(),
        w.iter().map(|v| 0.5 * v).collect(),
    )
}

/// Tensor-product Gauss rule with `n` points per direction on a square.
/// Points are ordered with x varying fastest.
pub fn tensor_gauss_square(sq: &Square, n: usize) -> Quadrature {
    let (x, w) = gauss_unit(n);
    let mut q = Quadrature::default();
    for j in 0..n {
        for i in 0..n {
            q.points.push(sq.from_reference([x[i], x[j]]));
            q.weights.push(w[i] * w[j] * sq.area());
        }
    }
    q
}

/// `n`-point Gauss rule on the straight segment `a -> b`.
pub fn segment_rule(a: [f64; 2], b: [f64; 2], n: usize) -> Quadrature {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let (x, w) = gauss_unit(n);
    Quadrature {
        points: x
            .iter()
            .map(|t| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])])
            .collect(),
        weights: w.iter().map(|v| v * len).collect(),
    }
}

pub fn triangle_area(t: &[[f64; 2]; 3]) -> f64 {
    0.5 * ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1]))
}

/// Barycentric points (of the second and third vertex) and weights summing to one.
fn reference_triangle_rule(degree: usize) -> Vec<([f64; 2], f64)> {
    match degree {
        0 | 1 => vec![([1.0 / 3.0, 1.0 / 3.0], 1.0)],
        2 => {
            let w = 1.0 / 3.0;
            vec![([1.0 / 6.0, 1.0 / 6.0], w), ([2.0 / 3.0, 1.0 / 6.0], w), ([1.0 / 6.0, 2.0 / 3.0], w)]
        }
        3 | 4 => {
            // six-point symmetric rule exact to degree 4
            let mut out = Vec::with_capacity(6);
            for (a, w) in [
                (0.445_948_490_915_965, 0.223_381_589_678_011),
                (0.091_576_213_509_771, 0.109_951_743_655_322),
            ] {
                let b = 1.0 - 2.0 * a;
                out.push(([a, a], w));
                out.push(([b, a], w));
                out.push(([a, b], w));
            }
            out
        }
        5 => {
            // seven-point symmetric rule exact to degree 5
            let s = 15f64.sqrt();
            let mut out = vec![([1.0 / 3.0, 1.0 / 3.0], 9.0 / 40.0)];
            for (a, w) in [((6.0 - s) / 21.0, (155.0 - s) / 1200.0), ((6.0 + s) / 21.0, (155.0 + s) / 1200.0)] {
                let b = 1.0 - 2.0 * a;
                out.push(([a, a], w));
                out.push(([b, a], w));
                out.push(([a, b], w));
            }
            out
        }
        _ => collapsed_gauss(degree),
    }
}

/// Conical product rule: Gauss in both directions of the collapsed square.
fn collapsed_gauss(degree: usize) -> Vec<([f64; 2], f64)> {
    let n = (degree + 2).div_ceil(2);
    let (x, w) = gauss_unit(n);
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let u = x[i];
            let v = x[j] * (1.0 - u);
            // reference triangle area is 1/2; normalize to unit total weight
            out.push(([u, v], 2.0 * w[i] * w[j] * (1.0 - u)));
        }
    }
    out
}

/// Rule on a physical triangle exact for polynomials of total degree `degree`.
pub fn triangle_rule(t: &[[f64; 2]; 3], degree: usize) -> Quadrature {
    let area = triangle_area(t).abs();
    let rule = reference_triangle_rule(degree);
    let mut q = Quadrature::default();
    for ([l1, l2], w) in rule {
        let l0 = 1.0 - l1 - l2;
        q.points.push([
            l0 * t[0][0] + l1 * t[1][0] + l2 * t[2][0],
            l0 * t[0][1] + l1 * t[1][1] + l2 * t[2][1],
        ]);
        q.weights.push(w * area);
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    #[test]
    fn gauss_legendre_integrates_monomials() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            assert!(w.iter().all(|&v| v > 0.0));
            for k in 0..(2 * n) {
                let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
                let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                assert!((got - exact).abs() < 1e-14, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn two_point_gauss_abscissae() {
        let (x, _) = gauss_unit(2);
        let d = 0.5 / 3f64.sqrt();
        assert!((x[0] - (0.5 - d)).abs() < 1e-15);
        assert!((x[1] - (0.5 + d)).abs() < 1e-15);
    }

    #[test]
    fn tensor_rule_examples() {
        let sq = Square { anchor: [0.0, 0.0], size: 1.0 };
        let q = tensor_gauss_square(&sq, 2);
        assert!((q.integrate(|_| 1.0) - 1.0).abs() < 1e-15);
        assert!((q.integrate(|p| p[0] * p[1]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn triangle_rules_exact_on_reference_monomials() {
        let t = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        for degree in 1..=12 {
            let q = triangle_rule(&t, degree);
            assert!(q.weights.iter().all(|&w| w > 0.0));
            for i in 0..=degree {
                for j in 0..=(degree - i) {
                    let exact = factorial(i as u32) * factorial(j as u32) / factorial((i + j + 2) as u32);
                    let got = q.integrate(|p| p[0].powi(i as i32) * p[1].powi(j as i32));
                    assert!((got - exact).abs() < 1e-14, "degree {degree} x^{i} y^{j}: {got} vs {exact}");
                }
            }
        }
    }

    /// Midpoint-free subdivision oracle: split into 4^k congruent triangles and
    /// apply a high-degree rule on each.
    fn subdivided(t: [[f64; 2]; 3], depth: u32, f: &dyn Fn([f64; 2]) -> f64) -> f64 {
        if depth == 0 {
            return triangle_rule(&t, 10).integrate(f);
        }
        let m = |a: [f64; 2], b: [f64; 2]| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        let (m01, m12, m20) = (m(t[0], t[1]), m(t[1], t[2]), m(t[2], t[0]));
        [
            [t[0], m01, m20],
            [m01, t[1], m12],
            [m20, m12, t[2]],
            [m01, m12, m20],
        ]
        .into_iter()
        .map(|s| subdivided(s, depth - 1, f))
        .sum()
    }

    #[test]
    fn degree_five_rule_matches_subdivision_oracle() {
        let t = [[0.2, -0.1], [1.3, 0.4], [0.5, 1.1]];
        let f = |p: [f64; 2]| p[0].powi(3) * p[1].powi(2);
        let got = triangle_rule(&t, 5).integrate(f);
        let oracle = subdivided(t, 3, &f);
        assert!((got - oracle).abs() < 1e-10 * oracle.abs().max(1.0));
    }

    #[test]
    fn segment_rule_length_and_linear_exactness() {
        let q = segment_rule([0.0, 0.0], [3.0, 4.0], 3);
        assert!((q.total_weight() - 5.0).abs() < 1e-14);
        let got = q.integrate(|p| p[0] * p[0]);
        // x = 3t, int_0^1 9 t^2 * 5 dt = 15
        assert!((got - 15.0).abs() < 1e-13);
    }
}
