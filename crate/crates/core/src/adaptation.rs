//! Online estimation of the density parameters: regressor filters, the
//! projected adaptation law, and the consensus couplings between Voronoi
//! neighbors.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::density::BasisSet;
use crate::geometry::{Point, QuadratureRule, VoronoiCell};

/// Filtered regressor moments. `lambda_mat` is Λᵢ and `lambda_f` the
/// filtered measurement vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub lambda_mat: DMatrix<f64>,
    pub lambda_f: DVector<f64>,
}

impl FilterState {
    pub fn zeros(p: usize) -> Self {
        Self {
            lambda_mat: DMatrix::zeros(p, p),
            lambda_f: DVector::zeros(p),
        }
    }

    pub fn dim(&self) -> usize {
        self.lambda_f.len()
    }

    /// `Λ a - λ_f`; zero for the true `a` when measurements are exact.
    pub fn residual(&self, a: &DVector<f64>) -> DVector<f64> {
        &self.lambda_mat * a - &self.lambda_f
    }
}

/// Exact update of `Λ' = -αΛ + KKᵀ`, `λ' = -αλ + Kφ` over `dt` with `K` and
/// `φ` held constant.
pub fn update_filters(state: &FilterState, k_at_p: &DVector<f64>, phi_meas: f64, alpha: f64, dt: f64) -> FilterState {
    let decay = (-alpha * dt).exp();
    let gain = -(-alpha * dt).exp_m1() / alpha;
    let mut lambda_mat = &state.lambda_mat * decay;
    lambda_mat.ger(gain, k_at_p, k_at_p, 1.0);
    let lambda_f = &state.lambda_f * decay + k_at_p * (gain * phi_meas);
    FilterState { lambda_mat, lambda_f }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationGains {
    /// Γ, symmetric positive definite.
    pub gamma: DMatrix<f64>,
    pub k2: f64,
    pub gamma_meas: f64,
    pub zeta: f64,
    pub alpha: f64,
}

impl AdaptationGains {
    pub fn validate(&self) -> Result<(), String> {
        let p = self.gamma.nrows();
        if self.gamma.ncols() != p {
            return Err("adapt_gain must be square".into());
        }
        if (&self.gamma - self.gamma.transpose()).abs().max() > 1e-12 * (1.0 + self.gamma.abs().max()) {
            return Err("adapt_gain must be symmetric".into());
        }
        if self.gamma.clone().cholesky().is_none() {
            return Err("adapt_gain must be positive definite".into());
        }
        for (name, v, strict) in [
            ("k2", self.k2, true),
            ("gamma_meas", self.gamma_meas, true),
            ("zeta", self.zeta, false),
            ("alpha", self.alpha, true),
        ] {
            let ok = v.is_finite() && if strict { v > 0.0 } else { v >= 0.0 };
            if !ok {
                return Err(format!("gains.{name} must be {}, got {v}", if strict { "positive" } else { "nonnegative" }));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusMode {
    #[default]
    None,
    Undirected,
    Directed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConsensusGraph {
    None,
    /// Symmetric shared-edge lengths `l_ij`, zero diagonal.
    Undirected { weights: DMatrix<f64> },
    /// One Laplacian per parameter; row `l` has `-1` in column `i` when `l`
    /// listens to neighbor `i`.
    DirectedPerParameter { laplacians: Vec<DMatrix<f64>> },
}

impl ConsensusGraph {
    /// `Σ_j L_ij â_j` for agent `i`, per parameter.
    pub fn consensus_term(&self, agent: usize, estimates: &[DVector<f64>]) -> DVector<f64> {
        let p = estimates[agent].len();
        let mut out = DVector::zeros(p);
        match self {
            ConsensusGraph::None => {}
            ConsensusGraph::Undirected { weights } => {
                for (j, est) in estimates.iter().enumerate() {
                    let w = weights[(agent, j)];
                    if w != 0.0 {
                        out += (&estimates[agent] - est) * w;
                    }
                }
            }
            ConsensusGraph::DirectedPerParameter { laplacians } => {
                for (alpha, lap) in laplacians.iter().enumerate() {
                    out[alpha] = (0..estimates.len()).map(|j| lap[(agent, j)] * estimates[j][alpha]).sum();
                }
            }
        }
        out
    }

    /// Graph Laplacian `D - W` of the undirected graph.
    pub fn undirected_laplacian(weights: &DMatrix<f64>) -> DMatrix<f64> {
        let n = weights.nrows();
        let mut lap = -weights.clone();
        for i in 0..n {
            lap[(i, i)] = weights.row(i).sum() - weights[(i, i)];
        }
        lap
    }

    /// `Σ_α â^αᵀ L^α â^α` where `â^α` stacks parameter α over agents.
    pub fn quadratic_form(&self, estimates: &[DVector<f64>]) -> f64 {
        let n = estimates.len();
        if n == 0 {
            return 0.0;
        }
        let p = estimates[0].len();
        let column = |alpha: usize| DVector::from_iterator(n, estimates.iter().map(|e| e[alpha]));
        match self {
            ConsensusGraph::None => 0.0,
            ConsensusGraph::Undirected { weights } => {
                let lap = Self::undirected_laplacian(weights);
                (0..p).map(|a| column(a).dot(&(&lap * column(a)))).sum()
            }
            ConsensusGraph::DirectedPerParameter { laplacians } => laplacians
                .iter()
                .enumerate()
                .map(|(a, lap)| column(a).dot(&(lap * column(a))))
                .sum(),
        }
    }
}

/// Per-parameter digraphs among Voronoi neighbors: edge `i → l` whenever
/// `Kʲ(p_i) ≥ Kʲ(p_l)`, unit weights.
pub fn build_directed_graphs(cells: &[VoronoiCell], basis: &BasisSet, positions: &[Point]) -> ConsensusGraph {
    let n = positions.len();
    let laplacians = (0..basis.len())
        .map(|j| {
            let k: Vec<f64> = positions.iter().map(|p| basis.eval_component(j, p)).collect();
            let mut lap = DMatrix::zeros(n, n);
            for cell in cells {
                let i = cell.owner;
                for &(l, _) in &cell.neighbors {
                    if k[i] >= k[l] {
                        lap[(l, i)] -= 1.0;
                        lap[(l, l)] += 1.0;
                    }
                }
            }
            lap
        })
        .collect();
    ConsensusGraph::DirectedPerParameter { laplacians }
}

/// Whether every node is reachable from `root` along edges `i → l`
/// (encoded as `lap[(l, i)] < 0`).
pub fn reachable_from(lap: &DMatrix<f64>, root: usize) -> bool {
    let n = lap.nrows();
    let mut seen = vec![false; n];
    seen[root] = true;
    let mut queue = VecDeque::from([root]);
    while let Some(i) = queue.pop_front() {
        for l in 0..n {
            if !seen[l] && l != i && lap[(l, i)] < 0.0 {
                seen[l] = true;
                queue.push_back(l);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// For each parameter, whether its digraph is reachable from the agent with
/// the largest `Kʲ`.
pub fn rooted_tree_check(graph: &ConsensusGraph, basis: &BasisSet, positions: &[Point]) -> Vec<bool> {
    let ConsensusGraph::DirectedPerParameter { laplacians } = graph else {
        return Vec::new();
    };
    laplacians
        .iter()
        .enumerate()
        .map(|(j, lap)| {
            let root = (0..positions.len())
                .max_by(|&a, &b| {
                    basis
                        .eval_component(j, &positions[a])
                        .total_cmp(&basis.eval_component(j, &positions[b]))
                })
                .unwrap_or(0);
            reachable_from(lap, root)
        })
        .collect()
}

/// `∫_{Vᵢ} w(q) K(q) (q - pᵢ)ᵀ dq` as a p×2 matrix, with
/// `w = exp(-|pᵢ - q|²/σ²)` when `width` is given and `w = 1` otherwise.
pub fn coupling_integral(rule: &QuadratureRule, position: &Point, basis: &BasisSet, width: Option<f64>) -> DMatrix<f64> {
    let p = basis.len();
    let mut out = DMatrix::zeros(p, 2);
    let mut k = vec![0.0; p];
    for (q, w) in rule.iter() {
        let r = q - position;
        let weight = match width {
            Some(s) => w * (-r.norm_squared() / (s * s)).exp(),
            None => w,
        };
        basis.eval_into(q, &mut k);
        for (j, kj) in k.iter().enumerate() {
            out[(j, 0)] += weight * kj * r.x;
            out[(j, 1)] += weight * kj * r.y;
        }
    }
    out
}

/// `b = -k₂ F (S v) - γ_meas (Λâ - λ_f) - ζ c` where `c` is the consensus
/// term for this agent.
pub fn compute_b(
    coupling: &DMatrix<f64>,
    s: &Matrix2<f64>,
    v: &nalgebra::Vector2<f64>,
    filter: &FilterState,
    a_hat: &DVector<f64>,
    consensus: &DVector<f64>,
    gains: &AdaptationGains,
) -> DVector<f64> {
    let sv = s * v;
    let coupling_term = coupling * DVector::from_column_slice(sv.as_slice());
    let measurement = filter.residual(a_hat);
    -(coupling_term * gains.k2) - measurement * gains.gamma_meas - consensus * gains.zeta
}

/// Euler step of `â' = Γ(b - I_proj b)`, followed by a clamp at `a_min`.
/// Returns the new estimate and whether the clamp had to act.
pub fn apply_projection(
    a_hat: &DVector<f64>,
    b: &DVector<f64>,
    gamma: &DMatrix<f64>,
    a_min: f64,
    dt: f64,
) -> (DVector<f64>, bool) {
    let unprojected = gamma * b;
    let mut masked = b.clone();
    for j in 0..b.len() {
        if a_hat[j] <= a_min && unprojected[j] < 0.0 {
            masked[j] = 0.0;
        }
    }
    let mut next = a_hat + gamma * masked * dt;
    let mut clamped = false;
    for v in next.iter_mut() {
        if *v < a_min {
            *v = a_min;
            clamped = true;
        }
    }
    (next, clamped)
}

/// `max_ij ‖âᵢ - âⱼ‖∞`.
pub fn consensus_disagreement(estimates: &[DVector<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..estimates.len() {
        for j in i + 1..estimates.len() {
            worst = worst.max((&estimates[i] - &estimates[j]).amax());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{compute_voronoi, delaunay_graph, ConvexPolygon, QuadratureSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square() -> ConvexPolygon {
        ConvexPolygon::rectangle(Point::new(-2.0, -2.0), Point::new(2.0, 2.0)).unwrap()
    }

    fn table1_basis() -> BasisSet {
        BasisSet {
            centers: vec![[1.0, 0.98], [1.0, -0.8]],
            widths: vec![0.6, 0.3],
        }
    }

    #[test]
    fn zero_regressor_keeps_filters_zero() {
        let mut f = FilterState::zeros(2);
        for _ in 0..50 {
            f = update_filters(&f, &DVector::zeros(2), 3.0, 1.0, 0.1);
        }
        assert_eq!(f, FilterState::zeros(2));
    }

    #[test]
    fn constant_regressor_matches_closed_form() {
        let k = DVector::from_vec(vec![0.4, -1.3, 2.0]);
        let alpha = 0.7;
        let mut f = FilterState::zeros(3);
        for _ in 0..137 {
            f = update_filters(&f, &k, 2.5, alpha, 0.05);
        }
        let t = 137.0 * 0.05;
        let g = (1.0 - (-alpha * t).exp()) / alpha;
        let expected = &k * k.transpose() * g;
        assert!((&f.lambda_mat - expected).abs().max() < 1e-10);
        assert!((&f.lambda_f - &k * (2.5 * g)).abs().max() < 1e-10);
    }

    #[test]
    fn filter_identity_holds_for_true_parameters() {
        let basis = table1_basis();
        let a = DVector::from_vec(vec![85.0, 30.0]);
        let mut f = FilterState::zeros(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let p = Point::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let k = basis.eval(&p);
            f = update_filters(&f, &k, k.dot(&a), 1.0, 0.1);
            assert!(f.residual(&a).amax() < 1e-8);
        }
    }

    #[test]
    fn filters_stay_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut f = FilterState::zeros(3);
        for _ in 0..10_000 {
            let k = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            f = update_filters(&f, &k, rng.random_range(-5.0..5.0), 1.0, rng.random_range(0.001..0.5));
        }
        let m = &f.lambda_mat;
        assert!((m - m.transpose()).abs().max() < 1e-12);
        let eig = m.clone().symmetric_eigen();
        assert!(eig.eigenvalues.min() > -1e-10);
        // ‖Λ‖ ≤ sup‖K‖²/α with ‖K‖² ≤ 12
        assert!(eig.eigenvalues.max() <= 12.0 + 1e-9);
    }

    fn gains(zeta: f64) -> AdaptationGains {
        AdaptationGains {
            gamma: DMatrix::identity(2, 2) * 0.1,
            k2: 1.0,
            gamma_meas: 2.0,
            zeta,
            alpha: 1.0,
        }
    }

    #[test]
    fn b_vanishes_at_rest_with_matched_filters() {
        let a = DVector::from_vec(vec![3.0, 4.0]);
        let k = DVector::from_vec(vec![0.5, 0.2]);
        let f = update_filters(&FilterState::zeros(2), &k, k.dot(&a), 1.0, 0.1);
        let b = compute_b(
            &DMatrix::from_element(2, 2, 1.0),
            &s_identity(),
            &nalgebra::Vector2::zeros(),
            &f,
            &a,
            &DVector::zeros(2),
            &gains(0.0),
        );
        assert!(b.amax() < 1e-14);
    }

    fn s_identity() -> Matrix2<f64> {
        Matrix2::identity()
    }

    #[test]
    fn b_measurement_term_pushes_toward_truth() {
        let basis = table1_basis();
        let a = DVector::from_vec(vec![85.0, 30.0]);
        let mut f = FilterState::zeros(2);
        for p in [Point::new(1.0, 0.9), Point::new(1.0, -0.7), Point::new(0.5, 0.0)] {
            let k = basis.eval(&p);
            f = update_filters(&f, &k, k.dot(&a), 1.0, 0.1);
        }
        let delta = DVector::from_vec(vec![-5.0, 2.0]);
        let a_hat = &a + &delta;
        let b = compute_b(
            &DMatrix::zeros(2, 2),
            &s_identity(),
            &nalgebra::Vector2::zeros(),
            &f,
            &a_hat,
            &DVector::zeros(2),
            &gains(0.0),
        );
        let expected = -(&f.lambda_mat * &delta) * 2.0;
        assert!((&b - &expected).amax() < 1e-10);
        assert!(b.dot(&delta) < 0.0);
    }

    #[test]
    fn coupling_integral_on_square_with_constant_basis() {
        // K ≡ 1 on the square [0,1]², p = (0.25, 0.5): ∫(q - p) = (0.25, 0)
        let basis = BasisSet { centers: vec![[0.0, 0.0]], widths: vec![1e9] };
        let sq = ConvexPolygon::rectangle(Point::new(0.0, 0.0), Point::new(1.0, 1.0)).unwrap();
        let rule = QuadratureSpec { order: 4, max_edge: None }.build(&sq).unwrap();
        let p = Point::new(0.25, 0.5);
        let f = coupling_integral(&rule, &p, &basis, None);
        assert!((f[(0, 0)] - 0.25).abs() < 1e-12 && f[(0, 1)].abs() < 1e-12);
        let s = crate::dynamics::s_matrix(0.3, 0.05);
        let v = nalgebra::Vector2::new(0.1, -0.4);
        let b = compute_b(&f, &s, &v, &FilterState::zeros(1), &DVector::zeros(1), &DVector::zeros(1), &AdaptationGains {
            gamma: DMatrix::identity(1, 1),
            k2: 2.0,
            gamma_meas: 1.0,
            zeta: 0.0,
            alpha: 1.0,
        });
        let sv = s * v;
        assert!((b[0] + 2.0 * 0.25 * sv.x).abs() < 1e-12);
    }

    #[test]
    fn projection_interior_is_plain_update() {
        let a = DVector::from_vec(vec![5.0, 6.0]);
        let b = DVector::from_vec(vec![-1.0, 2.0]);
        let g = DMatrix::identity(2, 2) * 0.1;
        let (next, clamped) = apply_projection(&a, &b, &g, 0.1, 0.1);
        assert!(!clamped);
        assert!((next - DVector::from_vec(vec![4.99, 6.02])).amax() < 1e-14);
    }

    #[test]
    fn projection_blocks_active_component() {
        let a = DVector::from_vec(vec![0.1, 6.0]);
        let b = DVector::from_vec(vec![-1.0, -2.0]);
        let g = DMatrix::identity(2, 2) * 0.1;
        let (next, _) = apply_projection(&a, &b, &g, 0.1, 0.1);
        assert_eq!(next[0], 0.1);
        assert!((next[1] - 5.98).abs() < 1e-14);
    }

    #[test]
    fn projection_never_goes_below_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]);
        let mut a = DVector::from_vec(vec![1.0, 1.0]);
        for _ in 0..100_000 {
            let b = DVector::from_fn(2, |_, _| rng.random_range(-20.0..10.0));
            a = apply_projection(&a, &b, &g, 0.1, rng.random_range(0.001..0.2)).0;
            assert!(a.min() >= 0.1);
        }
    }

    #[test]
    fn directed_two_agent_graph() {
        let basis = BasisSet { centers: vec![[1.0, 0.0]], widths: vec![1.0] };
        let positions = vec![Point::new(0.8, 0.0), Point::new(-1.0, 0.0)];
        let cells = compute_voronoi(&positions, &square()).unwrap();
        let ConsensusGraph::DirectedPerParameter { laplacians } = build_directed_graphs(&cells, &basis, &positions) else {
            panic!()
        };
        assert_eq!(laplacians[0], DMatrix::from_row_slice(2, 2, &[0.0, 0.0, -1.0, 1.0]));
        assert!(reachable_from(&laplacians[0], 0));
        assert!(!reachable_from(&laplacians[0], 1));
    }

    #[test]
    fn directed_ties_give_both_edges() {
        let basis = BasisSet { centers: vec![[0.0, 1.0]], widths: vec![1.0] };
        let positions = vec![Point::new(-1.0, 0.0), Point::new(1.0, 0.0)];
        let cells = compute_voronoi(&positions, &square()).unwrap();
        let ConsensusGraph::DirectedPerParameter { laplacians } = build_directed_graphs(&cells, &basis, &positions) else {
            panic!()
        };
        assert_eq!(laplacians[0], DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn directed_consensus_pulls_toward_higher_regressor() {
        let g = ConsensusGraph::DirectedPerParameter {
            laplacians: vec![DMatrix::from_row_slice(2, 2, &[0.0, 0.0, -1.0, 1.0])],
        };
        let est = vec![DVector::from_vec(vec![5.0]), DVector::from_vec(vec![2.0])];
        assert_eq!(g.consensus_term(0, &est)[0], 0.0);
        assert_eq!(g.consensus_term(1, &est)[0], -3.0);
    }

    #[test]
    fn disagreement_metric() {
        let a = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(consensus_disagreement(&[a.clone(), a.clone()]), 0.0);
        let b = DVector::from_vec(vec![1.0, 2.5]);
        assert_eq!(consensus_disagreement(&[a, b]), 0.5);
    }

    fn random_sites(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
        let mut out: Vec<Point> = Vec::new();
        while out.len() < n {
            let p = Point::new(rng.random_range(-1.95..1.95), rng.random_range(-1.95..1.95));
            if out.iter().all(|q| (p - q).norm() > 0.05) {
                out.push(p);
            }
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn directed_laplacians_have_zero_row_sums_and_a_root(seed in 0u64..10_000, n in 2usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let positions = random_sites(&mut rng, n);
            let cells = compute_voronoi(&positions, &square()).unwrap();
            let basis = table1_basis();
            let g = build_directed_graphs(&cells, &basis, &positions);
            let ConsensusGraph::DirectedPerParameter { laplacians } = &g else { unreachable!() };
            for lap in laplacians {
                for r in 0..n {
                    prop_assert!(lap.row(r).sum().abs() < 1e-12);
                    for c in 0..n {
                        if r != c {
                            prop_assert!(lap[(r, c)] == 0.0 || lap[(r, c)] == -1.0);
                        }
                    }
                }
            }
            prop_assert!(rooted_tree_check(&g, &basis, &positions).into_iter().all(|ok| ok));
        }

        #[test]
        fn undirected_quadratic_form_nonnegative(seed in 0u64..10_000, n in 2usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let positions = random_sites(&mut rng, n);
            let cells = compute_voronoi(&positions, &square()).unwrap();
            let g = delaunay_graph(&cells);
            let est: Vec<DVector<f64>> = (0..n).map(|_| DVector::from_fn(2, |_, _| rng.random_range(0.1..100.0))).collect();
            prop_assert!(g.quadratic_form(&est) >= -1e-9);
            // consensus terms of a symmetric graph sum to zero
            let total: DVector<f64> = (0..n).map(|i| g.consensus_term(i, &est)).fold(DVector::zeros(2), |a, b| a + b);
            prop_assert!(total.amax() < 1e-9 * (1.0 + est.iter().map(|e| e.amax()).fold(0.0, f64::max)));
        }
    }
}
