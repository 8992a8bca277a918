use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MarkSpace, PathEnsemble, PathStore, ScenarioError, TimeGrid};

pub const DEFAULT_NODE_BUDGET: u128 = 1_000_000;

/// Full (non-recombining) scenario tree.
///
/// Each node has `2^(1+m)` children: the Brownian step is `±√Δ_i` with
/// probability 1/2 each, and independently each mark jumps once with
/// probability `p_ij = 1 − exp(−λ_j Δ_i)` or not at all. Leaves are stored as
/// weighted paths in lexicographic branch order, so the descendants of a
/// depth-`i` node are a contiguous block of `branching^(N−i)` paths.
///
/// Jump counts are compensated by `p_ij`, which makes `Ñ` an exact martingale
/// on the tree. The gap `p_ij − λ_j Δ_i` to the Poisson compensator is
/// reported by [`ScenarioTree::compensator_bias`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    grid: TimeGrid,
    marks: MarkSpace,
    branching: usize,
    jump_prob: Vec<f64>,
    weights: Vec<f64>,
    store: PathStore,
}

pub fn build_tree(grid: &TimeGrid, marks: &MarkSpace) -> Result<ScenarioTree, ScenarioError> {
    build_tree_with_budget(grid, marks, DEFAULT_NODE_BUDGET)
}

pub fn build_tree_with_budget(grid: &TimeGrid, marks: &MarkSpace, node_budget: u128) -> Result<ScenarioTree, ScenarioError> {
    let n = grid.n_steps();
    let m = marks.len();
    if m >= 16 {
        return Err(ScenarioError::BudgetExceeded { needed: u128::MAX, budget: node_budget });
    }
    let branching = 1usize << (1 + m);
    let mut needed: u128 = 0;
    let mut level: u128 = 1;
    for _ in 0..=n {
        needed = needed.saturating_add(level);
        level = level.saturating_mul(branching as u128);
    }
    if needed > node_budget {
        return Err(ScenarioError::BudgetExceeded { needed, budget: node_budget });
    }
    let leaves = branching.pow(n as u32);
    let jump_prob: Vec<f64> =
        (0..n).flat_map(|i| marks.intensities().iter().map(move |&l| -(-l * grid.dt(i)).exp_m1())).collect();

    let mut dw = Vec::with_capacity(leaves * n);
    let mut dn = Vec::with_capacity(leaves * n * m);
    let mut weights = Vec::with_capacity(leaves);
    for leaf in 0..leaves {
        let mut w = 1.0;
        for i in 0..n {
            let branch = (leaf / branching.pow((n - 1 - i) as u32)) % branching;
            let (inc, counts, prob) = decode_branch(branch, grid.dt(i), &jump_prob[i * m..(i + 1) * m]);
            dw.push(inc);
            dn.extend(counts);
            w *= prob;
        }
        weights.push(w);
    }
    let store = PathStore::from_increments(n, m, dw, dn, &jump_prob)?;
    Ok(ScenarioTree { grid: grid.clone(), marks: marks.clone(), branching, jump_prob, weights, store })
}

/// Branch bit 0 selects the Brownian move (0 up, 1 down); bit `1+j` is the
/// jump indicator of mark `j`.
fn decode_branch(branch: usize, dt: f64, jump_prob: &[f64]) -> (f64, Vec<u32>, f64) {
    let inc = if branch & 1 == 0 { dt.sqrt() } else { -dt.sqrt() };
    let mut prob = 0.5;
    let counts = jump_prob
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let jump = (branch >> (1 + j)) & 1;
            prob *= if jump == 1 { p } else { 1.0 - p };
            jump as u32
        })
        .collect();
    (inc, counts, prob)
}

impl ScenarioTree {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn marks(&self) -> &MarkSpace {
        &self.marks
    }

    pub fn store(&self) -> &PathStore {
        &self.store
    }

    /// Children per node.
    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn n_leaves(&self) -> usize {
        self.weights.len()
    }

    pub fn n_nodes(&self) -> usize {
        (0..=self.grid.n_steps()).map(|i| self.node_count(i)).sum()
    }

    pub fn node_count(&self, depth: usize) -> usize {
        self.branching.pow(depth as u32)
    }

    /// Number of leaves under one depth-`depth` node.
    pub fn block_size(&self, depth: usize) -> usize {
        self.branching.pow((self.grid.n_steps() - depth) as u32)
    }

    pub fn node_of(&self, leaf: usize, depth: usize) -> usize {
        leaf / self.block_size(depth)
    }

    pub fn weight(&self, leaf: usize) -> f64 {
        self.weights[leaf]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn jump_prob(&self, step: usize, mark: usize) -> f64 {
        self.jump_prob[step * self.marks.len() + mark]
    }

    /// Transition probabilities from any depth-`depth` node to its children,
    /// in branch order.
    pub fn child_probabilities(&self, depth: usize) -> Vec<f64> {
        let m = self.marks.len();
        let p = &self.jump_prob[depth * m..(depth + 1) * m];
        (0..self.branching).map(|b| decode_branch(b, self.grid.dt(depth), p).2).collect()
    }

    /// `(W, counts, compensated counts)` at a node.
    pub fn node_state(&self, depth: usize, node: usize) -> (f64, &[u32], &[f64]) {
        let leaf = node * self.block_size(depth);
        (self.store.w_level(leaf, depth), self.store.counts(leaf, depth), self.store.compensated(leaf, depth))
    }

    pub fn dn_comp_var(&self, step: usize, mark: usize) -> f64 {
        let p = self.jump_prob(step, mark);
        p * (1.0 - p)
    }

    /// `p_ij − λ_j Δ_i ≤ 0`: mean of the tree's jump indicator minus the
    /// Poisson compensator.
    pub fn compensator_bias(&self, step: usize, mark: usize) -> f64 {
        self.jump_prob(step, mark) - self.marks.intensity(mark) * self.grid.dt(step)
    }

    /// Exact `E[values | F_depth]`, one value per depth-`depth` node.
    pub fn node_expectation(&self, depth: usize, values: &[f64]) -> Vec<f64> {
        let b = self.block_size(depth);
        values
            .chunks(b)
            .zip(self.weights.chunks(b))
            .map(|(v, w)| {
                let mass: f64 = w.iter().sum();
                v.iter().zip(w).map(|(x, p)| x * p).sum::<f64>() / mass
            })
            .collect()
    }

    /// Monte Carlo paths drawn from the tree's own transition law, compensated
    /// like the tree. Lets a regression solver be compared with the exact tree
    /// on the same model.
    pub fn sample_paths(&self, n_paths: usize, seed: u64) -> PathEnsemble {
        let n = self.grid.n_steps();
        let m = self.marks.len();
        let mut dw = Vec::with_capacity(n_paths * n);
        let mut dn = Vec::with_capacity(n_paths * n * m);
        for p in 0..n_paths {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            for i in 0..n {
                let up: bool = rng.gen_bool(0.5);
                dw.push(if up { self.grid.dt(i).sqrt() } else { -self.grid.dt(i).sqrt() });
                for j in 0..m {
                    dn.push(rng.gen_bool(self.jump_prob(i, j)) as u32);
                }
            }
        }
        let var = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| self.dn_comp_var(i, j)).collect();
        PathEnsemble::from_parts(self.grid.clone(), self.marks.clone(), seed, dw, dn, self.jump_prob.clone(), var)
            .expect("consistent shapes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_mark() -> MarkSpace {
        MarkSpace::single(1.0, 1.0).unwrap()
    }

    #[test]
    fn four_children_with_one_mark() {
        let grid = TimeGrid::uniform(1.0, 3).unwrap();
        let tree = build_tree(&grid, &one_mark()).unwrap();
        assert_eq!(tree.branching(), 4);
        assert_eq!(tree.n_leaves(), 64);
        assert_eq!(tree.n_nodes(), 1 + 4 + 16 + 64);
    }

    #[test]
    fn binomial_without_marks() {
        let grid = TimeGrid::uniform(1.0, 3).unwrap();
        let tree = build_tree(&grid, &MarkSpace::empty()).unwrap();
        assert_eq!(tree.branching(), 2);
        assert_eq!(tree.n_leaves(), 8);
    }

    #[test]
    fn budget_is_enforced() {
        let grid = TimeGrid::uniform(1.0, 3).unwrap();
        let err = build_tree_with_budget(&grid, &one_mark(), 10).unwrap_err();
        assert!(matches!(err, ScenarioError::BudgetExceeded { needed: 85, budget: 10 }));
    }

    #[test]
    fn transition_probabilities_sum_to_one_and_increments_are_centred() {
        let grid = TimeGrid::new(vec![0.0, 0.2, 0.5, 1.0]).unwrap();
        let marks = MarkSpace::new(vec![1.0, 2.0], vec![1.5, 0.5], vec![1.0, 1.0]).unwrap();
        let tree = build_tree(&grid, &marks).unwrap();
        for d in 0..3 {
            let probs = tree.child_probabilities(d);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            for j in 0..2 {
                assert!(tree.compensator_bias(d, j) <= 0.0);
            }
        }
        assert!((tree.weights().iter().sum::<f64>() - 1.0).abs() < 1e-13);
        let sc = crate::scenario::Scenario::from(tree.clone());
        for i in 0..3 {
            let dw: Vec<f64> = (0..tree.n_leaves()).map(|p| sc.dw(p, i)).collect();
            let dn: Vec<f64> = (0..tree.n_leaves()).map(|p| sc.dn_comp(p, i, 1)).collect();
            for e in tree.node_expectation(i, &dw).into_iter().chain(tree.node_expectation(i, &dn)) {
                assert!(e.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn compensator_bias_vanishes_with_step() {
        let marks = one_mark();
        let coarse = build_tree(&TimeGrid::uniform(1.0, 1).unwrap(), &marks).unwrap();
        let fine = build_tree(&TimeGrid::uniform(1.0, 4).unwrap(), &marks).unwrap();
        assert!(fine.compensator_bias(0, 0).abs() < coarse.compensator_bias(0, 0).abs());
    }

    #[test]
    fn node_expectation_of_leaf_indicator_is_conditional_probability() {
        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        let tree = build_tree(&grid, &one_mark()).unwrap();
        let target = 6;
        let ind: Vec<f64> = (0..tree.n_leaves()).map(|l| (l == target) as u8 as f64).collect();
        let parents = tree.node_expectation(1, &ind);
        let parent = tree.node_of(target, 1);
        let probs = tree.child_probabilities(1);
        assert!((parents[parent] - probs[target % 4]).abs() < 1e-15);
    }
}
