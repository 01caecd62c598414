//! Desk-scale low-rank adapter algebra: a frozen base matrix plus
//! trainable rank-r factors, staged freeze policies, analytic gradients
//! for a least-squares objective, and a finite-difference gradient check.

mod checkpoint;

pub use checkpoint::{
    read_adapter, read_dense, write_adapter, write_dense, CheckpointError,
};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LoraError {
    #[error("rank {r} must be strictly less than min(d={d}, k={k})")]
    RankTooLarge { r: usize, d: usize, k: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Frozen base matrix `W0` (d x k) with trainable factors `B` (d x r) and
/// `A` (r x k). The low-rank update `B * A` is scaled by `alpha / r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraLayer {
    pub w0: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub rank: usize,
    pub alpha: f64,
}

impl LoraLayer {
    pub fn output_dim(&self) -> usize {
        self.w0.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w0.ncols()
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// `W0 x + s * B (A x)`, without forming `B * A`.
    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>, LoraError> {
        if x.len() != self.input_dim() {
            return Err(LoraError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(&self.w0 * x + self.scaling() * (&self.b * (&self.a * x)))
    }

    /// Dense merged matrix `W0 + s * B * A`; the layer is unmodified.
    pub fn merge(&self) -> DMatrix<f64> {
        &self.w0 + self.scaling() * (&self.b * &self.a)
    }

    /// Merges the adapter into the base and reinitializes the factors, as
    /// done between training stages.
    pub fn advance_stage(&mut self, sigma: f64, seed: u64) {
        self.w0 = self.merge();
        let fresh = init_lora(self.w0.clone(), self.rank, self.alpha, sigma, seed)
            .expect("rank already validated");
        self.a = fresh.a;
        self.b = fresh.b;
    }

    /// Byte snapshot of the trainable parameters, for freeze-invariance
    /// checks.
    pub fn param_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::new();
        for m in [&self.a, &self.b] {
            for v in m.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    pub fn base_bytes(&self) -> Vec<u8> {
        self.w0.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// `A ~ N(0, sigma^2)` from a seeded generator, `B = 0` exactly, so a
/// fresh layer computes `W0 x` bit-for-bit.
pub fn init_lora(
    w0: DMatrix<f64>,
    rank: usize,
    alpha: f64,
    sigma: f64,
    seed: u64,
) -> Result<LoraLayer, LoraError> {
    let (d, k) = (w0.nrows(), w0.ncols());
    if rank >= d.min(k) {
        return Err(LoraError::RankTooLarge { r: rank, d, k });
    }
    assert!(sigma > 0.0, "sigma must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let a = DMatrix::from_fn(rank, k, |_, _| normal.sample(&mut rng));
    let b = DMatrix::zeros(d, rank);
    Ok(LoraLayer {
        w0,
        a,
        b,
        rank,
        alpha,
    })
}

/// Named parameter groups with a stage-level freeze mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupName {
    LanguageAttention,
    VisionAttention,
}

#[derive(Debug, Clone)]
pub struct ParamGroup {
    pub name: GroupName,
    pub layers: Vec<LoraLayer>,
    pub frozen: bool,
}

/// The three training stages and their freeze policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    DaptText,
    DaptImages,
    Vit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: Stage,
    pub frozen_groups: Vec<GroupName>,
    pub max_output_len: usize,
    pub epochs: usize,
}

impl StageConfig {
    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::DaptText => StageConfig {
                stage,
                frozen_groups: vec![GroupName::VisionAttention],
                max_output_len: 768,
                epochs: 3,
            },
            Stage::DaptImages => StageConfig {
                stage,
                frozen_groups: vec![GroupName::LanguageAttention],
                max_output_len: 768,
                epochs: 3,
            },
            Stage::Vit => StageConfig {
                stage,
                frozen_groups: vec![],
                max_output_len: 1024,
                epochs: 3,
            },
        }
    }

    pub fn apply_freezes(&self, groups: &mut [ParamGroup]) {
        for group in groups {
            group.frozen = self.frozen_groups.contains(&group.name);
        }
    }
}

/// Shared inputs with one target matrix per layer (in group iteration
/// order). Columns are samples.
#[derive(Debug, Clone)]
pub struct RegressionBatch {
    pub inputs: DMatrix<f64>,
    pub targets: Vec<DMatrix<f64>>,
}

/// Least-squares loss for one layer: `0.5 * mean over samples of
/// ||f(x) - y||^2`.
fn layer_loss_and_residual(
    layer: &LoraLayer,
    inputs: &DMatrix<f64>,
    target: &DMatrix<f64>,
) -> (f64, DMatrix<f64>) {
    let n = inputs.ncols() as f64;
    let pred = &layer.w0 * inputs + layer.scaling() * (&layer.b * (&layer.a * inputs));
    let residual = pred - target;
    let loss = 0.5 * residual.iter().map(|r| r * r).sum::<f64>() / n;
    (loss, residual)
}

/// Analytic gradients of the least-squares loss with respect to A and B.
pub fn gradients(
    layer: &LoraLayer,
    inputs: &DMatrix<f64>,
    target: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = inputs.ncols() as f64;
    let s = layer.scaling();
    let (_, residual) = layer_loss_and_residual(layer, inputs, target);
    // d loss / d B = (s / n) R (A X)^T ; d loss / d A = (s / n) B^T R X^T
    let ax = &layer.a * inputs;
    let grad_b = (s / n) * (&residual * ax.transpose());
    let grad_a = (s / n) * (layer.b.transpose() * residual * inputs.transpose());
    (grad_a, grad_b)
}

/// One gradient-descent step on the adapters of unfrozen groups. `W0` and
/// frozen-group parameters are untouched. Returns the mean loss over all
/// layers (frozen ones included, they still contribute to the objective).
pub fn train_step(groups: &mut [ParamGroup], batch: &RegressionBatch, lr: f64) -> f64 {
    assert!(lr > 0.0, "learning rate must be positive");
    assert!(batch.inputs.ncols() > 0, "batch must be non-empty");
    let mut total_loss = 0.0;
    let mut layer_count = 0usize;
    let mut target_index = 0usize;
    for group in groups.iter_mut() {
        for layer in group.layers.iter_mut() {
            let target = &batch.targets[target_index];
            target_index += 1;
            let (loss, _) = layer_loss_and_residual(layer, &batch.inputs, target);
            total_loss += loss;
            layer_count += 1;
            if group.frozen {
                continue;
            }
            let (grad_a, grad_b) = gradients(layer, &batch.inputs, target);
            layer.a -= lr * grad_a;
            layer.b -= lr * grad_b;
        }
    }
    total_loss / layer_count.max(1) as f64
}

/// Compares analytic gradients against central finite differences and
/// returns the maximum entrywise relative error (0/0 counts as 0).
pub fn grad_check(
    layer: &LoraLayer,
    inputs: &DMatrix<f64>,
    target: &DMatrix<f64>,
    epsilon: f64,
) -> f64 {
    assert!(
        epsilon > 0.0 && epsilon <= 1e-3,
        "epsilon must be in (0, 1e-3]"
    );
    let (grad_a, grad_b) = gradients(layer, inputs, target);
    let mut max_rel = 0.0f64;

    let loss_of = |l: &LoraLayer| layer_loss_and_residual(l, inputs, target).0;

    let mut check = |analytic: &DMatrix<f64>, pick: &dyn Fn(&mut LoraLayer) -> &mut DMatrix<f64>| {
        for i in 0..analytic.nrows() {
            for j in 0..analytic.ncols() {
                let mut plus = layer.clone();
                pick(&mut plus)[(i, j)] += epsilon;
                let mut minus = layer.clone();
                pick(&mut minus)[(i, j)] -= epsilon;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * epsilon);
                let a = analytic[(i, j)];
                let denom = a.abs().max(numeric.abs());
                let rel = if denom == 0.0 {
                    0.0
                } else {
                    (a - numeric).abs() / denom.max(1e-12)
                };
                max_rel = max_rel.max(rel);
            }
        }
    };
    check(&grad_a, &|l| &mut l.a);
    check(&grad_b, &|l| &mut l.b);
    max_rel
}

/// Outcome of the seeded invariant suite behind `lora verify`.
#[derive(Debug, Clone)]
pub struct VerificationOutcome {
    /// (check name, passed) in execution order.
    pub checks: Vec<(String, bool)>,
    pub max_grad_rel_error: f64,
}

impl VerificationOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|(_, ok)| *ok)
    }
}

/// Seeded invariant suite: init identity, merge equivalence over 100
/// random layers, and a finite-difference gradient check.
pub fn run_verification(seed: u64) -> VerificationOutcome {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let mut init_ok = true;
    for _ in 0..20 {
        let w0 = DMatrix::from_fn(12, 10, |_, _| rng.gen_range(-1.0..1.0));
        let layer = init_lora(w0.clone(), 4, 32.0, 0.02, rng.gen()).expect("valid rank");
        let x = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
        init_ok &= layer.forward(&x).unwrap() == &w0 * &x;
    }
    checks.push(("init identity (B = 0)".to_string(), init_ok));

    let mut merge_ok = true;
    for _ in 0..100 {
        let w0 = DMatrix::from_fn(9, 7, |_, _| rng.gen_range(-1.0..1.0));
        let mut layer = init_lora(w0, 3, 16.0, 0.05, rng.gen()).expect("valid rank");
        layer.b = DMatrix::from_fn(9, 3, |_, _| rng.gen_range(-1.0..1.0));
        let x = DVector::from_fn(7, |_, _| rng.gen_range(-1.0..1.0));
        let adapted = layer.forward(&x).unwrap();
        let merged = layer.merge() * &x;
        let rel = (&adapted - &merged).norm() / adapted.norm().max(1e-12);
        merge_ok &= rel <= 1e-12;
    }
    checks.push(("merge equivalence <= 1e-12".to_string(), merge_ok));

    let w0 = DMatrix::from_fn(6, 5, |_, _| rng.gen_range(-1.0..1.0));
    let mut layer = init_lora(w0, 2, 8.0, 0.1, rng.gen()).expect("valid rank");
    layer.b = DMatrix::from_fn(6, 2, |_, _| rng.gen_range(-0.5..0.5));
    let inputs = DMatrix::from_fn(5, 8, |_, _| rng.gen_range(-1.0..1.0));
    let target = DMatrix::from_fn(6, 8, |_, _| rng.gen_range(-1.0..1.0));
    let max_grad_rel_error = grad_check(&layer, &inputs, &target, 1e-6);
    checks.push((
        "gradient check < 1e-5".to_string(),
        max_grad_rel_error < 1e-5,
    ));

    VerificationOutcome {
        checks,
        max_grad_rel_error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn rank_too_large_rejected() {
        let w0 = DMatrix::<f64>::identity(8, 8);
        assert_eq!(
            init_lora(w0, 16, 32.0, 0.02, 0).unwrap_err(),
            LoraError::RankTooLarge { r: 16, d: 8, k: 8 }
        );
    }

    #[test]
    fn b_is_exactly_zero_at_init() {
        let layer = init_lora(random_matrix(6, 5, 1), 2, 32.0, 0.02, 7).unwrap();
        assert!(layer.b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_same_a() {
        let a1 = init_lora(random_matrix(6, 5, 1), 2, 32.0, 0.02, 9).unwrap();
        let a2 = init_lora(random_matrix(6, 5, 1), 2, 32.0, 0.02, 9).unwrap();
        assert_eq!(a1.a, a2.a);
    }

    #[test]
    fn fresh_layer_forward_equals_base_exactly() {
        let layer = init_lora(random_matrix(7, 4, 2), 2, 32.0, 0.02, 3).unwrap();
        let x = DVector::from_fn(4, |i, _| i as f64 - 1.5);
        let out = layer.forward(&x).unwrap();
        let base = &layer.w0 * &x;
        assert_eq!(out, base);
    }

    #[test]
    fn hand_computed_diagonal_update() {
        // W0 = I (4x4), s * B * A = diag(1, 0, 0, 0), x = ones -> (2,1,1,1)
        let mut layer = init_lora(DMatrix::identity(4, 4), 2, 2.0, 0.02, 0).unwrap();
        // s = alpha / r = 1
        layer.a = DMatrix::zeros(2, 4);
        layer.a[(0, 0)] = 1.0;
        layer.b = DMatrix::zeros(4, 2);
        layer.b[(0, 0)] = 1.0;
        let x = DVector::from_element(4, 1.0);
        let out = layer.forward(&x).unwrap();
        assert_eq!(out, DVector::from_vec(vec![2.0, 1.0, 1.0, 1.0]));
    }

    #[test]
    fn wrong_input_length_rejected() {
        let layer = init_lora(random_matrix(4, 4, 2), 2, 32.0, 0.02, 3).unwrap();
        let x = DVector::from_element(5, 1.0);
        assert!(matches!(
            layer.forward(&x),
            Err(LoraError::DimensionMismatch { expected: 4, got: 5 })
        ));
    }

    #[test]
    fn merge_matches_forward_and_is_idempotent() {
        let mut layer = init_lora(random_matrix(5, 6, 4), 3, 16.0, 0.02, 5).unwrap();
        layer.b = random_matrix(5, 3, 6);
        let merged = layer.merge();
        let x = DVector::from_fn(6, |i, _| (i as f64).sin());
        let via_merge = &merged * &x;
        let via_forward = layer.forward(&x).unwrap();
        let err = (via_merge - &via_forward).norm();
        assert!(err <= 1e-12 * (1.0 + x.norm()));
        assert_eq!(layer.merge(), merged);
    }

    #[test]
    fn fresh_merge_equals_base() {
        let layer = init_lora(random_matrix(5, 6, 4), 3, 16.0, 0.02, 5).unwrap();
        assert_eq!(layer.merge(), layer.w0);
    }

    #[test]
    fn gradient_is_zero_through_zero_b() {
        // At init B = 0, so d loss / d A = s/n B^T R X^T = 0 analytically.
        let layer = init_lora(random_matrix(6, 5, 8), 2, 32.0, 0.02, 11).unwrap();
        let inputs = random_matrix(5, 3, 12);
        let target = random_matrix(6, 3, 13);
        let (grad_a, _) = gradients(&layer, &inputs, &target);
        assert!(grad_a.iter().all(|&g| g == 0.0));
        let max_rel = grad_check(&layer, &inputs, &target, 1e-6);
        assert!(max_rel < 1e-5, "max relative error {max_rel}");
    }

    #[test]
    fn zero_batch_gives_zero_gradients() {
        let mut layer = init_lora(random_matrix(4, 4, 8), 2, 32.0, 0.02, 11).unwrap();
        layer.b = random_matrix(4, 2, 9);
        let inputs = DMatrix::zeros(4, 2);
        let target = DMatrix::zeros(4, 2);
        let (grad_a, grad_b) = gradients(&layer, &inputs, &target);
        assert!(grad_a.iter().all(|&g| g == 0.0));
        assert!(grad_b.iter().all(|&g| g == 0.0));
        assert_eq!(grad_check(&layer, &inputs, &target, 1e-6), 0.0);
    }

    #[test]
    fn grad_check_small_layer() {
        let mut layer = init_lora(random_matrix(6, 5, 20), 2, 32.0, 0.02, 21).unwrap();
        layer.b = random_matrix(6, 2, 22);
        let inputs = random_matrix(5, 4, 23);
        let target = random_matrix(6, 4, 24);
        let max_rel = grad_check(&layer, &inputs, &target, 1e-6);
        assert!(max_rel < 1e-5, "max relative error {max_rel}");
    }

    fn teacher_setup(seed: u64) -> (Vec<ParamGroup>, RegressionBatch) {
        // Rank-2 teacher: target = (W0 + delta) X with rank-2 delta.
        let d = 8;
        let k = 6;
        let w0 = random_matrix(d, k, seed);
        let u = random_matrix(d, 2, seed + 1);
        let v = random_matrix(2, k, seed + 2);
        let delta = 0.5 * (&u * &v);
        let inputs = random_matrix(k, 32, seed + 3);
        let target = (&w0 + &delta) * &inputs;
        let layer = init_lora(w0, 2, 2.0, 0.02, seed + 4).unwrap();
        let groups = vec![ParamGroup {
            name: GroupName::LanguageAttention,
            layers: vec![layer],
            frozen: false,
        }];
        (
            groups,
            RegressionBatch {
                inputs,
                targets: vec![target],
            },
        )
    }

    #[test]
    fn loss_decreases_on_rank2_teacher() {
        let (mut groups, batch) = teacher_setup(30);
        let mut window_means = Vec::new();
        let mut acc = 0.0;
        for step in 0..200 {
            acc += train_step(&mut groups, &batch, 0.05);
            if (step + 1) % 20 == 0 {
                window_means.push(acc / 20.0);
                acc = 0.0;
            }
        }
        assert!(
            window_means.windows(2).all(|w| w[1] < w[0]),
            "windows not strictly decreasing: {window_means:?}"
        );
    }

    #[test]
    fn frozen_groups_and_base_never_change() {
        let (mut groups, mut batch) = teacher_setup(40);
        // Add a frozen vision group with its own target.
        let frozen_layer = init_lora(random_matrix(8, 6, 50), 2, 2.0, 0.02, 51).unwrap();
        batch.targets.push(random_matrix(8, 32, 52));
        groups.push(ParamGroup {
            name: GroupName::VisionAttention,
            layers: vec![frozen_layer],
            frozen: true,
        });
        let frozen_before = groups[1].layers[0].param_bytes();
        let base_before: Vec<Vec<u8>> = groups
            .iter()
            .map(|g| g.layers[0].base_bytes())
            .collect();
        for _ in 0..200 {
            train_step(&mut groups, &batch, 0.05);
        }
        assert_eq!(groups[1].layers[0].param_bytes(), frozen_before);
        for (group, before) in groups.iter().zip(&base_before) {
            assert_eq!(&group.layers[0].base_bytes(), before);
        }
    }

    #[test]
    fn stage_configs_follow_freeze_policy() {
        let images = StageConfig::for_stage(Stage::DaptImages);
        assert!(images.frozen_groups.contains(&GroupName::LanguageAttention));
        assert_eq!(images.max_output_len, 768);
        let vit = StageConfig::for_stage(Stage::Vit);
        assert!(vit.frozen_groups.is_empty());
        assert_eq!(vit.max_output_len, 1024);
        assert_eq!(vit.epochs, 3);
    }
}
