//! Seeded random model instances for cross-checking the estimation code.
//!
//! Every generator is deterministic in its seed (ChaCha8) and draws the
//! response from the model it returns, so the generating variance state is
//! a sensible place to evaluate identities and the fits have an interior
//! optimum to find.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sop_core::{diff_matrix, Family, MixedModelSpec, RandomBlock, VarianceState};

use crate::dense::block_g;

/// A generated model together with the variance state that produced its
/// response.
pub struct Generated {
    pub spec: MixedModelSpec,
    pub state: VarianceState,
}

fn normal_matrix(rng: &mut ChaCha8Rng, nrows: usize, ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(nrows, ncols, |_, _| rng.sample(StandardNormal))
}

fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Fixed design with an intercept and `r - 1` standard normal covariates.
fn fixed_design(rng: &mut ChaCha8Rng, n: usize, r: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, r, |i, j| {
        if j == 0 {
            1.0
        } else {
            let _ = i;
            rng.sample(StandardNormal)
        }
    })
}

/// Draw one coefficient vector from `N(0, G_k)` for a block at a state.
fn sample_block_effects(
    rng: &mut ChaCha8Rng,
    block: &RandomBlock,
    sigma2: &[f64],
) -> DVector<f64> {
    let g = block_g(block, sigma2);
    let chol = nalgebra::Cholesky::new(g).expect("block covariance must be positive definite");
    chol.l() * normal_vector(rng, block.q())
}

/// Assemble the response `X beta + sum_k Z_k u_k + sqrt(phi) eps` and build
/// the model around it.
fn build_gaussian(
    rng: &mut ChaCha8Rng,
    x: DMatrix<f64>,
    blocks: Vec<RandomBlock>,
    state: VarianceState,
) -> Generated {
    let n = x.nrows();
    let beta = normal_vector(rng, x.ncols());
    let mut y = &x * beta;
    for (k, block) in blocks.iter().enumerate() {
        let u = sample_block_effects(rng, block, state.block(k));
        y += block.z() * u;
    }
    y += state.phi.sqrt() * normal_vector(rng, n);
    let spec =
        MixedModelSpec::new(x, blocks, Family::gaussian(), y).expect("generated model is valid");
    Generated { spec, state }
}

/// Classic setting: every block isotropic with a single identity atom.
pub fn harville_instance(seed: u64) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(40..=80);
    let r = rng.gen_range(1..=3);
    let n_blocks = rng.gen_range(1..=2);

    let x = fixed_design(&mut rng, n, r);
    let mut blocks = Vec::with_capacity(n_blocks);
    let mut sigma2 = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let q = rng.gen_range(3..=7);
        let z = normal_matrix(&mut rng, n, q);
        blocks.push(
            RandomBlock::new(z, vec![DMatrix::identity(q, q)], vec!["iso".into()])
                .expect("isotropic block is valid"),
        );
        sigma2.push(vec![rng.gen_range(0.3..2.0)]);
    }
    let state = VarianceState {
        sigma2,
        phi: rng.gen_range(0.3..1.5),
    };
    build_gaussian(&mut rng, x, blocks, state)
}

/// A block whose atoms are overlapping non-negative diagonals summing to a
/// strictly positive diagonal.
fn diagonal_block(rng: &mut ChaCha8Rng, n: usize) -> (RandomBlock, Vec<f64>) {
    let q = rng.gen_range(6..=14);
    let p = rng.gen_range(2..=3);
    let z = normal_matrix(rng, n, q);
    let mut atoms = Vec::with_capacity(p);
    let mut labels = Vec::with_capacity(p);
    for l in 0..p {
        let mut d = DMatrix::<f64>::zeros(q, q);
        for j in 0..q {
            d[(j, j)] = rng.gen_range(0.0..1.0) + if l == 0 { 0.2 } else { 0.0 };
        }
        atoms.push(d);
        labels.push(format!("diag_{l}"));
    }
    let sigma2 = (0..p).map(|_| rng.gen_range(0.3..3.0)).collect();
    (
        RandomBlock::new(z, atoms, labels).expect("diagonal block is valid"),
        sigma2,
    )
}

/// A block with one singular dense difference penalty and one identity atom.
fn dense_block(rng: &mut ChaCha8Rng, n: usize) -> (RandomBlock, Vec<f64>) {
    let q = rng.gen_range(5..=10);
    let order = rng.gen_range(1..=2);
    let z = normal_matrix(rng, n, q);
    let d = diff_matrix(order, q).expect("difference matrix is valid");
    let d = d.values();
    let atoms = vec![d.transpose() * d, DMatrix::identity(q, q)];
    let labels = vec!["rough".to_string(), "ridge".to_string()];
    let sigma2 = vec![rng.gen_range(0.3..3.0), rng.gen_range(0.3..3.0)];
    (
        RandomBlock::new(z, atoms, labels).expect("dense block is valid"),
        sigma2,
    )
}

/// General instance: one or two blocks mixing diagonal and dense atom sets,
/// n at most 200.
pub fn mixed_instance(seed: u64) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(60..=200);
    let r = rng.gen_range(1..=3);
    let n_blocks = rng.gen_range(1..=2);

    let x = fixed_design(&mut rng, n, r);
    let mut blocks = Vec::with_capacity(n_blocks);
    let mut sigma2 = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let (block, s2) = if rng.gen_range(0..2) == 0 {
            diagonal_block(&mut rng, n)
        } else {
            dense_block(&mut rng, n)
        };
        blocks.push(block);
        sigma2.push(s2);
    }
    let state = VarianceState {
        sigma2,
        phi: rng.gen_range(0.4..2.0),
    };
    build_gaussian(&mut rng, x, blocks, state)
}

/// A model violating the first positivity condition: the second block's
/// design columns lie inside the fixed-effect column space.
pub fn span_violating_instance(seed: u64) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(50..=100);
    let r = 2;
    let x = fixed_design(&mut rng, n, r);

    let q0 = rng.gen_range(4..=6);
    let healthy = RandomBlock::new(
        normal_matrix(&mut rng, n, q0),
        vec![DMatrix::identity(q0, q0)],
        vec!["iso".into()],
    )
    .expect("healthy block is valid");

    let q1 = 3;
    let mixer = normal_matrix(&mut rng, r, q1);
    let z1 = &x * mixer;
    let inside = RandomBlock::new(z1, vec![DMatrix::identity(q1, q1)], vec!["iso".into()])
        .expect("in-span block is structurally valid");

    let state = VarianceState {
        sigma2: vec![vec![1.0], vec![1.0]],
        phi: 1.0,
    };
    build_gaussian(&mut rng, x, vec![healthy, inside], state)
}

/// A model violating the second positivity condition: the response equals
/// `X beta` exactly, so the working response lies inside the fixed-effect
/// column space.
pub fn response_violating_instance(seed: u64) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(50..=100);
    let r = 2;
    let x = fixed_design(&mut rng, n, r);
    let q = rng.gen_range(4..=6);
    let block = RandomBlock::new(
        normal_matrix(&mut rng, n, q),
        vec![DMatrix::identity(q, q)],
        vec!["iso".into()],
    )
    .expect("block is valid");
    let beta = normal_vector(&mut rng, r);
    let y = &x * beta;
    let spec = MixedModelSpec::new(x, vec![block], Family::gaussian(), y)
        .expect("generated model is valid");
    Generated {
        spec,
        state: VarianceState {
            sigma2: vec![vec![1.0]],
            phi: 1.0,
        },
    }
}
