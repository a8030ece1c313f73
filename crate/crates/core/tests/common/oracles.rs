//! Independent oracles shared by the integration and acceptance suites.

use kgnsf::losses::{nsf_loss, ns_baseline_loss, LossConfig};
use kgnsf::models::{Batch, LossGradients};
use kgnsf::{Matrix, ModelKind, PairForm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error, so coordinates whose true
/// gradient is zero compare on absolute error.
pub const REL_FLOOR: f64 = 1e-6;

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Head,
    Relation,
    Tail,
}

fn block(g: &LossGradients, b: Block) -> &Matrix {
    match b {
        Block::Head => &g.d_head,
        Block::Relation => &g.d_relation,
        Block::Tail => &g.d_tail,
    }
}

/// Three b×d input matrices treated as the free variables of a loss.
#[derive(Clone)]
pub struct Inputs {
    pub h: Matrix,
    pub r: Matrix,
    pub t: Matrix,
}

impl Inputs {
    pub fn random(b: usize, d: usize, rng: &mut ChaCha8Rng) -> Self {
        Inputs {
            h: random_matrix(b, d, rng),
            r: random_matrix(b, d, rng),
            t: random_matrix(b, d, rng),
        }
    }

    fn get_mut(&mut self, b: Block) -> &mut Matrix {
        match b {
            Block::Head => &mut self.h,
            Block::Relation => &mut self.r,
            Block::Tail => &mut self.t,
        }
    }
}

/// Compares analytic gradients of `f` against central differences at
/// `samples` random coordinates; returns the largest relative error.
pub fn max_fd_error(
    inputs: &Inputs,
    analytic: &LossGradients,
    samples: usize,
    rng: &mut ChaCha8Rng,
    f: impl Fn(&Inputs) -> f64,
) -> f64 {
    let (b, d) = inputs.h.shape();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let blk = [Block::Head, Block::Relation, Block::Tail][rng.gen_range(0..3)];
        let (i, j) = (rng.gen_range(0..b), rng.gen_range(0..d));
        let mut plus = inputs.clone();
        plus.get_mut(blk)[(i, j)] += FD_STEP;
        let mut minus = inputs.clone();
        minus.get_mut(blk)[(i, j)] -= FD_STEP;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(block(analytic, blk)[(i, j)], numeric));
    }
    worst
}

/// Batch built with a fixed SDBN seed so every evaluation draws the same
/// permutations.
pub fn batch_of(inputs: &Inputs, form: PairForm, sdbn: Option<usize>, sdbn_seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(sdbn_seed);
    Batch::from_matrices(form, inputs.h.clone(), inputs.r.clone(), inputs.t.clone(), sdbn, &mut rng).unwrap()
}

pub fn nsf_gradient_error(form: PairForm, config: &LossConfig, sdbn: Option<usize>, b: usize, d: usize, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = Inputs::random(b, d, &mut rng);
    let (_, grads) = nsf_loss(&batch_of(&inputs, form, sdbn, seed), config).unwrap();
    max_fd_error(&inputs, &grads, samples, &mut rng, |x| {
        nsf_loss(&batch_of(x, form, sdbn, seed), config).unwrap().0.total
    })
}

/// Gradient error of a baseline loss over both the positive and negative
/// batch inputs.
pub fn baseline_gradient_error(kind: ModelKind, n_neg: usize, b: usize, d: usize, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = Inputs::random(b, d, &mut rng);
    let neg = Inputs::random(b * n_neg, d, &mut rng);
    let form = kind.pair_form();
    // a large margin keeps most hinge terms active
    let margin = 3.0;
    let loss = |p: &Inputs, n: &Inputs| {
        ns_baseline_loss(&batch_of(p, form, None, 0), &batch_of(n, form, None, 0), kind, margin)
            .unwrap()
            .0
            .total
    };
    let (_, g) = ns_baseline_loss(&batch_of(&pos, form, None, 0), &batch_of(&neg, form, None, 0), kind, margin).unwrap();
    let half = samples / 2;
    let e_pos = max_fd_error(&pos, &g.positive, half, &mut rng, |p| loss(p, &neg));
    let e_neg = max_fd_error(&neg, &g.negative, samples - half, &mut rng, |n| loss(&pos, n));
    e_pos.max(e_neg)
}

/// `Σ_i ‖h_i + r_i − t_i‖²` by direct summation.
pub fn transe_direct(h: &Matrix, r: &Matrix, t: &Matrix) -> f64 {
    let mut s = 0.0;
    for i in 0..h.rows() {
        for j in 0..h.cols() {
            let u = h[(i, j)] + r[(i, j)] - t[(i, j)];
            s += u * u;
        }
    }
    s
}

/// `Σ_i Σ_j h_ij r_ij t_ij` by triple loop.
pub fn distmult_direct(h: &Matrix, r: &Matrix, t: &Matrix) -> f64 {
    let mut s = 0.0;
    for i in 0..h.rows() {
        for j in 0..h.cols() {
            s += h[(i, j)] * r[(i, j)] * t[(i, j)];
        }
    }
    s
}
