//! Finite-difference validation of the analytic gradients.
//!
//! Term isolation works through batch composition: a fully labeled batch with
//! alpha = beta = 0 exercises only the meta-class term, a fully unlabeled
//! batch reduces the objective to whichever of the other two terms has a
//! nonzero coefficient, and a mixed batch with both coefficients at one
//! checks the composite.

use combem::gradcheck::check_total_gradients;
use combem::model::{Hyperparams, Model};
use combem::objectives::{Batch, BatchItem};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const D: usize = 4;
const HIDDEN: usize = 8;
const D2: usize = 4;
const SIZES: [usize; 3] = [2, 2, 2];
const BATCH: usize = 8;
const FD_STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn build_case(seed: u64, n_labeled: usize, alpha: f64, beta: f64) -> (Model<f64>, Batch<f64>) {
    let hyper = Hyperparams { alpha, beta, gamma: 0.3, ..Hyperparams::default() };
    let model = Model::init(D, HIDDEN, D2, &SIZES, hyper, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(2654435761).wrapping_add(17));
    let items = (0..BATCH)
        .map(|i| {
            let labeled = i < n_labeled;
            BatchItem {
                view_a: (0..D).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                view_b: (0..D).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                label: labeled.then(|| rng.gen_range(0..2u32)),
                meta_labels: labeled
                    .then(|| SIZES.iter().map(|&k| rng.gen_range(0..k as u32)).collect()),
            }
        })
        .collect();
    (model, Batch { items })
}

fn assert_instances(name: &str, make: impl Fn(u64) -> (Model<f64>, Batch<f64>)) {
    for seed in 0..20u64 {
        let (model, batch) = make(seed);
        let report = check_total_gradients(&model, &batch, FD_STEP).unwrap();
        assert!(
            report.max_rel_err < TOL,
            "{name} seed {seed}: rel err {} at param {} (analytic {}, numeric {})",
            report.max_rel_err,
            report.worst_index,
            report.worst_analytic,
            report.worst_numeric
        );
    }
}

#[test]
fn meta_term_gradients_agree_with_finite_differences() {
    assert_instances("meta", |s| build_case(s, BATCH, 0.0, 0.0));
}

#[test]
fn sim_term_gradients_agree_with_finite_differences() {
    assert_instances("sim", |s| build_case(s, 0, 1.0, 0.0));
}

#[test]
fn cons_term_gradients_agree_with_finite_differences() {
    assert_instances("cons", |s| build_case(s, 0, 0.0, 1.0));
}

#[test]
fn composite_gradients_agree_with_finite_differences() {
    assert_instances("total", |s| build_case(s, BATCH / 2, 1.0, 1.0));
}
