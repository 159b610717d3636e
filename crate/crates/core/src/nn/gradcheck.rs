//! Central finite-difference gradient verification.
//!
//! Used by the unit tests of every network block and by the acceptance
//! suite. The analytic path under test is the tape backward pass; the
//! oracle is `(f(x+h) - f(x-h)) / 2h` evaluated by rebuilding the graph,
//! which never touches the backward code.

use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};

/// Checks the gradient of a scalar-valued graph w.r.t. every leaf.
///
/// `build` receives the leaves bound as gradient-tracked nodes and must
/// return the scalar loss node. Up to `max_coords` coordinates per leaf
/// are probed (all of them when the leaf is small), chosen by a seeded
/// shuffle so runs are reproducible.
///
/// A coordinate passes when `|analytic - fd| <= abs_floor` or the error
/// relative to `max(|analytic|, |fd|)` is within `rel_tol`.
pub fn check_gradients(
    leaves: &[ArrayD<f64>],
    build: impl Fn(&mut Graph, &[Var]) -> Var,
    step: f64,
    rel_tol: f64,
    max_coords: usize,
    seed: u64,
) -> Result<(), String> {
    let eval = |values: &[ArrayD<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|v| g.param(v.clone())).collect();
        let loss = build(&mut g, &vars);
        g.scalar(loss)
    };

    // Analytic gradients from one tape pass.
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|v| g.param(v.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss);
    let analytic: Vec<ArrayD<f64>> = vars
        .iter()
        .zip(leaves.iter())
        .map(|(v, leaf)| {
            grads
                .get(*v)
                .cloned()
                .unwrap_or_else(|| ArrayD::zeros(leaf.raw_dim()))
        })
        .collect();

    let abs_floor = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work: Vec<ArrayD<f64>> = leaves.to_vec();

    for (li, leaf) in leaves.iter().enumerate() {
        let n = leaf.len();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > max_coords {
            coords.shuffle(&mut rng);
            coords.truncate(max_coords);
        }
        for &ci in &coords {
            let orig = work[li].as_slice().expect("standard layout")[ci];

            work[li].as_slice_mut().unwrap()[ci] = orig + step;
            let f_plus = eval(&work);
            work[li].as_slice_mut().unwrap()[ci] = orig - step;
            let f_minus = eval(&work);
            work[li].as_slice_mut().unwrap()[ci] = orig;

            let fd = (f_plus - f_minus) / (2.0 * step);
            let an = analytic[li].as_slice().unwrap()[ci];
            let diff = (an - fd).abs();
            let scale = an.abs().max(fd.abs());
            if diff > abs_floor && diff > rel_tol * scale {
                return Err(format!(
                    "leaf {li} coord {ci}: analytic {an:.9e} vs finite-diff {fd:.9e} \
                     (abs diff {diff:.3e}, rel {:.3e} > tol {rel_tol:.1e})",
                    diff / scale.max(f64::MIN_POSITIVE)
                ));
            }
        }
    }
    Ok(())
}
