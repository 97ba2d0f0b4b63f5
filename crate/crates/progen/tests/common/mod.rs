//! Shared helpers for the integration suites.

use progen::tensor::{Graph, Tensor, TensorError};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Checks analytic gradients of `f` against central finite differences.
///
/// `f` maps leaf tensors to any tensor; the check contracts the output with a
/// fixed random cotangent to form a scalar, so non-uniform upstream gradients
/// are exercised. Inputs are drawn from `sample`. The error bound is
/// `|a - n| <= tol * max(1, |a|, |n|)` per coordinate.
pub fn gradcheck<F, S>(
    name: &str,
    rng: &mut ChaCha8Rng,
    shapes: &[Vec<usize>],
    trials: usize,
    mut sample: S,
    f: F,
) where
    F: Fn(&mut Graph, &[Tensor]) -> Result<Tensor, TensorError>,
    S: FnMut(&mut ChaCha8Rng) -> f64,
{
    let h = 1e-6;
    let tol = 1e-4;
    for trial in 0..trials {
        let inputs: Vec<Vec<f64>> = shapes
            .iter()
            .map(|s| (0..s.iter().product()).map(|_| sample(rng)).collect())
            .collect();
        let cotangent_seed: u64 = rng.random();

        let eval = |data: &[Vec<f64>]| -> f64 {
            let mut g = Graph::inference();
            let tensors: Vec<Tensor> = shapes
                .iter()
                .zip(data)
                .map(|(s, d)| Tensor::new(s.clone(), d.clone()).unwrap())
                .collect();
            let out = f(&mut g, &tensors).unwrap();
            contract(&mut g, &out, cotangent_seed)
        };

        // analytic gradients
        let mut g = Graph::recording_eval(0);
        let leaves: Vec<Tensor> = shapes
            .iter()
            .zip(&inputs)
            .map(|(s, d)| g.leaf(&Tensor::new(s.clone(), d.clone()).unwrap()))
            .collect();
        let out = f(&mut g, &leaves).unwrap();
        let loss = contract_tracked(&mut g, &out, cotangent_seed);
        let grads = g.backward(&loss).unwrap();

        for (i, leaf) in leaves.iter().enumerate() {
            let analytic = grads.dense(leaf);
            for coord in 0..analytic.len() {
                let mut plus = inputs.clone();
                plus[i][coord] += h;
                let mut minus = inputs.clone();
                minus[i][coord] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let denom = analytic[coord].abs().max(numeric.abs()).max(1.0);
                let err = (analytic[coord] - numeric).abs() / denom;
                assert!(
                    err < tol,
                    "{name}: trial {trial}, input {i}, coord {coord}: analytic {} vs numeric {numeric} (rel err {err:.3e})",
                    analytic[coord]
                );
            }
        }
    }
}

fn contract(g: &mut Graph, out: &Tensor, seed: u64) -> f64 {
    contract_tracked(g, out, seed).item()
}

fn contract_tracked(g: &mut Graph, out: &Tensor, seed: u64) -> Tensor {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cot: Vec<f64> = (0..out.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c = Tensor::new(out.shape().to_vec(), cot).unwrap();
    let prod = g.mul(out, &c).unwrap();
    g.sum_all(&prod).unwrap()
}
