//! Analytic gradients against central finite differences.

use autoreset::nn::{Matrix, Mlp, MlpSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn loss(net: &Mlp, s: &Matrix, a: Option<&Matrix>, g: &Matrix) -> f64 {
    let out = net.predict(s, a).unwrap();
    out.as_slice().iter().zip(g.as_slice()).map(|(o, w)| o * w).sum()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Smallest |pre-activation| over all hidden units, recomputed independently of
/// the library's forward pass. Central differences straddling a ReLU kink are
/// meaningless, so cases with a unit near zero are redrawn.
fn min_hidden_preactivation(net: &Mlp, s: &Matrix, a: Option<&Matrix>) -> f64 {
    let spec = net.spec();
    let mut min_abs = f64::INFINITY;
    for r in 0..s.rows() {
        let mut x: Vec<f64> = s.row(r).to_vec();
        let n = net.layers().len();
        for (idx, layer) in net.layers().iter().enumerate() {
            if idx == 1 && spec.action_inject.is_some() {
                x.extend_from_slice(a.unwrap().row(r));
            }
            let mut z = layer.bias.clone();
            for (i, xi) in x.iter().enumerate() {
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj += xi * layer.weights[i * layer.fan_out + j];
                }
            }
            if idx + 1 < n {
                min_abs = z.iter().fold(min_abs, |m, v| m.min(v.abs()));
                x = z.iter().map(|v| v.max(0.0)).collect();
            }
        }
    }
    min_abs
}

fn check_case(rng: &mut ChaCha8Rng, spec: &MlpSpec) -> (f64, f64, f64) {
    loop {
        let mut net = Mlp::init(spec, rng.random()).unwrap();
        let flat: Vec<f64> = (0..net.param_count()).map(|_| rng.random_range(-0.6..0.6)).collect();
        net.set_flat(&flat).unwrap();
        let rows = rng.random_range(1..4);
        let s = random_matrix(rng, rows, spec.input_dim, 1.5);
        let a = spec.action_dim().map(|d| random_matrix(rng, rows, d, 1.0));
        let g = random_matrix(rng, rows, spec.output_dim, 1.0);
        if min_hidden_preactivation(&net, &s, a.as_ref()) < 1e-3 {
            continue;
        }
        let (_, cache) = net.forward(&s, a.as_ref()).unwrap();
        let (grads, inputs) = net.backward(&cache, &g).unwrap();

        let mut worst_param: f64 = 0.0;
        let analytic = grads.flat();
        for i in 0..flat.len() {
            let mut p = flat.clone();
            p[i] += H;
            net.set_flat(&p).unwrap();
            let up = loss(&net, &s, a.as_ref(), &g);
            p[i] -= 2.0 * H;
            net.set_flat(&p).unwrap();
            let down = loss(&net, &s, a.as_ref(), &g);
            worst_param = worst_param.max(rel_err(analytic[i], (up - down) / (2.0 * H)));
        }
        net.set_flat(&flat).unwrap();

        let mut worst_state: f64 = 0.0;
        for i in 0..s.as_slice().len() {
            let mut sp = s.clone();
            sp.as_mut_slice()[i] += H;
            let up = loss(&net, &sp, a.as_ref(), &g);
            sp.as_mut_slice()[i] -= 2.0 * H;
            let down = loss(&net, &sp, a.as_ref(), &g);
            worst_state = worst_state.max(rel_err(inputs.state.as_slice()[i], (up - down) / (2.0 * H)));
        }

        let mut worst_action: f64 = 0.0;
        if let (Some(a), Some(ag)) = (a.as_ref(), inputs.action.as_ref()) {
            for i in 0..a.as_slice().len() {
                let mut ap = a.clone();
                ap.as_mut_slice()[i] += H;
                let up = loss(&net, &s, Some(&ap), &g);
                ap.as_mut_slice()[i] -= 2.0 * H;
                let down = loss(&net, &s, Some(&ap), &g);
                worst_action = worst_action.max(rel_err(ag.as_slice()[i], (up - down) / (2.0 * H)));
            }
        }
        return (worst_param, worst_state, worst_action);
    }
}

#[test]
fn parameter_state_and_action_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let specs = [
        MlpSpec::policy(3, &[8, 6], 2),
        MlpSpec::state_action(4, 2, &[7, 5]),
        MlpSpec::state_action(6, 1, &[9]),
        MlpSpec::policy(2, &[5], 1),
    ];
    for case in 0..100 {
        let spec = &specs[case % specs.len()];
        let (p, s, a) = check_case(&mut rng, spec);
        assert!(p < TOL, "case {case}: param rel err {p}");
        assert!(s < TOL, "case {case}: state rel err {s}");
        assert!(a < TOL, "case {case}: action rel err {a}");
    }
}

#[test]
fn forward_is_lipschitz_smooth_under_tiny_perturbation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = MlpSpec::state_action(4, 2, &[16, 16]);
    for _ in 0..100 {
        let net = Mlp::init(&spec, rng.random()).unwrap();
        let s = random_matrix(&mut rng, 1, 4, 2.0);
        let a = random_matrix(&mut rng, 1, 2, 1.0);
        // Lipschitz bound: product of layer operator norms, bounded by Frobenius norms.
        let lip: f64 = net
            .layers()
            .iter()
            .map(|l| l.weights.iter().map(|w| w * w).sum::<f64>().sqrt())
            .product();
        let mut sp = s.clone();
        sp.as_mut_slice()[0] += 1e-9;
        let d = (net.predict(&sp, Some(&a)).unwrap().get(0, 0) - net.predict(&s, Some(&a)).unwrap().get(0, 0)).abs();
        assert!(d <= lip * 1e-9 + 1e-15);
        assert!(d <= 1e-6);
    }
}
