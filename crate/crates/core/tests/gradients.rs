//! Finite-difference checks of every differentiable operation and of the
//! full parser loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spokenparse::nn::{grad_check, Evaluation, GradCheckConfig, Graph, NnError, ParamStore, Tensor, Var};

mod common;
use common::{full_model_check, three_word_setup};

const OP_TOLERANCE: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Checks `op` applied to freshly sampled parameters, reduced to a scalar
/// through a fixed random projection so every output coordinate matters.
fn check_op(shapes: &[(usize, usize)], op: impl Fn(&mut Graph, &[Var]) -> Result<Var, NnError>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut params = ParamStore::new();
    for (i, &(r, c)) in shapes.iter().enumerate() {
        params.add(format!("p{i}"), random(&mut rng, r, c)).unwrap();
    }
    let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
    let mut projection: Option<Tensor> = None;
    let report = grad_check(&mut params, GradCheckConfig::default(), |p, need| {
        let mut g = Graph::new(p, false, 0);
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
        let out = op(&mut g, &vars)?;
        let shape = g.value(out).shape().to_vec();
        let w = projection
            .get_or_insert_with(|| {
                let mut r = ChaCha8Rng::seed_from_u64(7);
                let n: usize = shape.iter().product();
                Tensor::new(shape.clone(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
            })
            .clone();
        let loss = g.weighted_sum(out, w)?;
        Ok(Evaluation {
            loss: g.scalar(loss),
            gradients: if need { Some(g.backward(loss)?) } else { None },
            signature: g.signature(),
        })
    })
    .unwrap();
    report.max_rel_error
}

macro_rules! op_test {
    ($name:ident, $shapes:expr, $op:expr) => {
        #[test]
        fn $name() {
            let err = check_op(&$shapes, $op);
            assert!(err < OP_TOLERANCE, "max relative error {err}");
        }
    };
}

op_test!(matmul, [(3, 4), (4, 5)], |g, v| g.matmul(v[0], v[1]));
op_test!(matmul_nt, [(3, 4), (5, 4)], |g, v| g.matmul_nt(v[0], v[1]));
op_test!(add, [(3, 4), (3, 4)], |g, v| g.add(v[0], v[1]));
op_test!(sub, [(3, 4), (3, 4)], |g, v| g.sub(v[0], v[1]));
op_test!(add_bias, [(3, 4), (1, 4)], |g, v| g.add_bias(v[0], v[1]));
op_test!(linear, [(3, 4), (4, 2), (1, 2)], |g, v| g.linear(v[0], v[1], v[2]));
op_test!(scale, [(3, 4)], |g, v| Ok(g.scale(v[0], -2.5)));
op_test!(relu, [(6, 5)], |g, v| Ok(g.relu(v[0])));
op_test!(softmax_rows, [(4, 5)], |g, v| g.softmax(v[0], 1));
op_test!(softmax_cols, [(4, 5)], |g, v| g.softmax(v[0], 0));
op_test!(layer_norm, [(3, 6), (1, 6), (1, 6)], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));
op_test!(conv1d, [(7, 2), (3, 6), (1, 3)], |g, v| g.conv1d(v[0], v[1], v[2], 3));
op_test!(conv1d_even_width, [(5, 2), (2, 8), (1, 2)], |g, v| g.conv1d(v[0], v[1], v[2], 4));
op_test!(max_pool_time, [(6, 4)], |g, v| g.max_pool_time(v[0]));
op_test!(embedding, [(5, 3)], |g, v| g.embedding(v[0], &[4, 0, 4, 2]));
op_test!(concat_cols, [(3, 2), (3, 4)], |g, v| g.concat_cols(&[v[0], v[1]]));
op_test!(concat_rows, [(2, 3), (4, 3)], |g, v| g.concat_rows(&[v[0], v[1]]));
op_test!(slice_cols, [(3, 6)], |g, v| g.slice_cols(v[0], 1, 4));
op_test!(slice_rows, [(5, 3)], |g, v| g.slice_rows(v[0], 2, 5));
op_test!(span_diff, [(4, 3)], |g, v| g.span_diff(v[0], &[(0, 1), (0, 3), (1, 3), (2, 2)]));
op_test!(sum, [(3, 3)], |g, v| Ok(g.sum(v[0])));
op_test!(sum_squares, [(3, 3)], |g, v| Ok(g.sum_squares(v[0])));

#[test]
fn full_model_loss() {
    let (parser, sentence) = three_word_setup();
    let report = full_model_check(&parser, &sentence);
    for p in &report.params {
        println!(
            "{:40} checked {:3} skipped {:3} max rel {:.2e} at {:?}",
            p.name, p.checked, p.skipped, p.max_rel_error, p.worst
        );
    }
    assert!(report.max_rel_error < 1e-3, "max relative error {}", report.max_rel_error);
}
