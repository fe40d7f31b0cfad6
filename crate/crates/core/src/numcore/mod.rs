//! Dense matrices, reverse-mode differentiation and a finite-difference
//! gradient checker. Everything else in the crate is built on these.

mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use gradcheck::{grad_check, DEFAULT_EPS};
pub use matrix::{apply_nonlinear, sigmoid, Activation, Matrix};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};

pub(crate) use tape::softmax_columns;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_store(x: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("x", Matrix::scalar(x));
        (s, id)
    }

    #[test]
    fn square_gradient() {
        let (store, x) = scalar_store(3.0);
        let mut t = Tape::new();
        t.bind(&store);
        let xv = t.param(x);
        let loss = t.square(xv);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.param(x).get(0, 0), 6.0);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let (store, x) = scalar_store(0.0);
        let mut t = Tape::new();
        t.bind(&store);
        let xv = t.param(x);
        let loss = t.sigmoid(xv);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.param(x).get(0, 0), 0.25);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut store = ParamStore::new();
        let id = store.add("v", Matrix::column(&[1.0, 2.0]));
        let mut t = Tape::new();
        t.bind(&store);
        let v = t.param(id);
        let y = t.tanh(v);
        assert!(matches!(t.backward(y), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn disconnected_leaf_gets_exact_zero() {
        let mut store = ParamStore::new();
        let used = store.add("used", Matrix::scalar(2.0));
        let unused = store.add("unused", Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let mut t = Tape::new();
        t.bind(&store);
        let u = t.param(used);
        let _dangling = t.tanh(t.param(unused));
        let loss = t.square(u);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.param(unused), &Matrix::zeros(1, 2));
        assert_eq!(g.param(used).get(0, 0), 4.0);
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let w = store.add_glorot("w", 3, 4, &mut rng);
        let x = Matrix::column(&[0.3, -0.2, 0.9, 0.1]);

        let build = |t: &mut Tape| {
            t.bind(&store);
            let xi = t.input(x.clone());
            let h = t.matmul(t.param(w), xi).unwrap();
            let a = t.tanh(h);
            let l1 = t.mean_all(a);
            let sq = t.square(h);
            let l2 = t.mean_all(sq);
            (l1, l2)
        };

        let mut t = Tape::new();
        let (l1, l2) = build(&mut t);
        let total = t.add(l1, l2).unwrap();
        let g_sum = t.backward(total).unwrap();
        let g1 = t.backward(l1).unwrap();
        let g2 = t.backward(l2).unwrap();
        let expect = g1.param(w).add(g2.param(w)).unwrap();
        assert!(g_sum.param(w).sub(&expect).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn random_chain_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let w = store.add_glorot("w", 4, 3, &mut rng);
            let b = store.add("b", Matrix::column(&[0.1, -0.2, 0.3, 0.05]));
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let err = grad_check(&store, DEFAULT_EPS, |s| {
                let mut t = Tape::new();
                t.bind(s);
                let xi = t.input(Matrix::column(&x));
                let z = t.matmul(t.param(w), xi)?;
                let z = t.add_bias(z, t.param(b))?;
                let a = t.sigmoid(z);
                let q = t.square(a);
                let l = t.mean_all(q);
                Ok((t, l))
            })
            .unwrap();
            assert!(err < 1e-6, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn every_primitive_passes_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let a = store.add_glorot("a", 3, 4, &mut rng);
        let b = store.add_glorot("b", 3, 4, &mut rng);
        let r = store.add_glorot("r", 1, 4, &mut rng);
        let err = grad_check(&store, DEFAULT_EPS, |s| {
            let mut t = Tape::new();
            t.bind(s);
            let (a, b, r) = (t.param(a), t.param(b), t.param(r));
            let d = t.col_dot(a, b)?;
            let sm_in = t.vstack(&[d, r])?;
            let sm = t.softmax_cols(sm_in);
            let row = t.rows(sm, 1, 1)?;
            let sc = t.scale_cols(a, row)?;
            let diff = t.sub(sc, b)?;
            let m = t.mul(diff, a)?;
            let om = t.one_minus(m);
            let th = t.tanh(om);
            let tot = t.sum(&[th, a, b])?;
            let sc2 = t.scale(tot, 0.5);
            let q = t.square(sc2);
            let l = t.mean_all(q);
            Ok((t, l))
        })
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn linear_function_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let w = store.add_glorot("w", 2, 5, &mut rng);
        let err = grad_check(&store, DEFAULT_EPS, |s| {
            let mut t = Tape::new();
            t.bind(s);
            let scaled = t.scale(t.param(w), 3.0);
            let l = t.mean_all(scaled);
            Ok((t, l))
        })
        .unwrap();
        assert!(err < 1e-9, "relative error {err}");
    }

    #[test]
    fn zero_eps_is_a_contract_error() {
        let (store, x) = scalar_store(1.0);
        let res = grad_check(&store, 0.0, |s| {
            let mut t = Tape::new();
            t.bind(s);
            let l = t.square(t.param(x));
            Ok((t, l))
        });
        assert!(matches!(res, Err(crate::Error::Contract(_))));
    }

    #[test]
    fn non_finite_loss_is_a_numeric_error() {
        let (store, x) = scalar_store(1.0);
        let res = grad_check(&store, 1e-5, |s| {
            let mut t = Tape::new();
            t.bind(s);
            let big = t.scale(t.param(x), f64::INFINITY);
            Ok((t, big))
        });
        assert!(matches!(res, Err(crate::Error::Numeric(_))));
    }
}
