//! Minimal reverse-mode differentiation over dense `f64` matrices, plus the
//! AdamW optimizer and a finite-difference gradient checker.

mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{Gradients, Graph, NodeId, OpKind};
pub use optim::{adamw_step, cosine_factor, OptimizerConfig};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn store_with(rng: &mut ChaCha8Rng, shapes: &[(&str, usize, usize)]) -> ParamStore {
        let mut s = ParamStore::new();
        for &(n, r, c) in shapes {
            s.insert(n, rand_tensor(rng, r, c)).unwrap();
        }
        s
    }

    fn check(
        store: &mut ParamStore,
        f: impl Fn(&mut Graph, &ParamStore) -> crate::Result<NodeId>,
    ) -> GradCheckReport {
        let opts = GradCheckOptions {
            max_entries_per_param: 64,
            ..Default::default()
        };
        grad_check(f, store, &opts).unwrap()
    }

    // Sum of a fixed random projection keeps every output entry's gradient distinct.
    fn project(g: &mut Graph, x: NodeId, seed: u64) -> crate::Result<NodeId> {
        let [r, c] = g.shape(x);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = g.constant(rand_tensor(&mut rng, r, c));
        let d = g.sub(x, w)?;
        let sq = g.square(d)?;
        g.sum(sq)
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = store_with(
            &mut rng,
            &[("a", 4, 3), ("b", 3, 5), ("c", 4, 5), ("bias", 1, 5), ("p", 6, 3)],
        );
        type Case = Box<dyn Fn(&mut Graph, &ParamStore) -> crate::Result<NodeId>>;
        let cases: Vec<(&str, Case)> = vec![
            ("matmul", Box::new(|g, s| {
                let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
                let y = g.matmul(a, b)?;
                project(g, y, 1)
            })),
            ("add_sub", Box::new(|g, s| {
                let (a, b) = (g.param(s, "c")?, g.param(s, "a")?);
                let w = g.param(s, "b")?;
                let ab = g.matmul(b, w)?;
                let y = g.add(a, ab)?;
                let z = g.sub(y, a)?;
                let z = g.add(z, y)?;
                project(g, z, 2)
            })),
            ("bias_add", Box::new(|g, s| {
                let (c, b) = (g.param(s, "c")?, g.param(s, "bias")?);
                let y = g.bias_add(c, b)?;
                project(g, y, 3)
            })),
            ("concat", Box::new(|g, s| {
                let (a, c) = (g.param(s, "a")?, g.param(s, "c")?);
                let y = g.concat_cols(&[a, c, a])?;
                let p = g.param(s, "p")?;
                let z = g.concat_rows(&[p, a])?;
                let (py, pz) = (project(g, y, 4)?, project(g, z, 5)?);
                g.add(py, pz)
            })),
            ("relu_leaky", Box::new(|g, s| {
                let c = g.param(s, "c")?;
                let r = g.relu(c)?;
                let l = g.leaky_relu(c, 0.2)?;
                let y = g.concat_cols(&[r, l])?;
                project(g, y, 6)
            })),
            ("max_rows", Box::new(|g, s| {
                let p = g.param(s, "p")?;
                let m = g.max_rows(p)?;
                project(g, m, 7)
            })),
            ("gather", Box::new(|g, s| {
                let p = g.param(s, "p")?;
                let y = g.gather_rows(p, &[5, 0, 0, 3])?;
                project(g, y, 8)
            })),
            ("reductions", Box::new(|g, s| {
                let c = g.param(s, "c")?;
                let rs = g.row_sum(c)?;
                let m = g.mean(c)?;
                let sm = g.sum(rs)?;
                let y = g.scale(sm, 0.7)?;
                let y = g.add_scalar(y, 3.0)?;
                let y = g.square(y)?;
                g.add(y, m)
            })),
            ("sqrt_reshape", Box::new(|g, s| {
                let c = g.param(s, "c")?;
                let sq = g.square(c)?;
                let sh = g.add_scalar(sq, 0.5)?;
                let r = g.sqrt(sh)?;
                let r = g.reshape(r, 10, 2)?;
                project(g, r, 9)
            })),
        ];
        for (name, f) in cases {
            let report = check(&mut s, f);
            assert!(report.passed, "{name}: {report:?}");
        }
    }

    #[test]
    fn relu_and_max_subgradients() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(1, 2, vec![-1.0, 2.0]).unwrap());
        let r = g.relu(x).unwrap();
        let s = g.sum(r).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);

        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(3, 1, vec![1.0, 4.0, 4.0]).unwrap());
        let m = g.max_rows(x).unwrap();
        let s = g.sum(m).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn sum_of_squares_gradient_and_untouched_param() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
        s.insert("unused", Tensor::scalar(4.0)).unwrap();
        let mut g = Graph::new();
        let w = g.param(&s, "w").unwrap();
        let u = g.param(&s, "unused").unwrap();
        let _ = g.scale(u, 2.0).unwrap();
        let sq = g.square(w).unwrap();
        let l = g.sum(sq).unwrap();
        let grads = g.backward(l).unwrap();
        s.accumulate(&grads);
        drop(g);
        assert_eq!(s.get("w").unwrap().grad.data(), &[2.0, -4.0, 1.0]);
        assert_eq!(s.get("unused").unwrap().grad.data(), &[0.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(3.0)).unwrap();
        for _ in 0..2 {
            let mut g = Graph::new();
            let w = g.param(&s, "w").unwrap();
            let l = g.square(w).unwrap();
            let grads = g.backward(l).unwrap();
            s.accumulate(&grads);
        }
        assert_eq!(s.get("w").unwrap().grad.item(), 12.0);
        s.zero_grad();
        assert_eq!(s.get("w").unwrap().grad.item(), 0.0);
    }

    #[test]
    fn backward_requires_scalar_and_shapes_are_checked() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(2, 3));
        let b = g.input(Tensor::zeros(2, 2));
        assert!(matches!(g.backward(a), Err(crate::Error::InvalidArgument(_))));
        assert!(matches!(g.matmul(a, b), Err(crate::Error::Shape { .. })));
        assert!(matches!(g.add(a, b), Err(crate::Error::Shape { .. })));
        let bias = g.input(Tensor::zeros(1, 2));
        assert!(matches!(g.bias_add(a, bias), Err(crate::Error::Shape { .. })));
    }

    #[test]
    fn gradient_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = store_with(&mut rng, &[("a", 5, 4), ("b", 4, 3)]);
        let (alpha, beta) = (0.37, -1.9);
        let grads_of = |s: &ParamStore, wa: f64, wb: f64| {
            let mut g = Graph::new();
            let (a, b) = (g.param(s, "a").unwrap(), g.param(s, "b").unwrap());
            let ab = g.matmul(a, b).unwrap();
            let r = g.relu(ab).unwrap();
            let l1 = g.mean(r).unwrap();
            let sq = g.square(a).unwrap();
            let l2 = g.sum(sq).unwrap();
            let t1 = g.scale(l1, wa).unwrap();
            let t2 = g.scale(l2, wb).unwrap();
            let l = g.add(t1, t2).unwrap();
            let grads = g.backward(l).unwrap();
            let mut st = s.clone();
            st.zero_grad();
            st.accumulate(&grads);
            st.iter().map(|p| p.grad.clone()).collect::<Vec<_>>()
        };
        let both = grads_of(&s, alpha, beta);
        let g1 = grads_of(&s, 1.0, 0.0);
        let g2 = grads_of(&s, 0.0, 1.0);
        for ((b, x), y) in both.iter().zip(&g1).zip(&g2) {
            for ((bv, xv), yv) in b.data().iter().zip(x.data()).zip(y.data()) {
                assert!((bv - (alpha * xv + beta * yv)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn shared_storage_law() {
        let mut s = ParamStore::new();
        let id = s.insert("w", Tensor::scalar(1.0)).unwrap();
        let site_a = s.shared_value(id);
        let site_b = s.shared_value(s.id("w").unwrap());
        assert!(std::sync::Arc::ptr_eq(&site_a, &site_b));
        drop((site_a, site_b));
        s.get_mut("w").unwrap().value_mut().data_mut()[0] = 9.0;
        let mut g1 = Graph::new();
        let mut g2 = Graph::new();
        let n1 = g1.param(&s, "w").unwrap();
        let n2 = g2.param(&s, "w").unwrap();
        assert_eq!(g1.value(n1).item(), 9.0);
        assert!(std::ptr::eq(g1.value(n1), g2.value(n2)));
    }

    #[test]
    fn corrupted_vjp_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = store_with(&mut rng, &[("a", 4, 3), ("b", 3, 5)]);
        let report = check(&mut s, |g, s| {
            g.inject_vjp_fault(OpKind::MatMul);
            let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
            let y = g.matmul(a, b)?;
            project(g, y, 1)
        });
        assert!(!report.passed);
        assert!(report.max_rel_error > 0.1);
    }

    #[test]
    fn kinks_inside_the_step_are_excused_but_bounded() {
        let relu_sum = |g: &mut Graph, s: &ParamStore| {
            let w = g.param(s, "w")?;
            let r = g.relu(w)?;
            g.sum(r)
        };
        let mut data: Vec<f64> = (0..30).map(|i| 0.1 + i as f64 / 30.0).collect();
        data[7] = 2e-6;
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(30, 1, data.clone()).unwrap()).unwrap();
        let report = check(&mut s, relu_sum);
        assert!(report.passed && report.kinks == 1, "{report:?}");

        for d in data.iter_mut().take(5) {
            *d = -1e-6;
        }
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(30, 1, data).unwrap()).unwrap();
        let report = check(&mut s, relu_sum);
        assert!(!report.passed && report.kinks == 6, "{report:?}");
    }

    #[test]
    fn linear_model_error_is_tiny() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = store_with(&mut rng, &[("w", 3, 1), ("b", 1, 1)]);
        let x = rand_tensor(&mut rng, 7, 3);
        let report = check(&mut s, move |g, s| {
            let xi = g.constant(x.clone());
            let (w, b) = (g.param(s, "w")?, g.param(s, "b")?);
            let y = g.linear(xi, w, b)?;
            g.sum(y)
        });
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }
}
