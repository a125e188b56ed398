use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::tensor::Tensor;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn close(a: &[f32], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((f64::from(*x) - y).abs() <= tol, "{x} vs {y}");
    }
}

fn conv_value(x: Tensor, k: Tensor, b: Tensor, stride: usize, padding: Padding) -> Result<Tensor, Error> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let (x, k, b) = (g.input(x), g.input(k), g.input(b));
    let y = g.conv2d(x, k, b, stride, padding)?;
    Ok(g.value(y).clone())
}

#[test]
fn conv_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_t(&mut rng, &[4, 5, 2]);
    let mut k = Tensor::zeros(&[3, 3, 2, 2]);
    for c in 0..2 {
        // centre tap (1, 1), input channel c -> output channel c
        k.data_mut()[((3 + 1) * 2 + c) * 2 + c] = 1.0;
    }
    let y = conv_value(x.clone(), k, Tensor::zeros(&[2]), 1, Padding::Same).unwrap();
    assert_eq!(y, x);
}

#[test]
fn conv_zero_kernel() {
    let x = Tensor::filled(&[6, 6, 3], 2.0);
    let y = conv_value(x, Tensor::zeros(&[3, 3, 3, 4]), Tensor::zeros(&[4]), 2, Padding::Same).unwrap();
    assert_eq!(y.shape(), &[3, 3, 4]);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (stride, padding) in [(1, Padding::Same), (2, Padding::Same), (1, Padding::Valid)] {
        let x = rand_t(&mut rng, &[5, 5, 2]);
        let k = rand_t(&mut rng, &[3, 3, 2, 3]);
        let b = rand_t(&mut rng, &[3]);
        let y = conv_value(x.clone(), k.clone(), b.clone(), stride, padding).unwrap();
        let pad = if padding == Padding::Same { 1 } else { 0 };
        let out = (5 + 2 * pad - 3) / stride + 1;
        assert_eq!(y.shape(), &[out, out, 3]);
        let mut expect = Vec::new();
        for oy in 0..out {
            for ox in 0..out {
                for co in 0..3 {
                    let mut acc = f64::from(b.data()[co]);
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * stride + ky) as i64 - pad as i64;
                            let ix = (ox * stride + kx) as i64 - pad as i64;
                            if !(0..5).contains(&iy) || !(0..5).contains(&ix) {
                                continue;
                            }
                            for ci in 0..2 {
                                acc += f64::from(x.at3(iy as usize, ix as usize, ci))
                                    * f64::from(k.data()[((ky * 3 + kx) * 2 + ci) * 3 + co]);
                            }
                        }
                    }
                    expect.push(acc);
                }
            }
        }
        close(y.data(), &expect, 1e-5);
    }
}

#[test]
fn conv_rejects_bad_shapes() {
    let err = conv_value(Tensor::zeros(&[4, 4, 2]), Tensor::zeros(&[3, 3, 3, 1]), Tensor::zeros(&[1]), 1, Padding::Same)
        .unwrap_err()
        .to_string();
    assert!(err.contains("[4, 4, 2]") && err.contains("[3, 3, 3, 1]"), "{err}");
    assert!(conv_value(Tensor::zeros(&[2, 2, 1]), Tensor::zeros(&[3, 3, 1, 1]), Tensor::zeros(&[1]), 1, Padding::Valid).is_err());
    assert!(conv_value(Tensor::zeros(&[2, 2, 1]), Tensor::zeros(&[3, 3, 1, 1]), Tensor::zeros(&[1]), 5, Padding::Same).is_err());
    assert!(conv_value(Tensor::zeros(&[4, 4, 1]), Tensor::zeros(&[2, 2, 1, 1]), Tensor::zeros(&[1]), 1, Padding::Same).is_err());
}

fn dense_value(x: Tensor, w: Tensor, b: Tensor) -> Result<Tensor, Error> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let (x, w, b) = (g.input(x), g.input(w), g.input(b));
    let y = g.dense(x, w, b)?;
    Ok(g.value(y).clone())
}

#[test]
fn dense_examples() {
    let x = Tensor::from_vec(vec![1.0, -2.0, 3.0]);
    let mut eye = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        eye.data_mut()[i * 4] = 1.0;
    }
    assert_eq!(dense_value(x.clone(), eye, Tensor::zeros(&[3])).unwrap(), x);
    let b = Tensor::from_vec(vec![0.5, -0.5]);
    assert_eq!(dense_value(x.clone(), Tensor::zeros(&[3, 2]), b.clone()).unwrap(), b);
    assert!(dense_value(x, Tensor::zeros(&[4, 2]), Tensor::zeros(&[2])).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (x, w, b) = (rand_t(&mut rng, &[4]), rand_t(&mut rng, &[4, 3]), rand_t(&mut rng, &[3]));
    let y = dense_value(x.clone(), w.clone(), b.clone()).unwrap();
    let expect: Vec<f64> = (0..3)
        .map(|j| {
            f64::from(b.data()[j])
                + (0..4)
                    .map(|i| f64::from(x.data()[i]) * f64::from(w.data()[i * 3 + j]))
                    .sum::<f64>()
        })
        .collect();
    close(y.data(), &expect, 1e-6);
}

#[test]
fn relu_values_and_kink_gradient() {
    let mut store = ParamStore::new();
    let id = store.register("x", Tensor::from_vec(vec![-1.5, 2.0, 0.0])).unwrap();
    let mut g = Graph::new(&store);
    let x = g.param(id);
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 2.0, 0.0]);
    let s = g.sum(y);
    assert_eq!(g.backward(s).unwrap().get(id), vec![0.0, 1.0, 0.0]);
}

#[test]
fn add_broadcast_over_locations() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let map = rand_t(&mut rng, &[3, 2, 4]);
    let v = rand_t(&mut rng, &[4]);
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let (m, vv) = (g.input(map.clone()), g.input(v.clone()));
    let y = g.add(vv, m).unwrap();
    for r in 0..3 {
        for c in 0..2 {
            for k in 0..4 {
                assert_eq!(g.value(y).at3(r, c, k), map.at3(r, c, k) + v.data()[k]);
            }
        }
    }
    let bad = g.input(Tensor::zeros(&[3]));
    assert!(g.add(m, bad).is_err());
    assert!(g.mul(m, bad).is_err());
}

#[test]
fn concat_examples() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let a = g.input(Tensor::filled(&[2, 2, 1], 1.5));
    let b = g.input(Tensor::filled(&[2, 2, 1], -2.0));
    let single = g.concat_depth(&[a]).unwrap();
    assert_eq!(g.value(single), g.value(a));
    let ab = g.concat_depth(&[a, b]).unwrap();
    assert_eq!(g.value(ab).data(), &[1.5, -2.0, 1.5, -2.0, 1.5, -2.0, 1.5, -2.0]);
    let odd = g.input(Tensor::zeros(&[2, 3, 1]));
    assert!(g.concat_depth(&[a, odd]).is_err());
}

fn softmax_of(t: Tensor, axis: Axis) -> Tensor {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(t);
    let y = g.softmax(x, axis);
    g.value(y).clone()
}

#[test]
fn softmax_examples() {
    assert_eq!(softmax_of(Tensor::from_vec(vec![0.0, 0.0]), Axis::Depth).data(), &[0.5, 0.5]);
    assert_eq!(softmax_of(Tensor::from_vec(vec![4.2]), Axis::Depth).data(), &[1.0]);
    let y = softmax_of(Tensor::from_vec(vec![1.0, 2.0, 3.0]), Axis::Depth);
    let z: f64 = (1..=3).map(|i| (i as f64).exp()).sum();
    let expect: Vec<f64> = (1..=3).map(|i| (i as f64).exp() / z).collect();
    close(y.data(), &expect, 1e-6);
    let set = softmax_of(Tensor::new(vec![2, 2], vec![0.0, 5.0, 0.0, 5.0]).unwrap(), Axis::Set);
    assert_eq!(set.data(), &[0.5, 0.5, 0.5, 0.5]);
}

#[test]
fn tile_examples_and_gradient() {
    let mut store = ParamStore::new();
    let id = store.register("v", Tensor::from_vec(vec![3.0])).unwrap();
    let mut g = Graph::new(&store);
    let v = g.param(id);
    let t = g.tile_spatial(v, 2, 3).unwrap();
    assert_eq!(g.value(t).shape(), &[2, 3, 1]);
    assert!(g.value(t).data().iter().all(|&x| x == 3.0));
    let s = g.sum(t);
    assert_eq!(g.backward(s).unwrap().get(id), vec![6.0]);

    let one = g.input(Tensor::from_vec(vec![1.0, 2.0]));
    let t1 = g.tile_spatial(one, 1, 1).unwrap();
    assert_eq!(g.value(t1).data(), &[1.0, 2.0]);
}

fn ce(logits: Tensor, mask: &[u8]) -> Result<f32, Error> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(logits);
    let l = g.cross_entropy(x, mask)?;
    Ok(g.value(l).data()[0])
}

#[test]
fn cross_entropy_examples() {
    let confident = Tensor::new(vec![1, 2, 2], vec![-50.0, 50.0, 50.0, -50.0]).unwrap();
    assert!(ce(confident, &[1, 0]).unwrap() < 1e-6);
    let uniform = Tensor::zeros(&[2, 2, 2]);
    assert!((ce(uniform, &[0, 1, 1, 0]).unwrap() - std::f32::consts::LN_2).abs() < 1e-6);
    assert!(ce(Tensor::zeros(&[1, 2, 2]), &[0, 2]).is_err());
    assert!(ce(Tensor::zeros(&[1, 2, 3]), &[0, 1]).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let logits = rand_t(&mut rng, &[3, 3, 2]);
    let mask: Vec<u8> = (0..9).map(|_| rng.gen_range(0..2)).collect();
    let expect: f64 = mask
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let l0 = f64::from(logits.data()[2 * i]);
            let l1 = f64::from(logits.data()[2 * i + 1]);
            let lt = if t == 1 { l1 } else { l0 };
            -(lt - (l0.exp() + l1.exp()).ln())
        })
        .sum::<f64>()
        / 9.0;
    assert!((f64::from(ce(logits, &mask).unwrap()) - expect).abs() < 1e-6);
}

#[test]
fn backward_examples() {
    let mut store = ParamStore::new();
    let a = store.register("a", Tensor::filled(&[2, 3], 0.3)).unwrap();
    let b = store.register("b", Tensor::filled(&[4], 1.0)).unwrap();
    let mut g = Graph::new(&store);
    let va = g.param(a);
    let _vb = g.param(b);
    let s = g.sum(va);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(a), vec![1.0; 6]);
    assert_eq!(grads.get(b), vec![0.0; 4]);
    assert!(!grads.is_reached(b));
    assert!(g.backward(va).is_err());
}

#[test]
fn gradients_accumulate_into_store() {
    let mut store = ParamStore::new();
    let a = store.register("a", Tensor::filled(&[2], 1.0)).unwrap();
    let grads = {
        let mut g = Graph::new(&store);
        let va = g.param(a);
        let y = g.scale(va, 3.0);
        let s = g.sum(y);
        g.backward(s).unwrap()
    };
    store.accumulate(&grads);
    store.accumulate(&grads);
    assert_eq!(store.get(a).grad().unwrap(), &[6.0, 6.0]);
    store.zero_grads();
    assert_eq!(store.get(a).grad().unwrap(), &[0.0, 0.0]);
    assert!(store.register("a", Tensor::zeros(&[1])).is_err());
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_t(&mut rng, &[8, 8, 3]);
    let k = rand_t(&mut rng, &[3, 3, 3, 5]);
    let b = rand_t(&mut rng, &[5]);
    let a = conv_value(x.clone(), k.clone(), b.clone(), 2, Padding::Same).unwrap();
    let c = conv_value(x, k, b, 2, Padding::Same).unwrap();
    assert_eq!(a.data(), c.data());
}

proptest! {
    #[test]
    fn softmax_sums_to_one(values in prop::collection::vec(-1e4f32..1e4, 1..12), rows in 1usize..4) {
        let n = values.len();
        let data: Vec<f32> = (0..rows).flat_map(|r| values.iter().map(move |v| v * (r as f32 + 1.0) / rows as f32)).collect();
        let depth = softmax_of(Tensor::new(vec![rows, n], data.clone()).unwrap(), Axis::Depth);
        for row in depth.data().chunks(n) {
            let s: f64 = row.iter().map(|&v| f64::from(v)).sum();
            prop_assert!((s - 1.0).abs() <= 1e-6, "sum {}", s);
            prop_assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
        let set = softmax_of(Tensor::new(vec![rows, n], data).unwrap(), Axis::Set);
        for c in 0..n {
            let s: f64 = (0..rows).map(|r| f64::from(set.data()[r * n + c])).sum();
            prop_assert!((s - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn softmax_shift_invariant(steps in prop::collection::vec(-1280i32..1280, 1..10), shift in -1000i32..1000) {
        // Multiples of 1/64 plus an integer stay exact in f32, so only the
        // op itself can break invariance.
        let values: Vec<f32> = steps.iter().map(|&s| s as f32 / 64.0).collect();
        let shift = shift as f32;
        let a = softmax_of(Tensor::from_vec(values.clone()), Axis::Depth);
        let b = softmax_of(Tensor::from_vec(values.iter().map(|v| v + shift).collect()), Axis::Depth);
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn concat_then_slice_is_identity(depths in prop::collection::vec(1usize..4, 1..4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts: Vec<Tensor> = depths.iter().map(|&d| rand_t(&mut rng, &[2, 3, d])).collect();
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let vars: Vec<Var> = parts.iter().map(|t| g.input(t.clone())).collect();
        let cat = g.concat_depth(&vars).unwrap();
        let mut start = 0;
        for p in &parts {
            let d = p.depth();
            prop_assert_eq!(&g.value(cat).depth_slice(start, start + d).unwrap(), p);
            start += d;
        }
    }
}
