use cedg_core::gradcheck::{check, GradCheckConfig, GradCheckReport};
use cedg_core::nn::{build_classifier, build_spearnet, ClassifierVariant, HeadKind, SpearConfig};
use cedg_core::{Activation, Cut, Graph64, Mode, ModelBundle64, ParamStore64, Tensor64};
use rand::{Rng, SeedableRng};

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor64 {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor64::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

// Fixed projection so the loss is a generic scalar function of the output.
fn project(g: &mut Graph64, y: cedg_core::Var, seed: u64) -> cedg_core::Var {
    let shape = g.value(y).shape().to_vec();
    let w = rand_tensor(&shape, seed);
    let yv = g.value(y).clone();
    let loss: f64 = yv.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
    let w2 = w.clone();
    g.custom(
        &[y],
        Tensor64::scalar(loss),
        Box::new(move |go, _| vec![Some(w2.map(|v| v * go.item()))]),
    )
    .unwrap()
}

fn assert_passed(what: &str, r: &GradCheckReport) {
    assert!(r.passed(), "{what}: {} of {} failed, e.g. {:?}", r.failures.len(), r.checked, r.failures.first());
}

fn cfg() -> GradCheckConfig {
    GradCheckConfig { max_coords: 40, ..Default::default() }
}

#[test]
fn conv_linear_pool() {
    let mut store = ParamStore64::new();
    store.insert("w", rand_tensor(&[3, 2, 3, 3], 1));
    store.insert("b", rand_tensor(&[3], 2));
    let x = rand_tensor(&[2, 2, 5, 5], 3);
    let r = check(&[x], &mut store, &cfg(), |g, xs, s| {
        let w = g.param_by_name(s, "w")?;
        let b = g.param_by_name(s, "b")?;
        let y = g.conv2d(xs[0], w, Some(b), 2, 1)?;
        Ok(project(g, y, 4))
    })
    .unwrap();
    assert_passed("conv", &r);

    let mut store = ParamStore64::new();
    store.insert("w", rand_tensor(&[4, 6], 1));
    store.insert("b", rand_tensor(&[4], 2));
    let r = check(&[rand_tensor(&[3, 6], 5)], &mut store, &cfg(), |g, xs, s| {
        let w = g.param_by_name(s, "w")?;
        let b = g.param_by_name(s, "b")?;
        let y = g.linear(xs[0], w, b)?;
        Ok(project(g, y, 6))
    })
    .unwrap();
    assert_passed("linear", &r);

    let r = check(&[rand_tensor(&[2, 3, 4, 4], 7)], &mut ParamStore64::new(), &cfg(), |g, xs, _| {
        let y = g.avg_pool(xs[0], 2)?;
        Ok(project(g, y, 8))
    })
    .unwrap();
    assert_passed("avg_pool", &r);
}

#[test]
fn activations_and_structural_ops() {
    for (i, kind) in [Activation::Relu, Activation::Softmax, Activation::L1Normalize, Activation::L2Normalize]
        .into_iter()
        .enumerate()
    {
        let r = check(&[rand_tensor(&[3, 5], 10 + i as u64)], &mut ParamStore64::new(), &cfg(), |g, xs, _| {
            let y = g.activation(xs[0], kind)?;
            Ok(project(g, y, 20 + i as u64))
        })
        .unwrap();
        assert_passed(&format!("{kind:?}"), &r);
    }

    let inputs = [rand_tensor(&[2, 3, 2, 2], 30), rand_tensor(&[2, 3, 2, 2], 31), rand_tensor(&[2, 4], 32)];
    let r = check(&inputs, &mut ParamStore64::new(), &cfg(), |g, xs, _| {
        let s = g.add(xs[0], xs[1])?;
        let f = g.flatten_batch(s)?;
        let c = g.concat(&[f, xs[2]])?;
        let r = g.reshape(c, vec![4, 8])?;
        Ok(project(g, r, 33))
    })
    .unwrap();
    assert_passed("add/flatten/concat/reshape", &r);
}

#[test]
fn batch_norm_train_mode() {
    let mut store = ParamStore64::new();
    store.insert("bn.gamma", rand_tensor(&[3], 40));
    store.insert("bn.beta", rand_tensor(&[3], 41));
    store.insert_buffer("bn.running_mean", Tensor64::zeros([3]));
    store.insert_buffer("bn.running_var", Tensor64::ones([3]));
    let r = check(&[rand_tensor(&[4, 3, 3, 3], 42)], &mut store, &cfg(), |g, xs, s| {
        let y = g.batch_norm(xs[0], s, "bn", Mode::Train)?;
        Ok(project(g, y, 43))
    })
    .unwrap();
    assert_passed("batch_norm", &r);
}

#[test]
fn three_layer_composite() {
    let mut store = ParamStore64::new();
    store.insert("c.w", rand_tensor(&[4, 2, 3, 3], 50));
    store.insert("c.b", rand_tensor(&[4], 51));
    store.insert("f1.w", rand_tensor(&[6, 16], 52));
    store.insert("f1.b", rand_tensor(&[6], 53));
    store.insert("f2.w", rand_tensor(&[3, 6], 54));
    store.insert("f2.b", rand_tensor(&[3], 55));
    let r = check(&[rand_tensor(&[2, 2, 4, 4], 56)], &mut store, &cfg(), |g, xs, s| {
        let (w, b) = (g.param_by_name(s, "c.w")?, g.param_by_name(s, "c.b")?);
        let h = g.conv2d(xs[0], w, Some(b), 1, 1)?;
        let h = g.relu(h)?;
        let h = g.avg_pool(h, 2)?;
        let h = g.flatten_batch(h)?;
        let (w, b) = (g.param_by_name(s, "f1.w")?, g.param_by_name(s, "f1.b")?);
        let h = g.linear(h, w, b)?;
        let h = g.relu(h)?;
        let (w, b) = (g.param_by_name(s, "f2.w")?, g.param_by_name(s, "f2.b")?);
        let h = g.linear(h, w, b)?;
        let h = g.activation(h, Activation::Softmax)?;
        Ok(project(g, h, 57))
    })
    .unwrap();
    assert_passed("composite", &r);
}

#[test]
fn student_with_parallel_head() {
    let mut m: ModelBundle64 = build_spearnet(&SpearConfig::default(), 60).unwrap();
    let mut hc = ClassifierVariant::new(HeadKind::A1);
    hc.hidden = 8;
    m.attach_head(build_classifier(&hc).unwrap(), 61).unwrap();
    let arch = m.arch.clone();
    let x = rand_tensor(&[3, 3, 32, 32], 62);
    // A deep ReLU network has many kinks within reach of a wide probe; a small
    // step keeps almost every probe on one linear piece.
    let cfg = GradCheckConfig { max_coords: 2, directions: 4, step: 1e-7, ..Default::default() };
    let r = check(&[x], &mut m.params, &cfg, |g, xs, s| {
        let mut bundle = ModelBundle64 { arch: arch.clone(), params: std::mem::take(s) };
        let out = bundle.forward_split(g, xs[0], Cut::Hc, Mode::Train);
        *s = bundle.params;
        let y = out?;
        Ok(project(g, y, 63))
    })
    .unwrap();
    assert_passed("spearnet + A1", &r);
}

#[test]
fn wrong_backward_is_caught() {
    let r = check(&[rand_tensor(&[4], 70)], &mut ParamStore64::new(), &cfg(), |g, xs, _| {
        let x = g.value(xs[0]).clone();
        let y = x.map(|v| v * v);
        // Claims d(x^2)/dx = x.
        let v = g.custom(&[xs[0]], y, Box::new(move |go, _| vec![Some(x.zip_map(go, |a, b| a * b).unwrap())]))?;
        Ok(project(g, v, 71))
    })
    .unwrap();
    assert!(!r.passed());
    assert_eq!(r.failures.len(), 4);
}
