//! Central finite differences, the independent gradient oracle.

use crate::nn::ParamStore;

/// Central difference per coordinate of a scalar function of a flat point.
pub fn finite_diff_vec(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0);
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        assert!(up.is_finite() && down.is_finite(), "non-finite evaluation in finite_diff");
        out.push((up - down) / (2.0 * h));
    }
    out
}

/// Central differences over every scalar entry of a parameter store.
pub fn finite_diff_grad(
    f: impl Fn(&ParamStore) -> f64,
    params: &ParamStore,
    h: f64,
) -> ParamStore {
    assert!(h > 0.0);
    let mut grads = params.zeros_like();
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in &names {
        let base = params.get(name).unwrap().clone();
        let mut grad = base.clone();
        for i in 0..base.len() {
            let orig = base.data()[i];
            let mut probe = params.clone();
            let mut up_t = base.clone();
            up_t.data_mut()[i] = orig + h;
            probe.set(name, up_t).unwrap();
            let up = f(&probe);
            let mut down_t = base.clone();
            down_t.data_mut()[i] = orig - h;
            probe.set(name, down_t).unwrap();
            let down = f(&probe);
            assert!(
                up.is_finite() && down.is_finite(),
                "non-finite evaluation in finite_diff_grad at `{name}`[{i}]"
            );
            grad.data_mut()[i] = (up - down) / (2.0 * h);
        }
        grads.set(name, grad).unwrap();
    }
    grads
}

/// Largest relative difference between two store-shaped gradients, with an
/// absolute floor so near-zero entries do not blow the ratio up.
pub fn max_rel_err(a: &ParamStore, b: &ParamStore, floor: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (name, av) in a.iter() {
        let bv = b.get(name).expect("stores must share entries");
        for (&x, &y) in av.data().iter().zip(bv.data()) {
            let denom = x.abs().max(y.abs()).max(floor);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}
