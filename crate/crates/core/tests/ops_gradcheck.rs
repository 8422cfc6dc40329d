//! Reverse-mode gradients of each graph op against central differences.

use semnet_core::tensor_core::gradcheck::DEFAULT_STEP;
use semnet_core::tensor_core::{grad_check, ActivationKind, Bindings, Graph, Init, NormMode, ParameterStore, RunningStats, Var};
use semnet_core::{Result, Tensor64};

const TOL: f64 = 1e-6;

fn store(entries: &[(&str, &[usize])], seed: u64) -> ParameterStore<f64> {
    let mut s = ParameterStore::new();
    for (i, (name, shape)) in entries.iter().enumerate() {
        s.register(name, shape, Init::Normal { std: 1.0, seed: seed + i as u64 }).unwrap();
    }
    s
}

/// Contracts any output against fixed random weights to get a scalar.
fn reduce(g: &mut Graph<f64>, v: Var) -> Result<Var> {
    let shape = g.shape(v).to_vec();
    let mut out = v;
    for (i, &n) in shape.iter().enumerate().rev() {
        let w: Tensor64 = Init::Normal { std: 1.0, seed: 1000 + i as u64 }.materialize(&[n]);
        let w = g.constant(w);
        out = g.matmul(out, w)?;
    }
    Ok(out)
}

fn check<F>(label: &str, params: &ParameterStore<f64>, f: F)
where
    F: Fn(&mut Graph<f64>, &Bindings) -> Result<Var>,
{
    check_within(label, params, TOL, f)
}

fn check_within<F>(label: &str, params: &ParameterStore<f64>, tol: f64, f: F)
where
    F: Fn(&mut Graph<f64>, &Bindings) -> Result<Var>,
{
    let report = grad_check(
        |g, b| {
            let y = f(g, b)?;
            reduce(g, y)
        },
        params,
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(report.coordinates > 0);
    assert!(
        report.max_rel_error < tol,
        "{label}: max relative error {:.3e} at {:?}",
        report.max_rel_error,
        report.worst
    );
}

#[test]
fn matmul_all_forms() {
    let p = store(&[("a", &[3, 4]), ("b", &[4, 2]), ("v", &[4]), ("u", &[3])], 1);
    check("mat·mat", &p, |g, b| g.matmul(b.var("a")?, b.var("b")?));
    check("mat·vec", &p, |g, b| g.matmul(b.var("a")?, b.var("v")?));
    check("vec·mat", &p, |g, b| g.matmul(b.var("u")?, b.var("a")?));
    check("transpose", &p, |g, b| g.transpose(b.var("a")?));
}

#[test]
fn elementwise() {
    let p = store(&[("x", &[3, 4]), ("y", &[3, 4]), ("r", &[4])], 2);
    check("add", &p, |g, b| g.add(b.var("x")?, b.var("y")?));
    check("sub", &p, |g, b| g.sub(b.var("x")?, b.var("y")?));
    check("mul", &p, |g, b| g.mul(b.var("x")?, b.var("y")?));
    check("add_row", &p, |g, b| g.add_row(b.var("x")?, b.var("r")?));
    check("scale", &p, |g, b| Ok(g.scale(b.var("x")?, -2.5)));
    check("add_scalar", &p, |g, b| Ok(g.add_scalar(b.var("x")?, 0.75)));
    check("tanh", &p, |g, b| g.tanh(b.var("x")?));
    check("sum", &p, |g, b| {
        let (x, y) = (b.var("x")?, b.var("y")?);
        g.sum(&[x, y, x])
    });
}

#[test]
fn relu_away_from_zero() {
    let mut p = ParameterStore::new();
    p.insert("x", Tensor64::vector(vec![1.3, -0.4, 2.2, -1.7, 0.05]), Init::Zeros).unwrap();
    check("relu", &p, |g, b| g.activation(b.var("x")?, ActivationKind::Relu));
}

#[test]
fn softmax_and_cosine() {
    let p = store(&[("x", &[6]), ("y", &[6])], 3);
    check("softmax", &p, |g, b| g.softmax(b.var("x")?));
    check("cosine strict", &p, |g, b| g.cosine(b.var("x")?, b.var("y")?, 0.0));
    check("cosine eps", &p, |g, b| g.cosine(b.var("x")?, b.var("y")?, 1e-8));
}

#[test]
fn structural() {
    let p = store(&[("m", &[4, 3]), ("a", &[3]), ("c", &[2]), ("t", &[5, 3])], 4);
    check("concat", &p, |g, b| g.concat(&[b.var("a")?, b.var("c")?, b.var("a")?]));
    check("stack_rows", &p, |g, b| {
        let a = b.var("a")?;
        let r = g.row(b.var("m")?, 2)?;
        g.stack_rows(&[a, r, a])
    });
    check("slice_rows", &p, |g, b| g.slice_rows(b.var("m")?, 1, 2));
    check("row", &p, |g, b| g.row(b.var("m")?, 3));
    check("gather", &p, |g, b| g.gather(b.var("t")?, &[4, 0, 4, 2]));
    check("mean_rows", &p, |g, b| g.mean_rows(b.var("m")?));
    check("positional_encode", &p, |g, b| g.positional_encode(b.var("m")?));
}

#[test]
fn conv_and_pool() {
    let p = store(&[("x", &[9, 3]), ("w", &[3, 3, 4]), ("bias", &[4])], 5);
    check("conv1d", &p, |g, b| g.conv1d(b.var("x")?, b.var("w")?, b.var("bias")?));
    // distinct values keep the pooled argmax stable under the step
    let mut q = ParameterStore::new();
    let data: Vec<f64> = (0..14).map(|i| ((i * 7919) % 23) as f64 * 0.37 - 4.0).collect();
    q.insert("x", Tensor64::new(vec![7, 2], data).unwrap(), Init::Zeros).unwrap();
    check("maxpool1d", &q, |g, b| g.maxpool1d(b.var("x")?));
}

#[test]
fn batchnorm_train_and_eval() {
    let p = store(&[("x", &[5, 3]), ("gamma", &[3]), ("beta", &[3])], 6);
    check("batchnorm train", &p, |g, b| {
        let mut stats = RunningStats::new(3);
        g.batchnorm(b.var("x")?, b.var("gamma")?, b.var("beta")?, &mut stats, NormMode::Train)
    });
    check("batchnorm eval", &p, |g, b| {
        let mut stats = RunningStats {
            mean: Tensor64::vector(vec![0.2, -0.1, 0.4]),
            var: Tensor64::vector(vec![1.5, 0.7, 2.0]),
        };
        g.batchnorm(b.var("x")?, b.var("gamma")?, b.var("beta")?, &mut stats, NormMode::Eval)
    });
}

// chains accumulate roundoff, so they get the whole-model tolerance
#[test]
fn composed_chain() {
    let p = store(&[("x", &[8, 3]), ("w", &[3, 3, 4]), ("bias", &[4]), ("v", &[4])], 7);
    check_within("conv→tanh→pool→mean→softmax", &p, 1e-4, |g, b| {
        let c = g.conv1d(b.var("x")?, b.var("w")?, b.var("bias")?)?;
        let t = g.tanh(c)?;
        let pooled = g.maxpool1d(t)?;
        let m = g.mean_rows(pooled)?;
        let s = g.add(m, b.var("v")?)?;
        g.softmax(s)
    });
}
