#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use structfactor::inference::{
    gibbs_sweep, simulate_response, ChainState, Dataset, FactorModelSpec, LoadingsPrior, MeanModel, MgpHyper,
    ModelKind, ProposalScales, SigmaPrior,
};
use structfactor::structured_prior::{PhiFamily, PhiModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mean and standard error from `n_batches` batch means.
pub fn batch_mean_se(xs: &[f64], n_batches: usize) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let b = n / n_batches;
    let means: Vec<f64> = (0..n_batches).map(|i| xs[i * b..(i + 1) * b].iter().sum::<f64>() / b as f64).collect();
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n_batches - 1) as f64;
    (mean, (var / n_batches as f64).sqrt())
}

pub fn iid_mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Tiny model for joint-distribution tests.
pub fn geweke_spec(kind: ModelKind, loadings: LoadingsPrior) -> FactorModelSpec {
    let sigma = if kind == ModelKind::Probit { SigmaPrior::Fixed { value: 1.0 } } else { SigmaPrior::default() };
    FactorModelSpec::new(
        kind,
        loadings,
        PhiModel::new(3, PhiFamily::Exchangeable).unwrap(),
        MgpHyper { a1: 3.0, a2: 3.0 },
        sigma,
        MeanModel::Constant { prior_var: 1.0 },
    )
    .unwrap()
}

fn monitors(state: &ChainState) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for i in 0..state.lambda.nrows() {
        out.push((format!("lambda[{i}]"), state.lambda[(i, 0)]));
        out.push((format!("lambda[{i}]^2"), state.lambda[(i, 0)].powi(2)));
        out.push((format!("sigma2[{i}]"), state.sigma2[i]));
        out.push((format!("beta[{i}]"), state.beta[(i, 0)]));
    }
    out.push(("rho[0]".into(), state.mgp.rho[0]));
    for (i, t) in state.theta.iter().enumerate() {
        out.push((format!("theta[{i}]"), *t));
    }
    if let Some(pac) = &state.pac {
        for (i, a) in pac.a.iter().enumerate() {
            out.push((format!("A{i}[0,0]"), a[(0, 0)]));
            out.push((format!("A{i}[0,0]^2"), a[(0, 0)].powi(2)));
        }
        out.push(("eta[last,0]".into(), state.eta[(state.eta.nrows() - 1, 0)]));
    }
    if let Some(vc) = state.varsigma_check {
        out.push(("varsigma_check".into(), vc));
    }
    out
}

/// Marginal-conditional versus successive-conditional simulation with a
/// fixed truncation. Returns `(monitor, z-score)` pairs.
pub fn geweke(spec: &FactorModelSpec, n: usize, iterations: usize, seed: u64) -> Vec<(String, f64)> {
    geweke_with(spec, n, 1, iterations, seed)
}

pub fn geweke_with(spec: &FactorModelSpec, n: usize, h: usize, iterations: usize, seed: u64) -> Vec<(String, f64)> {
    let w = DMatrix::from_element(n, 1, 1.0);
    let shell = Dataset::new(DMatrix::zeros(n, spec.p), None, None).unwrap();
    let mut rng_a = rng(seed);
    let mut forward: Vec<Vec<(String, f64)>> = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let s = ChainState::from_prior(spec, &shell, h, &mut rng_a).unwrap();
        forward.push(monitors(&s));
    }
    let scales = ProposalScales {
        theta: vec![0.8; spec.phi.n_params()],
        varsigma: 1.0,
        mala_step: 0.5,
        mala_block: 2,
    };
    let mut rng_b = rng(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut state = ChainState::from_prior(spec, &shell, h, &mut rng_b).unwrap();
    let mut gibbs: Vec<Vec<(String, f64)>> = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let y = simulate_response(spec, &mut state, &w, &mut rng_b);
        let data = Dataset::new(y, None, None).unwrap();
        gibbs_sweep(&mut state, &data, spec, &scales, &mut rng_b).unwrap();
        gibbs.push(monitors(&state));
    }
    let names: Vec<String> = forward[0].iter().map(|(n, _)| n.clone()).collect();
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let a: Vec<f64> = forward.iter().map(|r| r[k].1).collect();
            let b: Vec<f64> = gibbs.iter().map(|r| r[k].1).collect();
            let (ma, sa) = iid_mean_se(&a);
            let (mb, sb) = batch_mean_se(&b, 50);
            (name.clone(), (ma - mb) / (sa * sa + sb * sb).sqrt())
        })
        .collect()
}

/// FFBS draws for n=5, k=2, m=1 against the exact Gaussian conditional of
/// the 12-dimensional factor path, assembled from its precision matrix.
/// Returns the exact mean, exact covariance and the sampled paths.
pub fn ffbs_oracle_run(reps: usize, seed: u64) -> (nalgebra::DVector<f64>, DMatrix<f64>, Vec<nalgebra::DVector<f64>>) {
    use structfactor::inference::ffbs_factors;
    use structfactor::linalg::standard_normal_matrix;
    use structfactor::stationary_var::{build_initial_dist, pac_to_var, PacParams};
    use structfactor::structured_prior::MgpState;

    let (n, k, p) = (5, 2, 3);
    let mut r = rng(seed);
    let spec = FactorModelSpec::new(
        ModelKind::Dynamic { m: 1 },
        LoadingsPrior::MatrixNormal,
        PhiModel::new(p, PhiFamily::Identity).unwrap(),
        MgpHyper { a1: 2.0, a2: 3.0 },
        SigmaPrior::default(),
        MeanModel::Constant { prior_var: 1.0 },
    )
    .unwrap();
    let pac = PacParams::new(vec![standard_normal_matrix(k, k, &mut r)]).unwrap();
    let var = pac_to_var(&pac).unwrap();
    let g = build_initial_dist(&var).unwrap().g.into_inner();
    let lambda = standard_normal_matrix(p, k, &mut r);
    let sigma2 = nalgebra::DVector::from_vec(vec![0.4, 0.8, 1.5]);
    let beta = DMatrix::from_column_slice(p, 1, &[0.3, -0.2, 0.1]);
    let y = standard_normal_matrix(n, p, &mut r) * 1.5;
    let data = Dataset::new(y.clone(), None, None).unwrap();

    let gamma = &var.gamma[0];
    let pi_inv = var.pi.matrix().clone().try_inverse().unwrap();
    let g_inv = g.try_inverse().unwrap();
    let dim = (n + 1) * k;
    let mut prec = DMatrix::zeros(dim, dim);
    let mut lin = nalgebra::DVector::zeros(dim);
    let gpg = gamma.transpose() * &pi_inv * gamma;
    let pg = &pi_inv * gamma;
    let mut lt_sinv = lambda.transpose();
    for j in 0..p {
        lt_sinv.column_mut(j).scale_mut(1.0 / sigma2[j]);
    }
    let info = &lt_sinv * &lambda;
    for t in 0..=n {
        let mut block = if t == 0 { g_inv.clone() } else { pi_inv.clone() + &info };
        if t < n {
            block += &gpg;
        }
        prec.view_mut((t * k, t * k), (k, k)).copy_from(&block);
        if t > 0 {
            prec.view_mut((t * k, (t - 1) * k), (k, k)).copy_from(&(-&pg));
            prec.view_mut(((t - 1) * k, t * k), (k, k)).copy_from(&(-pg.transpose()));
            let r_t = y.row(t - 1).transpose() - &beta.column(0);
            lin.rows_mut(t * k, k).copy_from(&(&lt_sinv * r_t));
        }
    }
    let cov = prec.try_inverse().unwrap();
    let mean = &cov * lin;

    let mut state = ChainState {
        lambda,
        eta: DMatrix::zeros(n + 1, k),
        sigma2,
        beta,
        kappa: None,
        theta: vec![],
        mgp: MgpState::new(2.0, 3.0, vec![1.0; k]).unwrap(),
        s: None,
        varsigma_check: None,
        pac: Some(pac),
        z: None,
    };
    let mut draws = Vec::with_capacity(reps);
    for _ in 0..reps {
        ffbs_factors(&mut state, &data, &spec, &var, &mut r).unwrap();
        draws.push(nalgebra::DVector::from_iterator(dim, (0..=n).flat_map(|t| (0..k).map(move |j| (t, j))).map(|(t, j)| state.eta[(t, j)])));
    }
    (mean, cov, draws)
}

/// |z|-scores of sample means and sample second central moments against
/// the exact values.
pub fn moment_z_scores(mean: &nalgebra::DVector<f64>, cov: &DMatrix<f64>, draws: &[nalgebra::DVector<f64>]) -> Vec<f64> {
    let d = mean.len();
    let mut out = Vec::new();
    for i in 0..d {
        let xs: Vec<f64> = draws.iter().map(|x| x[i]).collect();
        let (m, se) = iid_mean_se(&xs);
        out.push(((m - mean[i]) / se).abs());
        for j in i..d {
            let prods: Vec<f64> = draws.iter().map(|x| (x[i] - mean[i]) * (x[j] - mean[j])).collect();
            let (c, se) = iid_mean_se(&prods);
            out.push(((c - cov[(i, j)]) / se).abs());
        }
    }
    out
}

/// Largest relative discrepancy between the dual-number gradient of the
/// `A` log-conditional and central differences, over every entry.
pub fn mala_gradient_error(k: usize, m: usize, n: usize, seed: u64) -> f64 {
    use structfactor::inference::VarTarget;
    use structfactor::linalg::standard_normal_matrix;
    use structfactor::stationary_var::{pac_to_var, PacParams};
    let mut r = rng(seed);
    let a: Vec<DMatrix<f64>> = (0..m).map(|_| standard_normal_matrix(k, k, &mut r) * 0.7).collect();
    let var = pac_to_var(&PacParams::new(a.clone()).unwrap()).unwrap();
    let eta = structfactor::inference::simulate_var_path(&var, n, &mut r).unwrap();
    let target = VarTarget::new(&eta, m);
    let entries: Vec<(usize, usize, usize)> = (0..m).flat_map(|i| (0..k * k).map(move |e| (i, e % k, e / k))).collect();
    let grad = target.value_and_grad(&a, &entries).unwrap();
    let mut worst: f64 = 0.0;
    for (d, &(i, row, col)) in entries.iter().enumerate() {
        let x = a[i][(row, col)];
        let h = 1e-6 * (1.0 + x.abs());
        let eval = |v: f64| {
            let mut b = a.clone();
            b[i][(row, col)] = v;
            target.value_and_grad(&b, &[]).unwrap().v
        };
        let fd = (eval(x + h) - eval(x - h)) / (2.0 * h);
        let err = (grad.d[d] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}
