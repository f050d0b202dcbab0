//! Independent reference implementations used only by test suites.
//!
//! Everything here trades efficiency for obviousness: posteriors by explicit
//! path enumeration, smoothing by conditioning one big joint Gaussian,
//! derivatives by central differences, optima by derivative-free search.
//! None of it shares code with the library under test — that is the point.

use nalgebra::{DMatrix, DVector};

/// Composite Simpson quadrature of `f` over `[a, b]` with `panels` panels
/// (`panels` is rounded up to the next even number).
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = if panels % 2 == 0 { panels } else { panels + 1 };
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Golden-section search for the minimizer of a unimodal `f` on `[a, b]`.
pub fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.6180339887498949;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Central-difference Jacobian of a vector-valued `g` at `x`: row `i` is
/// `d g_i / d x_j`.
pub fn fd_jacobian(g: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> DMatrix<f64> {
    let rows = g(x).len();
    let mut jac = DMatrix::zeros(rows, x.len());
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        probe[j] = x[j] + h;
        let up = g(&probe);
        probe[j] = x[j] - h;
        let down = g(&probe);
        probe[j] = x[j];
        for i in 0..rows {
            jac[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    jac
}

/// Projects a gradient onto the tangent space of the probability simplex for
/// each index block `[start, end)`: within a block the component along the
/// all-ones direction is meaningless (parameters are constrained to sum to
/// one), so it is removed.
pub fn project_simplex_blocks(grad: &mut [f64], blocks: &[(usize, usize)]) {
    for &(start, end) in blocks {
        let len = (end - start) as f64;
        let mean = grad[start..end].iter().sum::<f64>() / len;
        for gi in &mut grad[start..end] {
            *gi -= mean;
        }
    }
}

/// Euclidean norm of a slice.
pub fn norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Derivative-free Nelder-Mead minimization, restarted a few times around
/// the incumbent so small instances converge well past 1e-8.
pub fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    initial_step: f64,
    max_iters: usize,
    restarts: usize,
) -> Vec<f64> {
    let mut best = x0.to_vec();
    let mut step = initial_step;
    for _ in 0..=restarts {
        best = nelder_mead_once(f, &best, step, max_iters);
        step *= 0.1;
    }
    best
}

fn nelder_mead_once(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_iters: usize,
) -> Vec<f64> {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    for _ in 0..max_iters {
        // Order best -> worst.
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
        let reordered: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let revalued: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        simplex = reordered;
        values = revalued;

        if (values[n] - values[0]).abs() < 1e-14 * (1.0 + values[0].abs()) {
            break;
        }

        // Centroid of all but the worst.
        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }

        let lerp = |from: &[f64], towards: &[f64], t: f64| -> Vec<f64> {
            from.iter()
                .zip(towards)
                .map(|(a, b)| a + t * (b - a))
                .collect()
        };

        let reflected = lerp(&simplex[n], &centroid, 2.0);
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded = lerp(&simplex[n], &centroid, 3.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let contracted = lerp(&simplex[n], &centroid, 0.5);
            let fc = f(&contracted);
            if fc < values[n] {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                // Shrink towards the best vertex.
                for i in 1..=n {
                    simplex[i] = lerp(&simplex[i], &simplex[0], 0.5);
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..=n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    simplex[order[0]].clone()
}

/// Hidden-path posteriors obtained by enumerating every path explicitly.
pub struct EnumeratedPosteriors {
    /// `T x k`: marginal probability of state `h` at time `t`.
    pub state_marginals: DMatrix<f64>,
    /// `T-1` matrices, entry `(h, h')`: joint probability of `(h_t, h_{t+1})`.
    pub pair_marginals: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
}

/// Brute-force forward-backward: sums over all `k^T` hidden paths.
/// `log_emissions[(t, h)]` is the log-density of observation `t` under state
/// `h` (use `-inf` for states that cannot emit).
pub fn enumerate_hmm_posteriors(
    initial: &DVector<f64>,
    transitions: &DMatrix<f64>,
    log_emissions: &DMatrix<f64>,
) -> EnumeratedPosteriors {
    let k = initial.len();
    let t_len = log_emissions.nrows();
    let path_count = k.pow(t_len as u32);
    let mut log_weights = Vec::with_capacity(path_count);
    let mut paths = Vec::with_capacity(path_count);

    for code in 0..path_count {
        let mut path = Vec::with_capacity(t_len);
        let mut rest = code;
        for _ in 0..t_len {
            path.push(rest % k);
            rest /= k;
        }
        let mut lw = initial[path[0]].ln() + log_emissions[(0, path[0])];
        for t in 1..t_len {
            lw += transitions[(path[t - 1], path[t])].ln() + log_emissions[(t, path[t])];
        }
        log_weights.push(lw);
        paths.push(path);
    }

    let max_lw = log_weights
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_weights.iter().map(|lw| (lw - max_lw).exp()).collect();
    let total: f64 = weights.iter().sum();

    let mut state_marginals = DMatrix::zeros(t_len, k);
    let mut pair_marginals = vec![DMatrix::zeros(k, k); t_len.saturating_sub(1)];
    for (path, w) in paths.iter().zip(&weights) {
        let p = w / total;
        for (t, &h) in path.iter().enumerate() {
            state_marginals[(t, h)] += p;
        }
        for t in 0..t_len - 1 {
            pair_marginals[t][(path[t], path[t + 1])] += p;
        }
    }

    EnumeratedPosteriors {
        state_marginals,
        pair_marginals,
        log_likelihood: max_lw + total.ln(),
    }
}

/// Smoothing moments for a linear-Gaussian state-space model obtained by
/// conditioning the explicit joint Gaussian over all hidden states and
/// observations — no recursions involved.
pub struct JointGaussianSmoother {
    /// Posterior mean of each hidden state.
    pub means: Vec<DVector<f64>>,
    /// Posterior covariance of each hidden state.
    pub covariances: Vec<DMatrix<f64>>,
    /// Posterior cross-covariance `Cov(h_{t+1}, h_t | v)`, `T-1` entries.
    pub cross_covariances: Vec<DMatrix<f64>>,
    /// Log marginal density of the observation sequence.
    pub log_likelihood: f64,
}

/// Conditions the joint Gaussian of `(h_1..h_T, v_1..v_T)` on the observed
/// `v` sequence.  Model: `h_1 ~ N(pi1, v0)`, `h_{t+1} = A h_t + N(0, q)`,
/// `v_t = C h_t + N(0, r)`.
#[allow(clippy::too_many_arguments)]
pub fn joint_gaussian_smoother(
    pi1: &DVector<f64>,
    v0: &DMatrix<f64>,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    observations: &[DVector<f64>],
) -> JointGaussianSmoother {
    let t_len = observations.len();
    let n = pi1.len();
    let d = c.nrows();

    // Hidden-state means and pairwise covariances.
    let mut h_means: Vec<DVector<f64>> = Vec::with_capacity(t_len);
    h_means.push(pi1.clone());
    for t in 1..t_len {
        h_means.push(a * &h_means[t - 1]);
    }
    // cov[(s, t)] = Cov(h_s, h_t); fill s <= t then mirror by transpose.
    let mut cov = vec![vec![DMatrix::zeros(n, n); t_len]; t_len];
    cov[0][0] = v0.clone();
    for t in 1..t_len {
        cov[t][t] = a * &cov[t - 1][t - 1] * a.transpose() + q;
    }
    for s in 0..t_len {
        for t in (s + 1)..t_len {
            // Cov(h_s, h_t) = Cov(h_s, h_{t-1}) A^T
            let prev = if t - 1 == s {
                cov[s][s].clone()
            } else {
                cov[s][t - 1].clone()
            };
            cov[s][t] = prev * a.transpose();
        }
    }

    // Assemble big joint over (h stacked, v stacked).
    let hn = n * t_len;
    let dn = d * t_len;
    let mut mean_h = DVector::zeros(hn);
    let mut mean_v = DVector::zeros(dn);
    for t in 0..t_len {
        mean_h.rows_mut(t * n, n).copy_from(&h_means[t]);
        mean_v.rows_mut(t * d, d).copy_from(&(c * &h_means[t]));
    }
    let mut sigma_hh = DMatrix::zeros(hn, hn);
    let mut sigma_hv = DMatrix::zeros(hn, dn);
    let mut sigma_vv = DMatrix::zeros(dn, dn);
    for s in 0..t_len {
        for t in 0..t_len {
            let block = if s <= t {
                cov[s][t].clone()
            } else {
                cov[t][s].transpose()
            };
            sigma_hh.view_mut((s * n, t * n), (n, n)).copy_from(&block);
            sigma_hv
                .view_mut((s * n, t * d), (n, d))
                .copy_from(&(&block * c.transpose()));
            let mut vv = c * &block * c.transpose();
            if s == t {
                vv += r;
            }
            sigma_vv.view_mut((s * d, t * d), (d, d)).copy_from(&vv);
        }
    }

    let mut v_stacked = DVector::zeros(dn);
    for (t, obs) in observations.iter().enumerate() {
        v_stacked.rows_mut(t * d, d).copy_from(obs);
    }

    let chol = nalgebra::Cholesky::new(sigma_vv.clone()).expect("oracle: sigma_vv must be SPD");
    let resid = &v_stacked - &mean_v;
    let solved = chol.solve(&resid);
    let post_mean = &mean_h + &sigma_hv * &solved;
    let post_cov = &sigma_hh - &sigma_hv * chol.solve(&sigma_hv.transpose());

    let log_det: f64 = chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>() * 2.0;
    let log_likelihood =
        -0.5 * (dn as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + resid.dot(&solved));

    let mut means = Vec::with_capacity(t_len);
    let mut covariances = Vec::with_capacity(t_len);
    let mut cross_covariances = Vec::with_capacity(t_len.saturating_sub(1));
    for t in 0..t_len {
        means.push(post_mean.rows(t * n, n).clone_owned());
        covariances.push(post_cov.view((t * n, t * n), (n, n)).clone_owned());
        if t > 0 {
            cross_covariances.push(post_cov.view((t * n, (t - 1) * n), (n, n)).clone_owned());
        }
    }

    JointGaussianSmoother {
        means,
        covariances,
        cross_covariances,
        log_likelihood,
    }
}
