//! Derivative-free Nelder-Mead simplex minimization. Deterministic given
//! the starting point, which the multistart optimizer exploits for
//! bit-reproducible runs.

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_iters: usize,
    pub f_tol: f64,
    pub x_tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions { max_iters: 400, f_tol: 1e-10, x_tol: 1e-9 }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimize `f` starting from `x0`, with `scale` setting the initial
/// simplex edge along each coordinate.
pub fn minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    scale: &[f64],
    opts: &SimplexOptions,
) -> SimplexResult {
    let n = x0.len();
    assert_eq!(n, scale.len());
    if n == 0 {
        let value = f(x0);
        return SimplexResult { x: Vec::new(), value, iterations: 0, converged: true };
    }

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if scale[i] != 0.0 { scale[i] } else { 0.1 };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| f(p)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        iterations += 1;
        // order ascending by value
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
        let reordered: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let revalues: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        simplex = reordered;
        values = revalues;

        let f_spread = (values[n] - values[0]).abs();
        let x_spread = (0..n)
            .map(|d| {
                simplex
                    .iter()
                    .map(|p| (p[d] - simplex[0][d]).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max);
        if f_spread <= opts.f_tol * (values[0].abs() + 1e-12) && x_spread <= opts.x_tol {
            converged = true;
            break;
        }

        // centroid of all but worst
        let mut centroid = vec![0.0; n];
        for p in simplex.iter().take(n) {
            for d in 0..n {
                centroid[d] += p[d] / n as f64;
            }
        }

        let worst = values[n];
        let second_worst = values[n - 1];
        let best = values[0];

        let lerp = |t: f64| -> Vec<f64> {
            (0..n).map(|d| centroid[d] + t * (centroid[d] - simplex[n][d])).collect()
        };

        let reflected = lerp(alpha);
        let f_reflected = f(&reflected);

        if f_reflected < best {
            let expanded = lerp(gamma);
            let f_expanded = f(&expanded);
            if f_expanded < f_reflected {
                simplex[n] = expanded;
                values[n] = f_expanded;
            } else {
                simplex[n] = reflected;
                values[n] = f_reflected;
            }
        } else if f_reflected < second_worst {
            simplex[n] = reflected;
            values[n] = f_reflected;
        } else {
            let contracted = if f_reflected < worst { lerp(rho) } else { lerp(-rho) };
            let f_contracted = f(&contracted);
            if f_contracted < worst.min(f_reflected) {
                simplex[n] = contracted;
                values[n] = f_contracted;
            } else {
                // shrink toward the best vertex
                for i in 1..=n {
                    for d in 0..n {
                        simplex[i][d] = simplex[0][d] + sigma * (simplex[i][d] - simplex[0][d]);
                    }
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }

    let mut best_idx = 0;
    for i in 1..=n {
        if values[i] < values[best_idx] {
            best_idx = i;
        }
    }
    SimplexResult {
        x: simplex[best_idx].clone(),
        value: values[best_idx],
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic_bowl() {
        let r = minimize(
            |x| (x[0] - 1.5).powi(2) + 3.0 * (x[1] + 0.5).powi(2),
            &[0.0, 0.0],
            &[0.5, 0.5],
            &SimplexOptions::default(),
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.5).abs() < 1e-5);
        assert!((r.x[1] + 0.5).abs() < 1e-5);
    }

    #[test]
    fn minimizes_rosenbrock() {
        let opts = SimplexOptions { max_iters: 4000, ..Default::default() };
        let r = minimize(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.5, 0.5],
            &opts,
        );
        assert!(r.value < 1e-8, "value {}", r.value);
    }

    #[test]
    fn is_deterministic() {
        let run = || {
            minimize(
                |x| x[0].sin() * x[1].cos() + 0.1 * x[0] * x[0] + 0.05 * x[1] * x[1],
                &[2.0, -1.0],
                &[0.3, 0.3],
                &SimplexOptions::default(),
            )
        };
        let a = run();
        let b = run();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.x[0].to_bits(), b.x[0].to_bits());
    }

    #[test]
    fn zero_dimensional_input_returns_immediately() {
        let r = minimize(|_| 7.0, &[], &[], &SimplexOptions::default());
        assert_eq!(r.value, 7.0);
        assert!(r.converged);
    }
}
