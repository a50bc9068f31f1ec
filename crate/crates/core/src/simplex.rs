//! Nelder–Mead simplex descent for small unconstrained problems.

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions<const N: usize> {
    /// Per-coordinate offsets of the initial simplex vertices.
    pub initial_step: [f64; N],
    /// Stop when the spread of simplex values falls below this...
    pub f_tol: f64,
    /// ...and every vertex lies within this distance of the best one.
    pub x_tol: f64,
    pub max_iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadResult<const N: usize> {
    pub point: [f64; N],
    pub value: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimizes `f` starting from `x0` with the standard reflection, expansion,
/// contraction and shrink moves.
pub fn nelder_mead<const N: usize>(
    mut f: impl FnMut(&[f64; N]) -> f64,
    x0: [f64; N],
    opts: &NelderMeadOptions<N>,
) -> NelderMeadResult<N> {
    let mut evaluations = 0;
    let mut eval = |x: &[f64; N]| {
        evaluations += 1;
        f(x)
    };

    let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
    simplex.push((x0, eval(&x0)));
    for i in 0..N {
        let mut x = x0;
        x[i] += opts.initial_step[i];
        let v = eval(&x);
        simplex.push((x, v));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0];
        let worst = simplex[N];
        let spread = worst.1 - best.1;
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| dist(x, &best.0))
            .fold(0.0, f64::max);
        if spread <= opts.f_tol && size <= opts.x_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = [0.0; N];
        for (x, _) in &simplex[..N] {
            for k in 0..N {
                centroid[k] += x[k] / N as f64;
            }
        }
        let along = |t: f64| {
            let mut y = [0.0; N];
            for k in 0..N {
                y[k] = centroid[k] + t * (worst.0[k] - centroid[k]);
            }
            y
        };

        let xr = along(-REFLECT);
        let fr = eval(&xr);
        if fr < best.1 {
            let xe = along(-EXPAND);
            let fe = eval(&xe);
            simplex[N] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[N - 1].1 {
            simplex[N] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let x = along(-CONTRACT);
            (x, eval(&x))
        } else {
            let x = along(CONTRACT);
            (x, eval(&x))
        };
        if fc < worst.1.min(fr) {
            simplex[N] = (xc, fc);
            continue;
        }
        for v in simplex.iter_mut().skip(1) {
            let mut x = [0.0; N];
            for k in 0..N {
                x[k] = best.0[k] + SHRINK * (v.0[k] - best.0[k]);
            }
            *v = (x, eval(&x));
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    NelderMeadResult {
        point: simplex[0].0,
        value: simplex[0].1,
        evaluations,
        iterations,
        converged,
    }
}

fn dist<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> NelderMeadOptions<2> {
        NelderMeadOptions {
            initial_step: [0.5, 0.5],
            f_tol: 1e-14,
            x_tol: 1e-9,
            max_iterations: 2000,
        }
    }

    #[test]
    fn quadratic_bowl() {
        let r = nelder_mead(|x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2), [0.0, 0.0], &opts());
        assert!(r.converged);
        assert!((r.point[0] - 1.0).abs() < 1e-7);
        assert!((r.point[1] + 2.0).abs() < 1e-7);
    }

    #[test]
    fn rosenbrock() {
        let r = nelder_mead(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            [-1.2, 1.0],
            &opts(),
        );
        assert!(r.value < 1e-12, "{r:?}");
    }

    #[test]
    fn never_returns_worse_than_start() {
        let f = |x: &[f64; 2]| (x[0] * 3.0).sin() + (x[1] * 2.0).cos();
        let start = [0.3, -0.7];
        let r = nelder_mead(f, start, &opts());
        assert!(r.value <= f(&start));
    }
}
