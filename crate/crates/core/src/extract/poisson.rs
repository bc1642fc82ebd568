//! Screened Poisson indicator solve on a regular node grid.

use crate::exec::{dot, for_each_chunk_mut, map_range, Execution};
use crate::math::Vec3;

use super::OrientedPointSet;

/// Scalar field sampled at the nodes of a cubic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorGrid {
    pub resolution: usize,
    pub origin: Vec3,
    /// Node spacing.
    pub spacing: f64,
    pub values: Vec<f64>,
    pub iso: f64,
}

impl IndicatorGrid {
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.spacing
    }

    pub fn upper(&self) -> Vec3 {
        self.origin + Vec3::repeat((self.resolution - 1) as f64 * self.spacing)
    }

    /// Trilinear interpolation, clamped to the grid.
    pub fn sample(&self, p: &Vec3) -> f64 {
        let (base, w) = trilinear(self.resolution, &self.origin, self.spacing, p);
        let mut acc = 0.0;
        for (c, wc) in w.iter().enumerate() {
            let (i, j, k) = (
                base[0] + (c & 1),
                base[1] + ((c >> 1) & 1),
                base[2] + (c >> 2),
            );
            acc += wc * self.values[self.index(i, j, k)];
        }
        acc
    }
}

/// Lower-corner cell index and the 8 corner weights of `p`, in
/// `x`-fastest corner order.
pub(crate) fn trilinear(res: usize, origin: &Vec3, h: f64, p: &Vec3) -> ([usize; 3], [f64; 8]) {
    let mut base = [0usize; 3];
    let mut f = [0.0; 3];
    for a in 0..3 {
        let u = ((p[a] - origin[a]) / h).clamp(0.0, (res - 1) as f64);
        let b = (u.floor() as usize).min(res - 2);
        base[a] = b;
        f[a] = u - b as f64;
    }
    let mut w = [0.0; 8];
    for (c, wc) in w.iter_mut().enumerate() {
        let wx = if c & 1 == 1 { f[0] } else { 1.0 - f[0] };
        let wy = if (c >> 1) & 1 == 1 { f[1] } else { 1.0 - f[1] };
        let wz = if c >> 2 == 1 { f[2] } else { 1.0 - f[2] };
        *wc = wx * wy * wz;
    }
    (base, w)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SolveSettings {
    pub screening: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub execution: Execution,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Screening samples: trilinear stencil and weight per point.
struct Screen {
    base: Vec<usize>,
    weights: Vec<[f64; 8]>,
    strength: Vec<f64>,
}

struct Problem {
    res: usize,
    screen: Screen,
    rhs: Vec<f64>,
    diag: Vec<f64>,
}

fn corner_offsets(res: usize) -> [usize; 8] {
    std::array::from_fn(|c| (c & 1) + ((c >> 1) & 1) * res + (c >> 2) * res * res)
}

fn build_problem(
    points: &OrientedPointSet,
    areas: &[f64],
    res: usize,
    origin: &Vec3,
    h: f64,
    s: &SolveSettings,
) -> Problem {
    let n = res * res * res;
    let offs = corner_offsets(res);
    let lin = |b: [usize; 3]| (b[2] * res + b[1]) * res + b[0];

    // Staggered vector field: the axis-a component lives at edge midpoints
    // between node (i) and node (i + e_a), i.e. on a grid shifted by h/2.
    // V approximates the smoothed gradient of the indicator (−n per area).
    let mut edge_v = vec![vec![0.0; n]; 3];
    let inv_h3 = 1.0 / (h * h * h);
    for (p, (nrm, &a)) in points.points.iter().zip(points.normals.iter().zip(areas)) {
        for (axis, field) in edge_v.iter_mut().enumerate() {
            let mut shifted = *origin;
            shifted[axis] += 0.5 * h;
            let (base, w) = trilinear(res, &shifted, h, &Vec3::from(*p));
            let base_i = lin(base);
            for c in 0..8 {
                field[base_i + offs[c]] -= a * nrm[axis] * w[c] * inv_h3;
            }
        }
    }

    // rhs = h·Dᵀ V (+ screening target), edges only where both nodes exist.
    let mut rhs = vec![0.0; n];
    let strides = [1, res, res * res];
    for k in 0..res {
        for j in 0..res {
            for i in 0..res {
                let idx = lin([i, j, k]);
                let coord = [i, j, k];
                for axis in 0..3 {
                    if coord[axis] + 1 < res {
                        let v = h * edge_v[axis][idx];
                        rhs[idx] -= v;
                        rhs[idx + strides[axis]] += v;
                    }
                }
            }
        }
    }

    let mut diag: Vec<f64> = (0..n)
        .map(|idx| {
            let (i, j, k) = (idx % res, (idx / res) % res, idx / (res * res));
            [i, j, k]
                .iter()
                .map(|&c| (c > 0) as usize as f64 + (c + 1 < res) as usize as f64)
                .sum()
        })
        .collect();

    let mut screen = Screen {
        base: Vec::new(),
        weights: Vec::new(),
        strength: Vec::new(),
    };
    let cmax = points
        .confidences
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    for (idx, p) in points.points.iter().enumerate() {
        let (base, w) = trilinear(res, origin, h, &Vec3::from(*p));
        let b = lin(base);
        let lambda = s.screening * areas[idx] / (h * h) * points.confidences[idx] / cmax;
        for c in 0..8 {
            rhs[b + offs[c]] += lambda * 0.5 * w[c];
            diag[b + offs[c]] += lambda * w[c] * w[c];
        }
        screen.base.push(b);
        screen.weights.push(w);
        screen.strength.push(lambda);
    }
    Problem {
        res,
        screen,
        rhs,
        diag,
    }
}

fn apply(p: &Problem, x: &[f64], y: &mut [f64], exec: Execution) {
    let res = p.res;
    let slab = res * res;
    for_each_chunk_mut(exec, y, slab, |k, out| {
        for j in 0..res {
            for i in 0..res {
                let idx = (k * res + j) * res + i;
                let xc = x[idx];
                let mut acc = 0.0;
                if i > 0 {
                    acc += xc - x[idx - 1];
                }
                if i + 1 < res {
                    acc += xc - x[idx + 1];
                }
                if j > 0 {
                    acc += xc - x[idx - res];
                }
                if j + 1 < res {
                    acc += xc - x[idx + res];
                }
                if k > 0 {
                    acc += xc - x[idx - slab];
                }
                if k + 1 < res {
                    acc += xc - x[idx + slab];
                }
                out[j * res + i] = acc;
            }
        }
    });
    let offs = corner_offsets(res);
    for ((&b, w), &l) in p
        .screen
        .base
        .iter()
        .zip(&p.screen.weights)
        .zip(&p.screen.strength)
    {
        let v: f64 = (0..8).map(|c| w[c] * x[b + offs[c]]).sum();
        for c in 0..8 {
            y[b + offs[c]] += l * w[c] * v;
        }
    }
}

/// Jacobi-preconditioned conjugate gradients.
fn conjugate_gradient(p: &Problem, x: &mut [f64], s: &SolveSettings) -> SolveStats {
    let exec = s.execution;
    let n = x.len();
    let mut r = vec![0.0; n];
    apply(p, x, &mut r, exec);
    for (ri, bi) in r.iter_mut().zip(&p.rhs) {
        *ri = bi - *ri;
    }
    let bnorm = dot(exec, &p.rhs, &p.rhs).sqrt().max(f64::MIN_POSITIVE);
    let mut z: Vec<f64> = r.iter().zip(&p.diag).map(|(r, d)| r / d).collect();
    let mut d = z.clone();
    let mut rz = dot(exec, &r, &z);
    let mut q = vec![0.0; n];
    let mut rel = dot(exec, &r, &r).sqrt() / bnorm;
    let mut it = 0;
    while it < s.max_iterations && rel > s.tolerance {
        apply(p, &d, &mut q, exec);
        let alpha = rz / dot(exec, &d, &q);
        for i in 0..n {
            x[i] += alpha * d[i];
            r[i] -= alpha * q[i];
            z[i] = r[i] / p.diag[i];
        }
        let rz_new = dot(exec, &r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            d[i] = z[i] + beta * d[i];
        }
        rel = dot(exec, &r, &r).sqrt() / bnorm;
        it += 1;
    }
    SolveStats {
        iterations: it,
        relative_residual: rel,
    }
}

/// Solves for the indicator on a `res³` node grid spanning the cube
/// `[origin, origin + size]`, warm-started from coarser solves.
pub(crate) fn solve_indicator(
    points: &OrientedPointSet,
    areas: &[f64],
    res: usize,
    origin: &Vec3,
    size: f64,
    s: &SolveSettings,
) -> (IndicatorGrid, SolveStats) {
    let h = size / (res - 1) as f64;
    let initial = if res > 24 {
        let coarse_res = res.div_ceil(2);
        let (coarse, _) = solve_indicator(points, areas, coarse_res, origin, size, s);
        map_range(s.execution, res * res * res, |idx| {
            let (i, j, k) = (idx % res, (idx / res) % res, idx / (res * res));
            coarse.sample(&(origin + Vec3::new(i as f64, j as f64, k as f64) * h))
        })
    } else {
        vec![0.5; res * res * res]
    };
    let problem = build_problem(points, areas, res, origin, h, s);
    let mut values = initial;
    let stats = conjugate_gradient(&problem, &mut values, s);
    log::debug!(
        "indicator solve {res}^3: {} iterations, residual {:.2e}",
        stats.iterations,
        stats.relative_residual
    );
    (
        IndicatorGrid {
            resolution: res,
            origin: *origin,
            spacing: h,
            values,
            iso: 0.5,
        },
        stats,
    )
}
