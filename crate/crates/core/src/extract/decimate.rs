//! Quadric-error edge collapse.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::math::{Mat3, Vec3};

type Quadric = [f64; 10];

fn plane_quadric(a: &Vec3, b: &Vec3, c: &Vec3) -> Quadric {
    let n = (b - a).cross(&(c - a));
    let area2 = n.norm();
    if area2 == 0.0 {
        return [0.0; 10];
    }
    let n = n / area2;
    let d = -n.dot(a);
    let w = area2 * 0.5;
    [
        w * n.x * n.x,
        w * n.x * n.y,
        w * n.x * n.z,
        w * n.x * d,
        w * n.y * n.y,
        w * n.y * n.z,
        w * n.y * d,
        w * n.z * n.z,
        w * n.z * d,
        w * d * d,
    ]
}

fn add(a: &Quadric, b: &Quadric) -> Quadric {
    std::array::from_fn(|i| a[i] + b[i])
}

fn error(q: &Quadric, p: &Vec3) -> f64 {
    let (x, y, z) = (p.x, p.y, p.z);
    q[0] * x * x
        + 2.0 * q[1] * x * y
        + 2.0 * q[2] * x * z
        + 2.0 * q[3] * x
        + q[4] * y * y
        + 2.0 * q[5] * y * z
        + 2.0 * q[6] * y
        + q[7] * z * z
        + 2.0 * q[8] * z
        + q[9]
}

fn best_position(q: &Quadric, a: &Vec3, b: &Vec3) -> (Vec3, f64) {
    let m = Mat3::new(q[0], q[1], q[2], q[1], q[4], q[5], q[2], q[5], q[7]);
    let rhs = -Vec3::new(q[3], q[6], q[8]);
    let scale = m.norm().max(f64::MIN_POSITIVE);
    if m.determinant().abs() > 1e-9 * scale * scale * scale {
        if let Some(inv) = m.try_inverse() {
            let p = inv * rhs;
            // keep the optimum near the edge
            let len = (b - a).norm();
            if (p - (a + b) * 0.5).norm() <= 2.0 * len {
                return (p, error(q, &p).max(0.0));
            }
        }
    }
    [*a, *b, (a + b) * 0.5]
        .into_iter()
        .map(|p| (p, error(q, &p).max(0.0)))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    cost: f64,
    u: u32,
    v: u32,
    stamp: (u32, u32),
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, o: &Self) -> Ordering {
        // min-heap on cost, ties by vertex pair
        o.cost
            .total_cmp(&self.cost)
            .then((o.u, o.v).cmp(&(self.u, self.v)))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

struct State {
    pos: Vec<Vec3>,
    quadrics: Vec<Quadric>,
    stamp: Vec<u32>,
    alive_v: Vec<bool>,
    boundary: Vec<bool>,
    tris: Vec<[u32; 3]>,
    alive_t: Vec<bool>,
    vtris: Vec<Vec<u32>>,
    /// Doubled area below which a triangle counts as degenerate.
    sliver: f64,
}

impl State {
    fn neighbors(&self, v: u32) -> Vec<u32> {
        let mut out: Vec<u32> = self.vtris[v as usize]
            .iter()
            .flat_map(|&t| self.tris[t as usize])
            .filter(|&w| w != v)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn entry(&self, u: u32, v: u32) -> Option<Entry> {
        if self.boundary[u as usize] || self.boundary[v as usize] {
            return None;
        }
        let (u, v) = (u.min(v), u.max(v));
        let q = add(&self.quadrics[u as usize], &self.quadrics[v as usize]);
        let (_, cost) = best_position(&q, &self.pos[u as usize], &self.pos[v as usize]);
        Some(Entry {
            cost,
            u,
            v,
            stamp: (self.stamp[u as usize], self.stamp[v as usize]),
        })
    }

    /// Link condition plus a normal-flip guard.
    fn can_collapse(&self, u: u32, v: u32, p: &Vec3) -> bool {
        let nu = self.neighbors(u);
        let nv = self.neighbors(v);
        let shared = nu.iter().filter(|w| nv.binary_search(w).is_ok()).count();
        let edge_tris = self.vtris[u as usize]
            .iter()
            .filter(|&&t| self.tris[t as usize].contains(&v))
            .count();
        if edge_tris != 2 || shared != 2 {
            return false;
        }
        for (moving, other) in [(u, v), (v, u)] {
            for &t in &self.vtris[moving as usize] {
                let tri = self.tris[t as usize];
                if tri.contains(&other) {
                    continue;
                }
                let [a, b, c] = tri.map(|i| self.pos[i as usize]);
                let before = (b - a).cross(&(c - a));
                let moved = tri.map(|i| {
                    if i == moving {
                        *p
                    } else {
                        self.pos[i as usize]
                    }
                });
                let after = (moved[1] - moved[0]).cross(&(moved[2] - moved[0]));
                let (lb, la) = (before.norm(), after.norm());
                if lb <= self.sliver {
                    continue;
                }
                if la <= self.sliver || before.dot(&after) < 0.2 * lb * la {
                    return false;
                }
            }
        }
        true
    }
}

impl State {
    fn new(vertices: &[[f64; 3]], triangles: &[[u32; 3]]) -> (Self, Vec<(u32, u32)>) {
        let nv = vertices.len();
        let pos: Vec<Vec3> = vertices.iter().map(|v| Vec3::from(*v)).collect();
        let mut quadrics = vec![[0.0; 10]; nv];
        let mut vtris = vec![Vec::new(); nv];
        let mut edge_count: std::collections::HashMap<(u32, u32), u32> =
            std::collections::HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            let q = plane_quadric(
                &pos[tri[0] as usize],
                &pos[tri[1] as usize],
                &pos[tri[2] as usize],
            );
            for k in 0..3 {
                let i = tri[k] as usize;
                quadrics[i] = add(&quadrics[i], &q);
                vtris[i].push(t as u32);
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *edge_count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut boundary = vec![false; nv];
        for (&(a, b), &c) in &edge_count {
            if c != 2 {
                boundary[a as usize] = true;
                boundary[b as usize] = true;
            }
        }
        let mut edges: Vec<(u32, u32)> = edge_count.keys().copied().collect();
        edges.sort_unstable();
        let st = State {
            pos,
            quadrics,
            stamp: vec![0; nv],
            alive_v: vec![true; nv],
            boundary,
            tris: triangles.to_vec(),
            alive_t: vec![true; triangles.len()],
            vtris,
            sliver: 0.0,
        };
        (st, edges)
    }

    fn area2(&self, t: usize) -> f64 {
        let [a, b, c] = self.tris[t].map(|i| self.pos[i as usize]);
        (b - a).cross(&(c - a)).norm()
    }

    /// Merges `v` into `u` placed at `p`; returns the number of triangles removed.
    fn collapse(&mut self, u: u32, v: u32, p: Vec3, q: Quadric) -> usize {
        self.pos[u as usize] = p;
        self.quadrics[u as usize] = q;
        self.alive_v[v as usize] = false;
        self.stamp[u as usize] += 1;
        let mut removed = 0;
        let vt = std::mem::take(&mut self.vtris[v as usize]);
        for t in vt {
            let tri = self.tris[t as usize];
            if tri.contains(&u) {
                self.alive_t[t as usize] = false;
                removed += 1;
                for &w in tri.iter() {
                    if w != v {
                        self.vtris[w as usize].retain(|&x| x != t);
                    }
                }
            } else {
                for w in self.tris[t as usize].iter_mut() {
                    if *w == v {
                        *w = u;
                    }
                }
                self.vtris[u as usize].push(t);
            }
        }
        removed
    }

    /// Flips the longest edge of triangle `t` (a cap-shaped sliver) when the
    /// opposite diagonal does not exist yet.
    fn flip_longest(&mut self, t: usize) -> bool {
        let tri = self.tris[t];
        let k = (0..3)
            .max_by(|&i, &j| {
                let li = (self.pos[tri[i] as usize] - self.pos[tri[(i + 1) % 3] as usize]).norm();
                let lj = (self.pos[tri[j] as usize] - self.pos[tri[(j + 1) % 3] as usize]).norm();
                li.total_cmp(&lj)
            })
            .unwrap();
        let (a, b, c) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
        let Some(&t2) = self.vtris[a as usize].iter().find(|&&o| {
            o as usize != t && self.alive_t[o as usize] && self.tris[o as usize].contains(&b)
        }) else {
            return false;
        };
        let other = self.tris[t2 as usize];
        let Some(&d) = other.iter().find(|&&w| w != a && w != b) else {
            return false;
        };
        // t2 must traverse the edge as b -> a
        let j = other.iter().position(|&w| w == b).unwrap();
        if other[(j + 1) % 3] != a || d == c || self.neighbors(c).contains(&d) {
            return false;
        }
        let new1 = [a, d, c];
        let new2 = [d, b, c];
        let normal = |tri: [u32; 3]| {
            let [p, q, r] = tri.map(|i| self.pos[i as usize]);
            (q - p).cross(&(r - p))
        };
        let reference = normal(other);
        if normal(new1).dot(&reference) <= 0.0 || normal(new2).dot(&reference) <= 0.0 {
            return false;
        }
        self.tris[t] = new1;
        self.tris[t2 as usize] = new2;
        self.vtris[b as usize].retain(|&x| x as usize != t);
        self.vtris[d as usize].push(t as u32);
        self.vtris[a as usize].retain(|&x| x != t2);
        self.vtris[c as usize].push(t2);
        true
    }

    fn finish(self) -> (Vec<[f64; 3]>, Vec<[u32; 3]>) {
        let tris = self
            .tris
            .iter()
            .zip(&self.alive_t)
            .filter(|(_, &a)| a)
            .map(|(t, _)| *t)
            .collect();
        let verts = self.pos.iter().map(|p| [p.x, p.y, p.z]).collect();
        (verts, tris)
    }
}

/// Collapses edges in order of quadric error until at most `target`
/// triangles remain. Triangles with (doubled) area at or below `min_area2`
/// are collapsed first regardless of the budget. Boundary vertices are kept
/// in place. Returns the surviving vertices (unreferenced ones included) and
/// triangles.
pub fn decimate(
    vertices: &[[f64; 3]],
    triangles: &[[u32; 3]],
    target: usize,
    min_area2: f64,
) -> (Vec<[f64; 3]>, Vec<[u32; 3]>) {
    let (mut st, edges) = State::new(vertices, triangles);
    st.sliver = min_area2;
    let mut alive = triangles.len();

    // Degenerate triangles: try their edges, cheapest first, until a pass
    // makes no progress.
    for _pass in 0..16 {
        let mut progress = false;
        for t in 0..st.tris.len() {
            if !st.alive_t[t] || st.area2(t) > min_area2 {
                continue;
            }
            let tri = st.tris[t];
            let mut options: Vec<Entry> = (0..3)
                .filter_map(|k| st.entry(tri[k], tri[(k + 1) % 3]))
                .collect();
            options.sort_by(|a, b| b.cmp(a));
            let mut done = false;
            for e in options {
                let q = add(&st.quadrics[e.u as usize], &st.quadrics[e.v as usize]);
                let (p, _) = best_position(&q, &st.pos[e.u as usize], &st.pos[e.v as usize]);
                if st.can_collapse(e.u, e.v, &p) {
                    alive -= st.collapse(e.u, e.v, p, q);
                    done = true;
                    break;
                }
            }
            progress |= done || st.flip_longest(t);
        }
        if !progress {
            break;
        }
    }

    if alive > target {
        let mut heap: BinaryHeap<Entry> = edges
            .iter()
            .filter(|&&(a, b)| st.alive_v[a as usize] && st.alive_v[b as usize])
            .filter_map(|&(a, b)| st.entry(a, b))
            .collect();
        for v in 0..st.pos.len() as u32 {
            if st.alive_v[v as usize] && st.stamp[v as usize] > 0 {
                for w in st.neighbors(v) {
                    if let Some(e) = st.entry(v, w) {
                        heap.push(e);
                    }
                }
            }
        }
        while alive > target {
            let Some(e) = heap.pop() else { break };
            let (u, v) = (e.u, e.v);
            if !st.alive_v[u as usize]
                || !st.alive_v[v as usize]
                || e.stamp != (st.stamp[u as usize], st.stamp[v as usize])
            {
                continue;
            }
            let q = add(&st.quadrics[u as usize], &st.quadrics[v as usize]);
            let (p, _) = best_position(&q, &st.pos[u as usize], &st.pos[v as usize]);
            if !st.can_collapse(u, v, &p) {
                continue;
            }
            alive -= st.collapse(u, v, p, q);
            // only edges at u changed cost; the others are re-validated on pop
            for w in st.neighbors(u) {
                if let Some(entry) = st.entry(u, w) {
                    heap.push(entry);
                }
            }
        }
    }
    st.finish()
}
