use crate::exec::{map_range, Execution};
use crate::scene::SurfelCloud2D;
use crate::spatial::KdTree;

/// Opacity-weighted Gaussian-kernel average of the `k` nearest surfel
/// colors at each vertex. The bandwidth is the median nearest-neighbour
/// spacing of those surfels. Falls back to the nearest surfel when every
/// weight underflows.
pub fn color_vertices(
    vertices: &[[f64; 3]],
    surfels: &SurfelCloud2D,
    k: usize,
    exec: Execution,
) -> Vec<[f64; 3]> {
    if surfels.is_empty() {
        return vec![[0.5; 3]; vertices.len()];
    }
    let tree = KdTree::new(&surfels.positions);
    let spacing: Vec<f64> = map_range(exec, surfels.len(), |i| {
        tree.knn(&surfels.positions[i], 2)
            .get(1)
            .map(|x| x.1.sqrt())
            .unwrap_or(0.0)
    });
    let clamp = |c: [f64; 3]| c.map(|v| v.clamp(0.0, 1.0));
    map_range(exec, vertices.len(), |v| {
        let nn = tree.knn(&vertices[v], k.max(1));
        let mut local: Vec<f64> = nn.iter().map(|&(j, _)| spacing[j]).collect();
        local.sort_by(f64::total_cmp);
        let h = local[local.len() / 2];
        let mut acc = [0.0; 3];
        let mut total = 0.0;
        if h > 0.0 {
            for &(j, d2) in &nn {
                let w = surfels.opacity(j) * (-d2 / (2.0 * h * h)).exp();
                total += w;
                for c in 0..3 {
                    acc[c] += w * surfels.colors[j][c];
                }
            }
        }
        if total > 0.0 && total.is_finite() {
            clamp(acc.map(|a| a / total))
        } else {
            clamp(surfels.colors[nn[0].0])
        }
    })
}
