use super::kdtree::KdTree;
use crate::geometry::{PointCloud, Vec3};

/// Nearest-neighbor assignment in both directions, frozen for one
/// optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondences {
    /// For each source point, its nearest target.
    pub src_to_tgt: Vec<usize>,
    /// For each target point, its nearest source.
    pub tgt_to_src: Vec<usize>,
}

impl Correspondences {
    pub fn find(src: &[Vec3], tgt: &[Vec3], tgt_tree: &KdTree) -> Self {
        assert_eq!(tgt_tree.len(), tgt.len());
        let src_tree = KdTree::new(src);
        Correspondences {
            src_to_tgt: src.iter().map(|p| tgt_tree.nearest(p).map_or(0, |n| n.0)).collect(),
            tgt_to_src: tgt.iter().map(|p| src_tree.nearest(p).map_or(0, |n| n.0)).collect(),
        }
    }
}

/// Symmetric truncated Chamfer loss under fixed correspondences:
/// `0.5 * (mean_s min(|s - t(s)|², τ²) + mean_t min(|t - s(t)|², τ²))`.
///
/// Returns the loss and its gradient with respect to the source points.
/// Truncated pairs contribute a constant and no gradient.
pub fn chamfer_with_grad(src: &[Vec3], tgt: &[Vec3], corr: &Correspondences, trunc: f64) -> (f64, Vec<Vec3>) {
    let t2 = trunc * trunc;
    let ws = 1.0 / src.len() as f64;
    let wt = 1.0 / tgt.len() as f64;
    let mut grad = vec![Vec3::zeros(); src.len()];
    let (mut fwd, mut bwd) = (0.0, 0.0);
    for (i, s) in src.iter().enumerate() {
        let d = s - tgt[corr.src_to_tgt[i]];
        let d2 = d.norm_squared();
        if d2 < t2 {
            fwd += d2;
            grad[i] += d * ws;
        } else {
            fwd += t2;
        }
    }
    for (j, t) in tgt.iter().enumerate() {
        let i = corr.tgt_to_src[j];
        let d = src[i] - t;
        let d2 = d.norm_squared();
        if d2 < t2 {
            bwd += d2;
            grad[i] += d * wt;
        } else {
            bwd += t2;
        }
    }
    (0.5 * (fwd * ws + bwd * wt), grad)
}

/// Symmetric truncated Chamfer loss between raw point sets.
pub fn chamfer_points(src: &[Vec3], tgt: &[Vec3], trunc: f64) -> f64 {
    let tree = KdTree::new(tgt);
    let corr = Correspondences::find(src, tgt, &tree);
    chamfer_with_grad(src, tgt, &corr, trunc).0
}

/// Symmetric truncated Chamfer loss in squared meters; both clouds must be
/// nonempty (an empty side yields NaN).
pub fn truncated_chamfer(src: &PointCloud, tgt: &PointCloud, trunc: f64) -> f64 {
    if src.is_empty() || tgt.is_empty() {
        return f64::NAN;
    }
    chamfer_points(&src.points, &tgt.points, trunc)
}
