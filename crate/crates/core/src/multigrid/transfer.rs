use crate::basis::{interpolation_matrix, lgl_basis};
use crate::error::{Error, Result};
use crate::mesh::DofMap;
use crate::sparse::CsrMatrix;

/// Prolongation from a coarse to a fine polynomial space on the same mesh,
/// and the restriction `R = Pᵀ`.
#[derive(Debug, Clone)]
pub struct TransferPair {
    pub prolongation: CsrMatrix,
    pub restriction: CsrMatrix,
}

pub fn build_transfer(coarse: &DofMap, fine: &DofMap) -> Result<TransferPair> {
    let (cx, cs) = coarse.orders();
    let (fx, fs) = fine.orders();
    if cx > fx || cs > fs {
        return Err(Error::InvalidPlan(format!(
            "cannot prolongate orders ({cx}, {cs}) to ({fx}, {fs})"
        )));
    }
    if coarse.element_grid() != fine.element_grid() {
        return Err(Error::InvalidPlan("transfer levels live on different meshes".into()));
    }
    let ix = interpolation_matrix(&lgl_basis(cx)?, &lgl_basis(fx)?);
    let is = interpolation_matrix(&lgl_basis(cs)?, &lgl_basis(fs)?);
    let mut done = vec![false; fine.n_dofs()];
    let mut triplets = Vec::new();
    for e in 0..fine.n_elements() {
        let fnodes = fine.element_nodes(e);
        let cnodes = coarse.element_nodes(e);
        for a in 0..=fx {
            for b in 0..=fs {
                let g = fnodes[a * (fs + 1) + b];
                // Shared nodes get identical rows from every element; keep one.
                if std::mem::replace(&mut done[g], true) {
                    continue;
                }
                for c in 0..=cx {
                    for d in 0..=cs {
                        let v = ix[(a, c)] * is[(b, d)];
                        if v != 0.0 {
                            triplets.push((g, cnodes[c * (cs + 1) + d], v));
                        }
                    }
                }
            }
        }
    }
    let prolongation = CsrMatrix::from_triplets(fine.n_dofs(), coarse.n_dofs(), &triplets);
    let restriction = prolongation.transpose();
    Ok(TransferPair {
        prolongation,
        restriction,
    })
}
