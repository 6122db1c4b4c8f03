//! Scaling of ICAR structure matrices to unit generalized variance.
//!
//! Each connected component with at least two regions is scaled separately
//! so that the geometric mean of its constrained marginal variances is one.
//! Isolated regions carry no structured effect and are listed separately.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{constrained_marginal_variances, default_jitter, ConstraintSet, SymSparseMatrix};

/// Geometric-mean marginal variance per constraint group.
///
/// `c` must hold one sum-to-zero style row per group; the geometric mean is
/// taken over the support of each row. The jitter is relative to the mean
/// diagonal of `q`.
pub fn generalized_variance(q: &SymSparseMatrix, c: &ConstraintSet) -> Result<Vec<f64>> {
    if c.is_empty() {
        return Err(Error::Config("generalized variance needs at least one constraint group".into()));
    }
    let var = constrained_marginal_variances(q, c, default_jitter(q))?;
    c.rows()
        .iter()
        .map(|row| {
            let mean_log = row.iter().map(|&(i, _)| var[i].ln()).sum::<f64>() / row.len() as f64;
            let gv = mean_log.exp();
            if gv.is_finite() && gv > 0.0 {
                Ok(gv)
            } else {
                Err(Error::Domain(format!("non-positive marginal variance in group (gv = {gv})")))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentScale {
    /// Region indices of the component.
    pub regions: Vec<usize>,
    /// Generalized variance of the unscaled Besag block.
    pub scale_factor: f64,
}

/// Scaled structure over the non-singleton regions of a graph.
#[derive(Debug, Clone)]
pub struct ScaledStructure {
    n_regions: usize,
    /// Region index of each block row.
    structured: Vec<usize>,
    block_of_region: Vec<Option<usize>>,
    q: SymSparseMatrix,
    q_star: SymSparseMatrix,
    components: Vec<ComponentScale>,
    constraints: ConstraintSet,
    singleton_regions: Vec<usize>,
}

impl ScaledStructure {
    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    /// Dimension of the structured block.
    pub fn block_dim(&self) -> usize {
        self.structured.len()
    }

    pub fn structured_regions(&self) -> &[usize] {
        &self.structured
    }

    pub fn block_of_region(&self, region: usize) -> Option<usize> {
        self.block_of_region[region]
    }

    /// Unscaled Besag matrix restricted to the structured block.
    pub fn q(&self) -> &SymSparseMatrix {
        &self.q
    }

    /// Scaled structure matrix on the structured block.
    pub fn q_star(&self) -> &SymSparseMatrix {
        &self.q_star
    }

    pub fn components(&self) -> &[ComponentScale] {
        &self.components
    }

    pub fn scale_factors(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.scale_factor).collect()
    }

    pub fn rank_deficiency(&self) -> usize {
        self.components.len()
    }

    /// Sum-to-zero rows over block indices, one per scaled component.
    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn singleton_regions(&self) -> &[usize] {
        &self.singleton_regions
    }

    /// Same layout with a different structure matrix on the block.
    pub fn with_q_star(&self, q_star: SymSparseMatrix) -> Result<Self> {
        if q_star.dim() != self.block_dim() {
            return Err(Error::DimensionMismatch { expected: self.block_dim(), got: q_star.dim() });
        }
        Ok(Self { q_star, ..self.clone() })
    }

    /// Scaled matrix entries in region indexing (lower triangle).
    pub fn q_star_region_entries(&self) -> Vec<(usize, usize, f64)> {
        self.q_star
            .iter()
            .map(|(r, c, v)| {
                let (a, b) = (self.structured[r], self.structured[c]);
                if a >= b {
                    (a, b, v)
                } else {
                    (b, a, v)
                }
            })
            .collect()
    }
}

/// Scales the Besag structure of `g` per connected component.
pub fn scale_structured(g: &Graph) -> Result<ScaledStructure> {
    let n = g.n_regions();
    let q_full = g.besag_precision();
    let mut structured = Vec::new();
    let mut singletons = Vec::new();
    let mut groups = Vec::new();
    for comp in g.components() {
        if comp.len() < 2 {
            singletons.extend_from_slice(&comp);
        } else {
            groups.push(comp);
        }
    }
    for comp in &groups {
        structured.extend_from_slice(comp);
    }
    let mut block_of_region = vec![None; n];
    for (b, &r) in structured.iter().enumerate() {
        block_of_region[r] = Some(b);
    }

    let mut components = Vec::with_capacity(groups.len());
    let mut block_groups = Vec::with_capacity(groups.len());
    let mut star_trip = Vec::new();
    for comp in &groups {
        let sub = q_full.submatrix(comp);
        let c = ConstraintSet::sum_to_zero(comp.len(), &[(0..comp.len()).collect()])?;
        let gv = generalized_variance(&sub, &c)?[0];
        for (r, col, v) in sub.iter() {
            let (br, bc) = (
                block_of_region[comp[r]].expect("structured"),
                block_of_region[comp[col]].expect("structured"),
            );
            star_trip.push((br, bc, v * gv));
        }
        block_groups.push(comp.iter().map(|&r| block_of_region[r].expect("structured")).collect());
        components.push(ComponentScale { regions: comp.clone(), scale_factor: gv });
    }
    let m = structured.len();
    let q = q_full.submatrix(&structured);
    let q_star = SymSparseMatrix::from_triplets(m, &star_trip)?;
    let constraints = ConstraintSet::sum_to_zero(m, &block_groups)?;
    Ok(ScaledStructure {
        n_regions: n,
        structured,
        block_of_region,
        q,
        q_star,
        components,
        constraints,
        singleton_regions: singletons,
    })
}
