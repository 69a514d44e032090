use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CaptureBundle, Chain, SiteCapture, SiteId};
use crate::tensor::{pinv_project, Matrix};

use super::{elementwise_max, ImportanceScores, Method};

/// Head average of `ReLU(dA ⊙ A)`, without the identity term.
pub fn gradient_weighted_attention(a: &[Matrix], da: &[Matrix]) -> Result<Matrix> {
    if a.is_empty() || a.len() != da.len() {
        return Err(Error::Shape(format!(
            "{} attention heads but {} gradient heads",
            a.len(),
            da.len()
        )));
    }
    let mut acc = Matrix::zeros(a[0].rows(), a[0].cols());
    for (ah, gh) in a.iter().zip(da) {
        acc.add_assign(&gh.hadamard(ah)?.relu())?;
    }
    Ok(acc.scale(1.0 / a.len() as f64))
}

/// `S(A) = E_H(ReLU(dA ⊙ A)) + I`; the identity is only added to square maps.
pub fn attention_importance_map(a: &[Matrix], da: &[Matrix]) -> Result<Matrix> {
    let mut s = gradient_weighted_attention(a, da)?;
    if s.rows() == s.cols() {
        for i in 0..s.rows() {
            s.set(i, i, s.get(i, i) + 1.0);
        }
    }
    Ok(s)
}

fn intrinsic(x: &Matrix, dx: &Matrix) -> Result<Vec<f64>> {
    Ok(dx.hadamard(x)?.relu().row_max().into_iter().map(|v| v.max(0.0)).collect())
}

/// `ω^Q[j] = max_d ReLU(dQ ⊙ Q)[j, d]`.
pub fn query_intrinsic(q: &Matrix, dq: &Matrix) -> Result<Vec<f64>> {
    intrinsic(q, dq)
}

/// `ω^K[j] = max_d ReLU(dK ⊙ K)[j, d]`.
pub fn key_intrinsic(k: &Matrix, dk: &Matrix) -> Result<Vec<f64>> {
    intrinsic(k, dk)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionMode {
    /// Row maxima of `ReLU(P)`; what QCAI uses.
    Relu,
    /// Row maxima of `P` itself. Only meaningful as a test of the projection.
    Exact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryProjection {
    pub omega: Vec<f64>,
    /// Gram condition number when the projection was refused.
    pub singular: Option<f64>,
}

/// `ω^A`: row maxima of `S_A · K (KᵀK)⁻¹`, or zeros with a flag when `KᵀK` is ill-conditioned.
pub fn query_from_attention(s_a: &Matrix, k: &Matrix) -> Result<QueryProjection> {
    query_from_attention_with(s_a, k, ProjectionMode::Relu)
}

pub fn query_from_attention_with(s_a: &Matrix, k: &Matrix, mode: ProjectionMode) -> Result<QueryProjection> {
    match pinv_project(s_a, k) {
        Ok(p) => {
            let p = match mode {
                ProjectionMode::Relu => p.relu(),
                ProjectionMode::Exact => p,
            };
            Ok(QueryProjection {
                omega: p.row_max(),
                singular: None,
            })
        }
        Err(Error::Singular { condition, .. }) => Ok(QueryProjection {
            omega: vec![0.0; s_a.rows()],
            singular: Some(condition),
        }),
        Err(e) => Err(e),
    }
}

pub fn query_combined(omega_a: &[f64], omega_q: &[f64]) -> Result<Vec<f64>> {
    elementwise_max(omega_a, omega_q, "query_combined")
}

/// `ω′[j] = max_i E_H(ReLU(dA ⊙ A))[i, j]`.
pub fn key_from_attention(a: &[Matrix], da: &[Matrix]) -> Result<Vec<f64>> {
    let g = gradient_weighted_attention(a, da)?;
    Ok(g.col_max().into_iter().map(|v| v.max(0.0)).collect())
}

pub fn key_combined(omega_prime: &[f64], omega_k: &[f64]) -> Result<Vec<f64>> {
    elementwise_max(omega_prime, omega_k, "key_combined")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionSiteScore {
    pub site: SiteId,
    pub s_a: Matrix,
    /// Combined query importance, one entry per query token.
    pub omega_q: Vec<f64>,
    /// Combined key importance, one entry per key token.
    pub omega_k: Vec<f64>,
    pub diagnostics: Vec<String>,
}

impl AttentionSiteScore {
    /// The per-chain vectors this site feeds into aggregation. A self-attention
    /// site merges its query and key sides since both index the same chain.
    pub fn contributions(&self) -> Result<Vec<SiteContribution>> {
        if self.site.query == self.site.key {
            return Ok(vec![SiteContribution {
                chain: self.site.query,
                scores: elementwise_max(&self.omega_q, &self.omega_k, "self-attention merge")?,
            }]);
        }
        Ok(vec![
            SiteContribution {
                chain: self.site.query,
                scores: self.omega_q.clone(),
            },
            SiteContribution {
                chain: self.site.key,
                scores: self.omega_k.clone(),
            },
        ])
    }
}

fn max_over_heads(per_head: impl Iterator<Item = Result<Vec<f64>>>) -> Result<Vec<f64>> {
    let mut out: Option<Vec<f64>> = None;
    for v in per_head {
        let v = v?;
        out = Some(match out {
            None => v,
            Some(acc) => elementwise_max(&acc, &v, "head maximum")?,
        });
    }
    out.ok_or_else(|| Error::Shape("site without heads".into()))
}

/// Query and key decompositions for one attention site.
pub fn site_scores(site: &SiteCapture) -> Result<AttentionSiteScore> {
    let a: Vec<Matrix> = site.heads.iter().map(|h| h.a.clone()).collect();
    let da: Vec<Matrix> = site.heads.iter().map(|h| h.grad_a.clone()).collect();
    let g = gradient_weighted_attention(&a, &da)?;
    let s_a = attention_importance_map(&a, &da)?;
    let mut diagnostics = Vec::new();
    if !site.is_square() {
        diagnostics.push(format!(
            "{}: identity term skipped for non-square {}x{} map",
            site.id,
            g.rows(),
            g.cols()
        ));
    }

    let omega_qi = max_over_heads(site.heads.iter().map(|h| query_intrinsic(&h.q, &h.grad_q)))?;
    let mut omega_a = vec![0.0; g.rows()];
    for (i, h) in site.heads.iter().enumerate() {
        let proj = query_from_attention(&g, &h.k)?;
        if let Some(condition) = proj.singular {
            diagnostics.push(format!(
                "{} head {i}: Gram condition {condition:.3e} too large; query projection set to zero",
                site.id
            ));
        }
        omega_a = elementwise_max(&omega_a, &proj.omega, "head maximum")?;
    }
    let omega_q = query_combined(&omega_a, &omega_qi)?;

    let omega_ki = max_over_heads(site.heads.iter().map(|h| key_intrinsic(&h.k, &h.grad_k)))?;
    let omega_prime = key_from_attention(&a, &da)?;
    let omega_k = key_combined(&omega_prime, &omega_ki)?;

    Ok(AttentionSiteScore {
        site: site.id,
        s_a,
        omega_q,
        omega_k,
        diagnostics,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Max,
    Product,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SiteContribution {
    pub chain: Chain,
    pub scores: Vec<f64>,
}

/// Folds site contributions, ordered from the output backwards, into one vector per chain.
pub fn aggregate_layers(contributions: &[SiteContribution], mode: Aggregation) -> Result<BTreeMap<Chain, Vec<f64>>> {
    if contributions.is_empty() {
        return Err(Error::Usage("aggregate_layers needs at least one site".into()));
    }
    let mut out: BTreeMap<Chain, Vec<f64>> = BTreeMap::new();
    for c in contributions {
        match out.get_mut(&c.chain) {
            None => {
                out.insert(c.chain, c.scores.clone());
            }
            Some(acc) => {
                if acc.len() != c.scores.len() {
                    return Err(Error::Shape(format!(
                        "{}: site vector of length {} against {}",
                        c.chain,
                        c.scores.len(),
                        acc.len()
                    )));
                }
                for (a, s) in acc.iter_mut().zip(&c.scores) {
                    *a = match mode {
                        Aggregation::Max => a.max(*s),
                        Aggregation::Product => *a * s,
                    };
                }
            }
        }
    }
    Ok(out)
}

pub fn qcai_explain(bundle: &CaptureBundle) -> Result<ImportanceScores> {
    qcai_explain_with(bundle, Aggregation::Max)
}

pub fn qcai_explain_with(bundle: &CaptureBundle, mode: Aggregation) -> Result<ImportanceScores> {
    let mut diagnostics = Vec::new();
    let mut contributions = Vec::new();
    for site in bundle.sites.iter().rev() {
        let score = site_scores(site)?;
        contributions.extend(score.contributions()?);
        diagnostics.extend(score.diagnostics);
    }
    let tokens = aggregate_layers(&contributions, mode)?;
    ImportanceScores::from_token_scores(Method::Qcai, &bundle.input, tokens, diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn zero_gradient_square_map_is_identity() {
        let a = vec![Matrix::filled(3, 3, 1.0 / 3.0)];
        let da = vec![Matrix::zeros(3, 3)];
        assert_eq!(attention_importance_map(&a, &da).unwrap(), Matrix::identity(3));
    }

    #[test]
    fn two_by_two_hand_example() {
        let a = vec![Matrix::from_rows(&[[0.5, 0.5], [0.2, 0.8]])];
        let da = vec![Matrix::from_rows(&[[1.0, -1.0], [2.0, 0.0]])];
        let g = gradient_weighted_attention(&a, &da).unwrap();
        assert!(g.sub(&Matrix::from_rows(&[[0.5, 0.0], [0.4, 0.0]])).unwrap().max_abs() < 1e-15);
        let s = attention_importance_map(&a, &da).unwrap();
        assert!(s.sub(&Matrix::from_rows(&[[1.5, 0.0], [0.4, 1.0]])).unwrap().max_abs() < 1e-15);
        assert!(close(&key_from_attention(&a, &da).unwrap(), &[0.5, 0.0]));
    }

    #[test]
    fn relu_before_head_average() {
        let m = Matrix::from_rows(&[[1.0, -2.0], [3.0, -4.0]]);
        let a = vec![Matrix::filled(2, 2, 1.0), Matrix::filled(2, 2, 1.0)];
        let da = vec![m.clone(), m.scale(-1.0)];
        let g = gradient_weighted_attention(&a, &da).unwrap();
        let want = m.relu().add(&m.scale(-1.0).relu()).unwrap().scale(0.5);
        assert_eq!(g, want);
        assert!(g.sum() > 0.0);
    }

    #[test]
    fn head_count_mismatch_is_shape_error() {
        let a = vec![Matrix::zeros(2, 2)];
        assert!(matches!(gradient_weighted_attention(&a, &[]), Err(Error::Shape(_))));
    }

    #[test]
    fn cross_map_has_no_identity() {
        let a = vec![Matrix::filled(2, 3, 1.0 / 3.0)];
        let s = attention_importance_map(&a, &[Matrix::zeros(2, 3)]).unwrap();
        assert_eq!(s, Matrix::zeros(2, 3));
    }

    #[test]
    fn intrinsic_reductions() {
        let q = Matrix::from_rows(&[[1.0, 3.0], [2.0, 0.0]]);
        assert!(close(&query_intrinsic(&q, &Matrix::filled(2, 2, 1.0)).unwrap(), &[3.0, 2.0]));
        assert!(close(&query_intrinsic(&q, &Matrix::zeros(2, 2)).unwrap(), &[0.0, 0.0]));
        assert!(close(&query_intrinsic(&q, &Matrix::filled(2, 2, -1.0)).unwrap(), &[0.0, 0.0]));
        let k = Matrix::from_rows(&[[2.0, 1.0], [0.0, 5.0], [3.0, 3.0]]);
        assert!(close(&key_intrinsic(&k, &Matrix::filled(3, 2, 1.0)).unwrap(), &[2.0, 5.0, 3.0]));
        let one = Matrix::from_rows(&[[4.0, -1.0]]);
        assert_eq!(key_intrinsic(&one, &Matrix::filled(1, 2, 1.0)).unwrap(), vec![4.0]);
    }

    #[test]
    fn projection_identity_key_is_row_max_of_relu() {
        let s = Matrix::from_rows(&[[0.5, -1.0, 2.0], [-3.0, -1.0, -0.5]]);
        let p = query_from_attention(&s, &Matrix::identity(3)).unwrap();
        assert_eq!(p.singular, None);
        assert!(close(&p.omega, &[2.0, 0.0]));
    }

    #[test]
    fn projection_recovers_diagonal_construction() {
        let gq = Matrix::from_rows(&[[0.3, -1.2, 0.7], [-0.4, -0.1, -2.0]]);
        let k = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0]]);
        let s = gq.matmul_nt(&k).unwrap();
        let p = query_from_attention(&s, &k).unwrap();
        assert!(close(&p.omega, &gq.relu().row_max()));
        let exact = query_from_attention_with(&s, &k, ProjectionMode::Exact).unwrap();
        assert!(close(&exact.omega, &[0.7, -0.1]));
    }

    #[test]
    fn rank_deficient_key_flags_and_zeros() {
        let k = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]);
        let p = query_from_attention(&Matrix::filled(2, 3, 1.0), &k).unwrap();
        assert_eq!(p.omega, vec![0.0, 0.0]);
        assert!(p.singular.is_some());
    }

    #[test]
    fn combinations() {
        assert_eq!(query_combined(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(query_combined(&[0.0, 0.0], &[0.4, 2.0]).unwrap(), vec![0.4, 2.0]);
        assert_eq!(query_combined(&[0.4, 2.0], &[0.4, 2.0]).unwrap(), vec![0.4, 2.0]);
        assert!(matches!(query_combined(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
        assert_eq!(key_combined(&[0.0, 3.0], &[1.0, 1.0]).unwrap(), vec![1.0, 3.0]);
        assert_eq!(key_combined(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(key_combined(&[5.0, 1.0], &[5.0, 1.0]).unwrap(), vec![5.0, 1.0]);
    }

    fn contrib(chain: Chain, scores: &[f64]) -> SiteContribution {
        SiteContribution {
            chain,
            scores: scores.to_vec(),
        }
    }

    #[test]
    fn aggregation_examples() {
        assert!(matches!(aggregate_layers(&[], Aggregation::Max), Err(Error::Usage(_))));
        let one = aggregate_layers(&[contrib(Chain::Cdr3b, &[1.0, 2.0])], Aggregation::Max).unwrap();
        assert_eq!(one[&Chain::Cdr3b], vec![1.0, 2.0]);
        let two = aggregate_layers(
            &[contrib(Chain::Epitope, &[1.0, 0.0, 2.0]), contrib(Chain::Epitope, &[0.0, 3.0, 1.0])],
            Aggregation::Max,
        )
        .unwrap();
        assert_eq!(two[&Chain::Epitope], vec![1.0, 3.0, 2.0]);
        let prod = aggregate_layers(
            &[
                contrib(Chain::Cdr3a, &[2.0]),
                contrib(Chain::Cdr3a, &[3.0]),
                contrib(Chain::Cdr3a, &[5.0]),
            ],
            Aggregation::Product,
        )
        .unwrap();
        assert_eq!(prod[&Chain::Cdr3a], vec![30.0]);
    }
}
