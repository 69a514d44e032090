use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{AttentionKind, CaptureBundle, Chain, SiteCapture};
use crate::tensor::Matrix;

use super::{ImportanceScores, Method};

/// `ReLU(Σ_d w_d F[:, d])` with `w_d` the token-mean of `∂/∂F[:, d]`.
pub fn gradcam_map(features: &Matrix, grad: &Matrix) -> Result<Vec<f64>> {
    if features.shape() != grad.shape() {
        return Err(features.dim_err("gradcam_map", grad));
    }
    let n = features.rows().max(1) as f64;
    let w: Vec<f64> = grad.col_sums().into_iter().map(|s| s / n).collect();
    Ok((0..features.rows())
        .map(|t| {
            let v: f64 = features.row(t).iter().zip(&w).map(|(f, w)| f * w).sum();
            v.max(0.0)
        })
        .collect())
}

pub fn gradcam_explain(bundle: &CaptureBundle) -> Result<ImportanceScores> {
    let mut tokens = BTreeMap::new();
    for chain in Chain::ALL {
        let f = bundle
            .features
            .get(&chain)
            .ok_or_else(|| Error::Usage(format!("bundle has no final features for {chain}")))?;
        tokens.insert(chain, gradcam_map(&f.hidden, &f.grad)?);
    }
    ImportanceScores::from_token_scores(Method::Gradcam, &bundle.input, tokens, Vec::new())
}

fn head_mean(site: &SiteCapture) -> Result<Matrix> {
    let first = site
        .heads
        .first()
        .ok_or_else(|| Error::Shape(format!("{} has no heads", site.id)))?;
    let mut acc = Matrix::zeros(first.a.rows(), first.a.cols());
    for h in &site.heads {
        acc.add_assign(&h.a)?;
    }
    Ok(acc.scale(1.0 / site.heads.len() as f64))
}

fn self_sites(bundle: &CaptureBundle, chain: Chain) -> impl Iterator<Item = &SiteCapture> {
    bundle
        .sites
        .iter()
        .filter(move |s| s.id.kind == AttentionKind::SelfAttention && s.id.query == chain && s.is_square())
}

/// Rollout over head-averaged maps in forward order: `R_l = ½(W_l + I) R_{l−1}`, `R_0 = I`.
///
/// Returns every intermediate `R_l`, so `out.last()` is the final product.
pub fn rollout(maps: &[Matrix]) -> Result<Vec<Matrix>> {
    let mut out: Vec<Matrix> = Vec::with_capacity(maps.len());
    for w in maps {
        if w.rows() != w.cols() {
            return Err(Error::Shape(format!("rollout needs square maps, got {}x{}", w.rows(), w.cols())));
        }
        let half = w.add(&Matrix::identity(w.rows()))?.scale(0.5);
        let r = match out.last() {
            None => half,
            Some(prev) => half.matmul(prev)?,
        };
        out.push(r);
    }
    Ok(out)
}

pub fn rollout_explain(bundle: &CaptureBundle) -> Result<ImportanceScores> {
    let mut tokens = BTreeMap::new();
    for chain in Chain::ALL {
        let maps = self_sites(bundle, chain).map(head_mean).collect::<Result<Vec<_>>>()?;
        let n = bundle.input.tokens(chain).len();
        let r = rollout(&maps)?.pop().unwrap_or_else(|| Matrix::identity(n));
        tokens.insert(chain, r.col_sums());
    }
    ImportanceScores::from_token_scores(Method::Rollout, &bundle.input, tokens, Vec::new())
}

/// Column mass of the mean of all given attention maps (every head of every layer).
pub fn raw_attention_scores(maps: &[Matrix]) -> Result<Vec<f64>> {
    let first = maps.first().ok_or_else(|| Error::Usage("no attention maps".into()))?;
    let mut acc = Matrix::zeros(first.rows(), first.cols());
    for m in maps {
        acc.add_assign(m)?;
    }
    Ok(acc.scale(1.0 / maps.len() as f64).col_sums())
}

pub fn raw_attention_explain(bundle: &CaptureBundle) -> Result<ImportanceScores> {
    let mut tokens = BTreeMap::new();
    for chain in Chain::ALL {
        let maps: Vec<Matrix> = self_sites(bundle, chain)
            .flat_map(|s| s.heads.iter().map(|h| h.a.clone()))
            .collect();
        tokens.insert(chain, raw_attention_scores(&maps)?);
    }
    ImportanceScores::from_token_scores(Method::RawAttn, &bundle.input, tokens, Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradcam_hand_example() {
        let f = Matrix::column(&[1.0, 2.0, 3.0]);
        let g = Matrix::column(&[1.0, 2.0, 3.0]);
        assert_eq!(gradcam_map(&f, &g).unwrap(), vec![2.0, 4.0, 6.0]);
        assert_eq!(gradcam_map(&f, &Matrix::zeros(3, 1)).unwrap(), vec![0.0; 3]);
        assert_eq!(gradcam_map(&f, &g.scale(-1.0)).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn rollout_examples() {
        let r = rollout(&[Matrix::identity(3)]).unwrap();
        assert_eq!(r[0], Matrix::identity(3));
        let u = Matrix::filled(2, 2, 0.5);
        let r = rollout(&[u.clone(), u]).unwrap();
        // ½(U + I) = [[.75,.25],[.25,.75]]; squared = [[.625,.375],[.375,.625]]
        assert!(r[1].sub(&Matrix::from_rows(&[[0.625, 0.375], [0.375, 0.625]])).unwrap().max_abs() < 1e-15);
        for m in &r {
            assert!(m.row_sums().iter().all(|s| (s - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn raw_attention_examples() {
        let uniform = Matrix::filled(3, 3, 1.0 / 3.0);
        let s = raw_attention_scores(&[uniform.clone()]).unwrap();
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let mut hot = Matrix::zeros(3, 3);
        for r in 0..3 {
            hot.set(r, 1, 1.0);
        }
        let s = raw_attention_scores(&[hot.clone()]).unwrap();
        assert_eq!(s.iter().cloned().fold(f64::MIN, f64::max), s[1]);
        let s = raw_attention_scores(&[uniform, hot]).unwrap();
        assert!((s[0] - 0.5).abs() < 1e-12 && (s[1] - 2.0).abs() < 1e-12 && (s[2] - 0.5).abs() < 1e-12);
    }
}
