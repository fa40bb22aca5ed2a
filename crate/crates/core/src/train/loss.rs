use crate::error::{Error, Result};
use crate::net::euclidean;

fn select(pos: &[f64], neg: &[f64], hard: bool) -> (usize, usize) {
    // first index wins ties
    let pick = |v: &[f64], want_max: bool| {
        let mut best = 0;
        for (i, x) in v.iter().enumerate() {
            if (want_max && *x > v[best]) || (!want_max && *x < v[best]) {
                best = i;
            }
        }
        best
    };
    (pick(pos, hard), pick(neg, !hard))
}

fn distances(q: &[f64], set: &[&[f64]]) -> Vec<f64> {
    set.iter().map(|d| euclidean(q, d)).collect()
}

fn check(pos: &[&[f64]], neg: &[&[f64]]) -> Result<()> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Input("lazy triplet loss needs positives and negatives".into()));
    }
    Ok(())
}

/// `[β + min_o d(q, pos_o) − max_a d(q, neg_a)]_+`; with `hard` the
/// farthest positive and the nearest negative are used instead.
pub fn lazy_triplet_loss(q: &[f64], pos: &[&[f64]], neg: &[&[f64]], beta: f64, hard: bool) -> Result<f64> {
    check(pos, neg)?;
    let (dp, dn) = (distances(q, pos), distances(q, neg));
    let (i, j) = select(&dp, &dn, hard);
    Ok((beta + dp[i] - dn[j]).max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad {
    pub loss: f64,
    pub query: Vec<f64>,
    /// `(index into pos, gradient)` of the selected positive, if active.
    pub positive: Option<(usize, Vec<f64>)>,
    pub negative: Option<(usize, Vec<f64>)>,
}

fn unit_diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    let d = euclidean(a, b);
    if d == 0.0 {
        return vec![0.0; a.len()];
    }
    a.iter().zip(b).map(|(x, y)| (x - y) / d).collect()
}

/// Loss and its gradient with respect to every descriptor involved.
pub fn lazy_triplet_loss_grad(q: &[f64], pos: &[&[f64]], neg: &[&[f64]], beta: f64, hard: bool) -> Result<TripletGrad> {
    check(pos, neg)?;
    let (dp, dn) = (distances(q, pos), distances(q, neg));
    let (i, j) = select(&dp, &dn, hard);
    let loss = beta + dp[i] - dn[j];
    if loss <= 0.0 {
        return Ok(TripletGrad {
            loss: 0.0,
            query: vec![0.0; q.len()],
            positive: None,
            negative: None,
        });
    }
    let up = unit_diff(q, pos[i]);
    let un = unit_diff(q, neg[j]);
    Ok(TripletGrad {
        loss,
        query: up.iter().zip(&un).map(|(a, b)| a - b).collect(),
        positive: Some((i, up.iter().map(|v| -v).collect())),
        negative: Some((j, un)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Descriptors on a line: distance = |x|.
    fn at(x: f64) -> Vec<f64> {
        vec![x, 0.0]
    }

    #[test]
    fn hand_computed_values() {
        let q = at(0.0);
        let (p1, p2) = (at(0.2), at(0.4));
        let (n1, n2) = (at(0.7), at(1.0));
        assert_eq!(lazy_triplet_loss(&q, &[&p1, &p2], &[&n1, &n2], 0.5, false).unwrap(), 0.0);
        let (p1, p2) = (at(0.9), at(1.1));
        let (n1, n2) = (at(0.6), at(0.3));
        let l = lazy_triplet_loss(&q, &[&p1, &p2], &[&n1, &n2], 0.5, false).unwrap();
        assert!((l - 0.8).abs() < 1e-15);
    }

    #[test]
    fn hard_mining_flips_selection() {
        let q = at(0.0);
        let (p1, p2) = (at(0.2), at(0.4));
        let (n1, n2) = (at(0.7), at(1.0));
        let l = lazy_triplet_loss(&q, &[&p1, &p2], &[&n1, &n2], 0.5, true).unwrap();
        assert!((l - 0.2).abs() < 1e-15);
    }

    #[test]
    fn equal_descriptors_zero_margin() {
        let q = at(0.3);
        assert_eq!(lazy_triplet_loss(&q, &[&q], &[&q], 0.0, false).unwrap(), 0.0);
    }

    #[test]
    fn empty_sets_error() {
        assert!(lazy_triplet_loss(&at(0.0), &[], &[&at(1.0)], 0.5, false).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let q = vec![0.1, 0.2, -0.3];
        let p = [vec![0.5, 0.1, 0.0], vec![0.0, 0.9, 0.2]];
        let n = [vec![0.2, 0.1, -0.2], vec![-0.4, 0.0, 0.1]];
        for hard in [false, true] {
            let pr: Vec<&[f64]> = p.iter().map(|v| v.as_slice()).collect();
            let nr: Vec<&[f64]> = n.iter().map(|v| v.as_slice()).collect();
            let g = lazy_triplet_loss_grad(&q, &pr, &nr, 1.0, hard).unwrap();
            for k in 0..3 {
                let mut a = q.clone();
                a[k] += 1e-6;
                let mut b = q.clone();
                b[k] -= 1e-6;
                let fd = (lazy_triplet_loss(&a, &pr, &nr, 1.0, hard).unwrap()
                    - lazy_triplet_loss(&b, &pr, &nr, 1.0, hard).unwrap())
                    / 2e-6;
                assert!((fd - g.query[k]).abs() < 1e-6);
            }
        }
    }
}
