//! Descriptor database, exact top-K queries and Recall@K scoring.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::net::euclidean;
use crate::train::planar_distance;

/// Greedy sweep: keep the first pose, then every pose at least `interval`
/// (planar) from the last kept one.
pub fn downsample_track(poses: &[RigidTransform], interval: f64) -> Result<Vec<usize>> {
    if !(interval > 0.0) {
        return Err(Error::Config(format!("downsampling interval must be positive, got {interval}")));
    }
    let mut keep: Vec<usize> = Vec::new();
    for (i, p) in poses.iter().enumerate() {
        match keep.last() {
            Some(&k) if planar_distance(&poses[k], p) < interval => {}
            _ => keep.push(i),
        }
    }
    Ok(keep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbEntry {
    pub vector: Vec<f64>,
    pub pose: RigidTransform,
    pub place_id: i64,
    /// Identity of the source scene; a query never retrieves its own scene.
    pub key: u64,
}

pub type Query = DbEntry;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DescriptorDb {
    entries: Vec<DbEntry>,
}

impl DescriptorDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: DbEntry) -> Result<()> {
        let norm = entry.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Data {
                index: self.entries.len(),
                message: format!("descriptor norm {norm} is not 1"),
            });
        }
        if let Some(first) = self.entries.first() {
            if first.vector.len() != entry.vector.len() {
                return Err(Error::Dimension("descriptor lengths differ".into()));
            }
        }
        let t = entry.pose.translation;
        if !(t.x.is_finite() && t.y.is_finite() && t.z.is_finite()) {
            return Err(Error::Data {
                index: self.entries.len(),
                message: "pose is not finite".into(),
            });
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[DbEntry] {
        &self.entries
    }
}

/// The `k` entries nearest to `q` as `(index, distance)`, ascending by
/// distance then insertion order, skipping entries whose key is `exclude`.
pub fn query_topk(db: &DescriptorDb, q: &[f64], k: usize, exclude: Option<u64>) -> Result<Vec<(usize, f64)>> {
    if db.is_empty() {
        return Err(Error::Input("descriptor database is empty".into()));
    }
    let mut all: Vec<(usize, f64)> = db
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| Some(e.key) != exclude)
        .map(|(i, e)| (i, euclidean(q, &e.vector)))
        .collect();
    if k > all.len() {
        return Err(Error::Input(format!("K = {k} exceeds the {} searchable entries", all.len())));
    }
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    Ok(all)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    pub ks: Vec<usize>,
    /// AR@K in percent, aligned with `ks`.
    pub recall: Vec<f64>,
    /// Per query, per K: hit or miss.
    pub hits: Vec<Vec<bool>>,
}

impl RecallReport {
    pub fn ar(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.recall[i])
    }

    pub fn queries(&self) -> usize {
        self.hits.len()
    }

    pub fn hits_csv(&self) -> String {
        let mut s = String::from("query");
        for k in &self.ks {
            let _ = write!(s, ",hit@{k}");
        }
        s.push('\n');
        for (q, row) in self.hits.iter().enumerate() {
            let _ = write!(s, "{q}");
            for h in row {
                let _ = write!(s, ",{}", *h as u8);
            }
            s.push('\n');
        }
        s
    }
}

/// AR@K for every K in `ks`: a query hits at K iff one of its top-K
/// retrievals lies within `success_radius` (planar) of its own pose.
pub fn recall_at_k(db: &DescriptorDb, queries: &[Query], ks: &[usize], success_radius: f64) -> Result<RecallReport> {
    if db.is_empty() || queries.is_empty() {
        return Err(Error::Input("recall needs a non-empty database and query set".into()));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("K list must be non-empty and positive".into()));
    }
    let k_max = *ks.iter().max().unwrap();
    let mut hits = Vec::with_capacity(queries.len());
    for q in queries {
        let searchable = db.entries.iter().filter(|e| e.key != q.key).count();
        let top = query_topk(db, &q.vector, k_max.min(searchable), Some(q.key))?;
        let first_hit = top
            .iter()
            .position(|(i, _)| planar_distance(&db.entries[*i].pose, &q.pose) <= success_radius);
        hits.push(ks.iter().map(|&k| first_hit.map_or(false, |h| h < k)).collect::<Vec<bool>>());
    }
    let recall = (0..ks.len())
        .map(|c| 100.0 * hits.iter().filter(|h| h[c]).count() as f64 / queries.len() as f64)
        .collect();
    Ok(RecallReport {
        ks: ks.to_vec(),
        recall,
        hits,
    })
}

/// One CSV row per labelled report: `label,AR@K...`.
pub fn reports_csv(rows: &[(String, RecallReport)]) -> String {
    let mut s = String::from("config");
    if let Some((_, r)) = rows.first() {
        for k in &r.ks {
            let _ = write!(s, ",AR@{k}");
        }
    }
    s.push('\n');
    for (label, r) in rows {
        s.push_str(label);
        for v in &r.recall {
            let _ = write!(s, ",{v:.2}");
        }
        s.push('\n');
    }
    s
}

/// Aligned plain-text table with `AR@K` columns.
pub fn reports_table(rows: &[(String, RecallReport)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let mut s = format!("{:<width$}", "config");
    if let Some((_, r)) = rows.first() {
        for k in &r.ks {
            let _ = write!(s, "  {:>7}", format!("AR@{k}"));
        }
    }
    s.push('\n');
    for (label, r) in rows {
        let _ = write!(s, "{label:<width$}");
        for v in &r.recall {
            let _ = write!(s, "  {v:>7.2}");
        }
        s.push('\n');
    }
    s
}

/// Evaluates every maximum range with `eval` (which re-voxelizes and
/// re-describes) and collects the reports.
pub fn range_sweep<F>(max_ranges: &[f64], mut eval: F) -> Result<Vec<(f64, RecallReport)>>
where
    F: FnMut(f64) -> Result<RecallReport>,
{
    max_ranges.iter().map(|&r| Ok((r, eval(r)?))).collect()
}

pub fn sweep_csv(rows: &[(f64, RecallReport)]) -> String {
    let labelled: Vec<(String, RecallReport)> = rows.iter().map(|(r, rep)| (format!("{r}"), rep.clone())).collect();
    reports_csv(&labelled).replacen("config", "max_range", 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn at(x: f64, y: f64) -> RigidTransform {
        RigidTransform::from_xy_yaw(x, y, 0.0)
    }

    fn unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn straight_track_every_third() {
        let poses: Vec<_> = (0..10).map(|i| at(i as f64, 0.0)).collect();
        assert_eq!(downsample_track(&poses, 3.0).unwrap(), vec![0, 3, 6, 9]);
        assert_eq!(downsample_track(&poses, 100.0).unwrap(), vec![0]);
        assert!(downsample_track(&poses, 0.0).is_err());
    }

    #[test]
    fn random_walk_spacing() {
        let mut rng = crate::rng::seeded(1, 0);
        let mut p = (0.0, 0.0);
        let poses: Vec<_> = (0..300)
            .map(|_| {
                p.0 += rng.gen_range(-1.0..2.0);
                p.1 += rng.gen_range(-1.0..1.0);
                at(p.0, p.1)
            })
            .collect();
        let keep = downsample_track(&poses, 3.0).unwrap();
        for w in keep.windows(2) {
            assert!(planar_distance(&poses[w[0]], &poses[w[1]]) >= 3.0);
            for skipped in w[0] + 1..w[1] {
                assert!(planar_distance(&poses[w[0]], &poses[skipped]) < 3.0);
            }
        }
    }

    #[test]
    fn exact_match_comes_first_and_identity_holds() {
        let mut rng = crate::rng::seeded(2, 0);
        let mut db = DescriptorDb::new();
        for i in 0..20 {
            db.insert(DbEntry {
                vector: unit(&mut rng, 8),
                pose: at(i as f64 * 10.0, 0.0),
                place_id: i,
                key: i as u64,
            })
            .unwrap();
        }
        let q = db.entries()[7].vector.clone();
        let top = query_topk(&db, &q, 3, None).unwrap();
        assert_eq!(top[0], (7, 0.0));
        for e in db.entries() {
            let cos: f64 = q.iter().zip(&e.vector).map(|(a, b)| a * b).sum();
            let d = euclidean(&q, &e.vector);
            assert!((d * d - (2.0 - 2.0 * cos)).abs() < 1e-10);
        }
        assert!(query_topk(&db, &q, 21, None).is_err());
        assert!(query_topk(&DescriptorDb::new(), &q, 1, None).is_err());
    }

    #[test]
    fn ties_keep_insertion_order() {
        let mut db = DescriptorDb::new();
        for k in 0..3 {
            db.insert(DbEntry { vector: vec![1.0, 0.0], pose: at(0.0, 0.0), place_id: 0, key: k }).unwrap();
        }
        let top = query_topk(&db, &[0.0, 1.0], 3, None).unwrap();
        assert_eq!(top.iter().map(|t| t.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn duplicated_queries_score_full_recall() {
        let mut rng = crate::rng::seeded(3, 0);
        let mut db = DescriptorDb::new();
        let mut queries = Vec::new();
        for i in 0..15 {
            let e = DbEntry { vector: unit(&mut rng, 6), pose: at(i as f64 * 20.0, 0.0), place_id: i, key: i as u64 };
            queries.push(DbEntry { key: 1000 + i as u64, ..e.clone() });
            db.insert(e).unwrap();
        }
        let r = recall_at_k(&db, &queries, &[1, 5, 10], 9.0).unwrap();
        assert_eq!(r.recall, vec![100.0, 100.0, 100.0]);
        let only = recall_at_k(&db, &queries, &[1], 9.0).unwrap();
        assert_eq!(only.ks, vec![1]);
        assert_eq!(only.ar(5), None);
    }

    #[test]
    fn far_database_scores_zero() {
        let mut rng = crate::rng::seeded(4, 0);
        let mut db = DescriptorDb::new();
        for i in 0..12 {
            db.insert(DbEntry { vector: unit(&mut rng, 4), pose: at(1000.0 + i as f64, 0.0), place_id: 0, key: i }).unwrap();
        }
        let q = vec![DbEntry { vector: unit(&mut rng, 4), pose: at(0.0, 0.0), place_id: 1, key: 99 }];
        assert_eq!(recall_at_k(&db, &q, &[1, 5, 10], 9.0).unwrap().ar(10), Some(0.0));
    }

    #[test]
    fn self_match_is_excluded() {
        let mut db = DescriptorDb::new();
        db.insert(DbEntry { vector: vec![1.0, 0.0], pose: at(0.0, 0.0), place_id: 0, key: 1 }).unwrap();
        db.insert(DbEntry { vector: vec![0.0, 1.0], pose: at(50.0, 0.0), place_id: 1, key: 2 }).unwrap();
        let q = vec![db.entries()[0].clone()];
        assert_eq!(recall_at_k(&db, &q, &[1], 9.0).unwrap().ar(1), Some(0.0));
    }

    #[test]
    fn tables_and_sweep_csv() {
        let rep = RecallReport { ks: vec![1, 5, 10], recall: vec![50.0, 75.0, 100.0], hits: vec![] };
        let rows = vec![("gspr".to_string(), rep.clone())];
        assert_eq!(reports_csv(&rows), "config,AR@1,AR@5,AR@10\ngspr,50.00,75.00,100.00\n");
        assert!(reports_table(&rows).starts_with("config     AR@1"));
        let sweep = range_sweep(&[10.0, 20.0, 40.0], |_| Ok(rep.clone())).unwrap();
        let csv = sweep_csv(&sweep);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("max_range,AR@1"));
    }
}
