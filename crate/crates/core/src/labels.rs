//! Personality labels derived from Big-Five trait scores.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::pose_io::SubjectId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Trait {
    E,
    A,
    C,
    N,
    OE,
}

impl Trait {
    pub const ALL: [Trait; 5] = [Trait::E, Trait::A, Trait::C, Trait::N, Trait::OE];

    pub fn name(self) -> &'static str {
        match self {
            Trait::E => "E",
            Trait::A => "A",
            Trait::C => "C",
            Trait::N => "N",
            Trait::OE => "OE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Trait::ALL.into_iter().find(|t| t.name().eq_ignore_ascii_case(s.trim()))
    }
}

/// Scores as read from a trait file; `None` marks an empty cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RawScores {
    pub subject_id: SubjectId,
    pub values: [Option<f64>; 5],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraitScores {
    pub subject_id: SubjectId,
    /// In [`Trait::ALL`] order, each in `[0, 1]`.
    pub values: [f64; 5],
}

impl TraitScores {
    pub fn get(&self, t: Trait) -> f64 {
        self.values[t as usize]
    }
}

/// Parse `subject_id,E,A,C,N,OE` (header optional).
pub fn parse_trait_csv(text: &str) -> Result<Vec<RawScores>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("subject_id")) {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 6 {
            return Err(Error::Parse { line: i + 1, msg: format!("expected 6 cells, got {}", cells.len()) });
        }
        let subject_id = cells[0].parse().map_err(|e| Error::Parse { line: i + 1, msg: format!("subject id: {e}") })?;
        let mut values = [None; 5];
        for (v, cell) in values.iter_mut().zip(&cells[1..]) {
            if !cell.is_empty() {
                *v = Some(cell.parse().map_err(|e| Error::Parse { line: i + 1, msg: format!("score {cell:?}: {e}") })?);
            }
        }
        out.push(RawScores { subject_id, values });
    }
    Ok(out)
}

pub fn write_trait_csv(rows: &[RawScores]) -> String {
    let mut s = String::from("subject_id,E,A,C,N,OE\n");
    for r in rows {
        s.push_str(&r.subject_id.to_string());
        for v in &r.values {
            s.push(',');
            if let Some(v) = v {
                s.push_str(&v.to_string());
            }
        }
        s.push('\n');
    }
    s
}

/// Per-trait min-max scaling over the population; a constant trait maps to 0.5.
pub fn normalize_traits(raw: &[RawScores]) -> Result<Vec<TraitScores>> {
    if raw.len() < 2 {
        return Err(Error::Invalid("trait normalization needs at least two subjects".into()));
    }
    let mut cols = [[f64::INFINITY, f64::NEG_INFINITY]; 5];
    for r in raw {
        for (t, v) in r.values.iter().enumerate() {
            let v = v.ok_or_else(|| {
                Error::Invalid(format!("subject {} missing trait {}", r.subject_id, Trait::ALL[t].name()))
            })?;
            cols[t][0] = cols[t][0].min(v);
            cols[t][1] = cols[t][1].max(v);
        }
    }
    Ok(raw
        .iter()
        .map(|r| {
            let mut values = [0.0; 5];
            for (t, out) in values.iter_mut().enumerate() {
                let [lo, hi] = cols[t];
                let v = r.values[t].expect("checked above");
                *out = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            }
            TraitScores { subject_id: r.subject_id, values }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// `(subject, cluster)` sorted by subject; clusters numbered by their
    /// smallest subject id.
    pub assignments: Vec<(SubjectId, usize)>,
    pub clusters: usize,
    /// Set when fewer than the requested clusters could be formed.
    pub note: Option<String>,
}

impl Clustering {
    pub fn cluster_of(&self, id: SubjectId) -> Option<usize> {
        self.assignments.iter().find(|(s, _)| *s == id).map(|(_, c)| *c)
    }
}

/// Agglomerative clustering, Euclidean distance, average linkage.
///
/// Equal merge distances are resolved by the pair with the smallest
/// (min id, max id), a cluster's id being its smallest subject id, so the
/// result does not depend on input order.
pub fn cluster_types(scores: &[TraitScores], k: usize) -> Result<Clustering> {
    if k == 0 || scores.len() < k {
        return Err(Error::Invalid(format!("cannot form {k} clusters from {} subjects", scores.len())));
    }
    let mut pts: Vec<&TraitScores> = scores.iter().collect();
    pts.sort_by_key(|s| s.subject_id);
    if pts.windows(2).any(|w| w[0].subject_id == w[1].subject_id) {
        return Err(Error::Invalid("duplicate subject ids".into()));
    }
    let n = pts.len();
    let dist: Vec<Vec<f64>> = pts
        .iter()
        .map(|a| {
            pts.iter()
                .map(|b| a.values.iter().zip(&b.values).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
                .collect()
        })
        .collect();

    let distinct: BTreeSet<[u64; 5]> = pts.iter().map(|p| p.values.map(f64::to_bits)).collect();
    let target = k.min(distinct.len());
    let note = (target < k)
        .then(|| format!("only {} distinct trait vectors; merged duplicates into {target} clusters", distinct.len()));

    // members stay sorted by index, i.e. by subject id
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let linkage = |a: &[usize], b: &[usize]| {
        let mut s = 0.0;
        for &i in a {
            for &j in b {
                s += dist[i][j];
            }
        }
        s / (a.len() * b.len()) as f64
    };
    while clusters.len() > target {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let d = linkage(&clusters[i], &clusters[j]);
                let (a, b) = (clusters[i][0], clusters[j][0]);
                let key = (a.min(b), a.max(b));
                let better = match best {
                    None => true,
                    Some((bd, bkey, _, _)) => d < bd || (d == bd && key < bkey),
                };
                if better {
                    best = Some((d, key, i, j));
                }
            }
        }
        let (_, _, i, j) = best.expect("at least two clusters");
        let merged = clusters.remove(j);
        clusters[i].extend(merged);
        clusters[i].sort_unstable();
    }
    clusters.sort_by_key(|c| c[0]);
    let pts = &pts;
    let mut assignments: Vec<(SubjectId, usize)> = clusters
        .iter()
        .enumerate()
        .flat_map(|(c, members)| members.iter().map(move |&i| (pts[i].subject_id, c)))
        .collect();
    assignments.sort_unstable();
    Ok(Clustering { assignments, clusters: clusters.len(), note })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TypeLabel {
    Resilient,
    Undercontrolled,
    Overcontrolled,
}

impl TypeLabel {
    pub const ALL: [TypeLabel; 3] = [TypeLabel::Resilient, TypeLabel::Undercontrolled, TypeLabel::Overcontrolled];

    pub fn name(self) -> &'static str {
        match self {
            TypeLabel::Resilient => "resilient",
            TypeLabel::Undercontrolled => "undercontrolled",
            TypeLabel::Overcontrolled => "overcontrolled",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        TypeLabel::ALL.into_iter().find(|t| t.name() == s.trim())
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Name the three clusters from their mean profiles: lowest mean N is
/// resilient, lowest mean E is overcontrolled, the remaining one is
/// undercontrolled.
pub fn name_types(clustering: &Clustering, scores: &[TraitScores]) -> Result<Vec<TypeLabel>> {
    if clustering.clusters != 3 {
        return Err(Error::Invalid(format!("type naming needs 3 clusters, got {}", clustering.clusters)));
    }
    let mut sums = [[0.0f64; 2]; 3];
    let mut counts = [0usize; 3];
    for s in scores {
        let c = clustering
            .cluster_of(s.subject_id)
            .ok_or_else(|| Error::Invalid(format!("subject {} not clustered", s.subject_id)))?;
        sums[c][0] += s.get(Trait::E);
        sums[c][1] += s.get(Trait::N);
        counts[c] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::Invalid("empty cluster".into()));
    }
    let means: Vec<(f64, f64)> =
        (0..3).map(|c| (sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64)).collect();
    let profile = || {
        means
            .iter()
            .enumerate()
            .map(|(c, (e, n))| format!("cluster {c}: E={e:.3} N={n:.3}"))
            .collect::<Vec<_>>()
            .join("; ")
    };
    let unique_min = |f: &dyn Fn(&(f64, f64)) -> f64| -> Result<usize> {
        let min = means.iter().map(f).fold(f64::INFINITY, f64::min);
        let winners: Vec<usize> = (0..3).filter(|&c| f(&means[c]) == min).collect();
        match winners.as_slice() {
            [one] => Ok(*one),
            _ => Err(Error::Ambiguous(format!("tie on lowest mean ({})", profile()))),
        }
    };
    let resilient = unique_min(&|m| m.1)?;
    let over = unique_min(&|m| m.0)?;
    if resilient == over {
        return Err(Error::Ambiguous(format!("cluster {resilient} has both lowest N and lowest E ({})", profile())));
    }
    Ok((0..3)
        .map(|c| {
            if c == resilient {
                TypeLabel::Resilient
            } else if c == over {
                TypeLabel::Overcontrolled
            } else {
                TypeLabel::Undercontrolled
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    Low,
    High,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// HIGH when the score is at or above the population median.
pub fn median_binarize(scores: &[TraitScores], t: Trait) -> Result<Vec<Level>> {
    if scores.len() < 2 {
        return Err(Error::Invalid("median split needs at least two subjects".into()));
    }
    let values: Vec<f64> = scores.iter().map(|s| s.get(t)).collect();
    let m = median(&values);
    Ok(values.iter().map(|&v| if v >= m { Level::High } else { Level::Low }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(id: SubjectId, v: [f64; 5]) -> TraitScores {
        TraitScores { subject_id: id, values: v }
    }

    fn raw(id: SubjectId, e: f64) -> RawScores {
        RawScores { subject_id: id, values: [Some(e), Some(1.0), Some(id as f64), Some(0.0), Some(0.0)] }
    }

    #[test]
    fn min_max_examples() {
        let n = normalize_traits(&[raw(0, 10.0), raw(1, 20.0), raw(2, 30.0)]).unwrap();
        assert_eq!(n.iter().map(|s| s.get(Trait::E)).collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
        assert!(n.iter().all(|s| s.get(Trait::A) == 0.5));
        let again: Vec<RawScores> =
            n.iter().map(|s| RawScores { subject_id: s.subject_id, values: s.values.map(Some) }).collect();
        let twice = normalize_traits(&again).unwrap();
        assert_eq!(twice[1].get(Trait::E), 0.5);
        assert_eq!(twice[2].get(Trait::C), 1.0);
        let mut missing = raw(3, 1.0);
        missing.values[2] = None;
        assert!(normalize_traits(&[raw(0, 1.0), missing]).is_err());
    }

    #[test]
    fn trait_csv_round_trip() {
        let rows = vec![raw(4, 3.5), RawScores { subject_id: 5, values: [None, Some(1.0), None, None, Some(2.0)] }];
        assert_eq!(parse_trait_csv(&write_trait_csv(&rows)).unwrap(), rows);
        assert!(parse_trait_csv("1,2,3").is_err());
    }

    #[test]
    fn singleton_clusters_when_k_equals_n() {
        let s: Vec<_> = (0..4).map(|i| ts(i, [i as f64 * 0.1; 5])).collect();
        let c = cluster_types(&s, 4).unwrap();
        assert_eq!(c.clusters, 4);
        assert_eq!(c.assignments, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn duplicates_reduce_clusters() {
        let s = vec![ts(0, [0.1; 5]), ts(1, [0.1; 5]), ts(2, [0.9; 5])];
        let c = cluster_types(&s, 3).unwrap();
        assert_eq!(c.clusters, 2);
        assert!(c.note.is_some());
    }

    fn three_clusters(means: [(f64, f64); 3]) -> (Clustering, Vec<TraitScores>) {
        let scores: Vec<_> = means.iter().enumerate().map(|(i, &(e, n))| ts(i as i64, [e, 0.5, 0.5, n, 0.5])).collect();
        let c = Clustering { assignments: vec![(0, 0), (1, 1), (2, 2)], clusters: 3, note: None };
        (c, scores)
    }

    #[test]
    fn naming_by_profile() {
        let (c, s) = three_clusters([(0.8, 0.2), (0.8, 0.8), (0.2, 0.8)]);
        assert_eq!(
            name_types(&c, &s).unwrap(),
            vec![TypeLabel::Resilient, TypeLabel::Undercontrolled, TypeLabel::Overcontrolled]
        );
        let (c, s) = three_clusters([(0.8, 0.2), (0.8, 0.2), (0.2, 0.8)]);
        assert!(matches!(name_types(&c, &s), Err(Error::Ambiguous(_))));
        let (c, s) = three_clusters([(0.1, 0.1), (0.8, 0.5), (0.5, 0.8)]);
        assert!(matches!(name_types(&c, &s), Err(Error::Ambiguous(_))));
    }

    #[test]
    fn median_examples() {
        let mk = |v: &[f64]| v.iter().enumerate().map(|(i, &x)| ts(i as i64, [x; 5])).collect::<Vec<_>>();
        use Level::*;
        assert_eq!(median_binarize(&mk(&[0.2, 0.4, 0.6, 0.8]), Trait::E).unwrap(), vec![Low, Low, High, High]);
        assert_eq!(median_binarize(&mk(&[0.3, 0.3, 0.3]), Trait::N).unwrap(), vec![High, High, High]);
        assert_eq!(median_binarize(&mk(&[0.1, 0.5, 0.9]), Trait::A).unwrap(), vec![Low, High, High]);
    }
}
