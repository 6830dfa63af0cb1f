//! Small nonparametric statistics used to summarize record sets.

use statrs::distribution::{Binomial, DiscreteCDF};

use super::{ExperimentRecord, Role};

/// Ranks (1-based) with ties given their average rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation; `None` for fewer than two points or a
/// constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&ranks(x), &ranks(y))
}

/// One-sided sign test for a positive median difference. Zero differences
/// are dropped. Returns `(positives, n, p)` with `p = P(X >= positives)`
/// under `X ~ Binomial(n, 1/2)`.
pub fn sign_test_greater(diffs: &[f64]) -> (usize, usize, f64) {
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nonzero.len();
    let k = nonzero.iter().filter(|d| **d > 0.0).count();
    if n == 0 {
        return (0, 0, 1.0);
    }
    let b = Binomial::new(0.5, n as u64).expect("valid binomial");
    let p = if k == 0 { 1.0 } else { 1.0 - b.cdf(k as u64 - 1) };
    (k, n, p)
}

/// A student record joined with the teacher that labeled its data.
#[derive(Debug, Clone, Copy)]
pub struct TeacherStudent<'a> {
    pub teacher: &'a ExperimentRecord,
    pub student: &'a ExperimentRecord,
}

impl TeacherStudent<'_> {
    pub fn source_gain(&self) -> f64 {
        self.student.source_ap - self.teacher.source_ap
    }

    pub fn target_gain(&self) -> f64 {
        self.student.target_ap - self.teacher.target_ap
    }
}

/// Successful students paired with their successful teachers.
pub fn teacher_student_pairs(records: &[ExperimentRecord]) -> Vec<TeacherStudent<'_>> {
    let ok = |r: &&ExperimentRecord| r.status == "ok";
    records
        .iter()
        .filter(ok)
        .filter(|r| r.role == Role::Student)
        .filter_map(|s| {
            records
                .iter()
                .filter(ok)
                .find(|t| t.run_id == s.teacher_ref)
                .map(|t| TeacherStudent { teacher: t, student: s })
        })
        .collect()
}
