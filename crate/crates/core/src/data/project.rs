//! Two-component PCA for quick visual inspection of feature sets.

use std::fmt::Write as _;
use std::path::Path;

use crate::nn::{Matrix, Rng};
use crate::{Error, Result};

const MAX_ITERATIONS: usize = 10_000;
const TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub tags: Vec<String>,
    pub mean: Vec<f64>,
    /// Unit principal directions, largest variance first.
    pub components: [Vec<f64>; 2],
    /// Sample variance along each component.
    pub variances: [f64; 2],
}

impl Projection {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,tag\n");
        for ((x, y), tag) in self.x.iter().zip(&self.y).zip(&self.tags) {
            writeln!(out, "{x},{y},{}", csv_field(tag)).expect("String write");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn mat_vec(c: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    c.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn remove_component(v: &mut [f64], u: &[f64]) {
    let p = dot(v, u);
    v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
}

/// Leading unit eigenvector of the symmetric PSD matrix `c`, restricted to
/// the complement of `exclude`.
fn power_method(c: &[Vec<f64>], exclude: Option<&[f64]>, scale: f64, rng: &mut Rng) -> Vec<f64> {
    let d = c.len();
    let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    if let Some(u) = exclude {
        remove_component(&mut v, u);
    }
    normalize(&mut v);
    for _ in 0..MAX_ITERATIONS {
        let mut next = mat_vec(c, &v);
        if let Some(u) = exclude {
            remove_component(&mut next, u);
        }
        if normalize(&mut next) <= 1e-12 * scale {
            // `v` lies in the null space; any unit vector there is a valid answer.
            return v;
        }
        let change = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if change < TOLERANCE {
            break;
        }
    }
    v
}

/// Mean-centres `features` and projects every row onto the top two
/// principal directions. The power-method start vectors come from `seed`.
pub fn pca_project_2d(features: &Matrix, tags: &[String], seed: u64) -> Result<Projection> {
    let (n, d) = features.shape();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "projection needs at least 2 rows, got {n}"
        )));
    }
    if tags.len() != n {
        return Err(Error::dims("pca_project_2d", format!("{n} tags"), tags.len()));
    }
    let mean = features.column_means().into_vec();
    let centered: Vec<Vec<f64>> = features
        .iter_rows()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in &centered {
        for i in 0..d {
            for j in i..d {
                cov[i][j] += r[i] * r[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= denom;
            cov[j][i] = cov[i][j];
        }
    }
    let total: f64 = (0..d).map(|i| cov[i][i]).sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument(
            "projection input has zero variance".into(),
        ));
    }

    let mut rng = Rng::new(seed);
    let first = power_method(&cov, None, total, &mut rng);
    let second = if d >= 2 {
        let mut v = power_method(&cov, Some(&first), total, &mut rng);
        for _ in 0..2 {
            remove_component(&mut v, &first);
            normalize(&mut v);
        }
        v
    } else {
        vec![0.0; d]
    };
    let variances = [
        dot(&first, &mat_vec(&cov, &first)),
        dot(&second, &mat_vec(&cov, &second)),
    ];
    let x = centered.iter().map(|r| dot(r, &first)).collect();
    let y = centered.iter().map(|r| dot(r, &second)).collect();
    Ok(Projection {
        x,
        y,
        tags: tags.to_vec(),
        mean,
        components: [first, second],
        variances,
    })
}
