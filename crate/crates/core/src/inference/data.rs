use crate::error::{Error, Result};

/// Observed counts, expected counts and optional covariates per region.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    e: Vec<f64>,
    /// Row-major, one row of `p` covariates per region.
    z: Vec<Vec<f64>>,
    covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, e: Vec<f64>) -> Result<Self> {
        let n = y.len();
        Self::with_covariates(y, e, vec![Vec::new(); n], Vec::new())
    }

    pub fn with_covariates(y: Vec<f64>, e: Vec<f64>, z: Vec<Vec<f64>>, names: Vec<String>) -> Result<Self> {
        if e.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: y.len(), got: e.len() });
        }
        if z.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: y.len(), got: z.len() });
        }
        let p = z.first().map_or(0, Vec::len);
        if let Some(row) = z.iter().find(|r| r.len() != p) {
            return Err(Error::DimensionMismatch { expected: p, got: row.len() });
        }
        if names.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: names.len() });
        }
        if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidData(format!("count {v} of region {i} is not a non-negative number")));
        }
        if let Some((i, v)) = e.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidData(format!("expected count {v} of region {i} is not positive")));
        }
        if z.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("covariates must be finite".into()));
        }
        Ok(Self { y, e, z, covariate_names: names })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn expected(&self) -> &[f64] {
        &self.e
    }

    pub fn covariates(&self) -> &[Vec<f64>] {
        &self.z
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn smr(&self) -> Vec<f64> {
        self.y.iter().zip(&self.e).map(|(y, e)| y / e).collect()
    }

    /// Parses whitespace-separated columns `y E [z1 ... zp]`.
    ///
    /// A first line with non-numeric tokens is a header; a column named
    /// `SMR` is dropped. Without a header, a third column equal to `y/E` on
    /// every row is recognised as an SMR column and dropped as well. Lines
    /// starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows: Vec<(usize, Vec<&str>)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .map(|(i, l)| (i, l.split_whitespace().collect()))
            .collect();
        if rows.is_empty() {
            return Err(Error::Parse { line: 1, message: "no data rows".into() });
        }
        let header = if rows[0].1.iter().any(|t| t.parse::<f64>().is_err()) {
            let names: Vec<String> = rows.remove(0).1.iter().map(|t| t.trim_matches('"').to_string()).collect();
            Some(names)
        } else {
            None
        };
        let width = header.as_ref().map_or_else(|| rows.first().map_or(0, |r| r.1.len()), Vec::len);
        if width < 2 {
            return Err(Error::Parse { line: 1, message: "need at least the columns y and E".into() });
        }
        let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(rows.len()); width];
        for (line, toks) in &rows {
            if toks.len() != width {
                return Err(Error::Parse { line: *line, message: format!("expected {width} columns, found {}", toks.len()) });
            }
            for (c, t) in toks.iter().enumerate() {
                let v = t.parse::<f64>().map_err(|_| Error::Parse { line: *line, message: format!("'{t}' is not a number") })?;
                cols[c].push(v);
            }
        }
        let (iy, ie, covs): (usize, usize, Vec<(usize, String)>) = match &header {
            Some(names) => {
                let find = |n: &str| names.iter().position(|h| h.eq_ignore_ascii_case(n));
                let iy = find("y").unwrap_or(0);
                let ie = find("e").unwrap_or(if iy == 1 { 0 } else { 1 });
                if iy == ie {
                    return Err(Error::Parse { line: 1, message: "header names the same column for y and E".into() });
                }
                let covs = names
                    .iter()
                    .enumerate()
                    .filter(|(i, h)| *i != iy && *i != ie && !h.eq_ignore_ascii_case("smr"))
                    .map(|(i, h)| (i, h.clone()))
                    .collect();
                (iy, ie, covs)
            }
            None => {
                let smr_like = width >= 3
                    && cols[2]
                        .iter()
                        .zip(cols[0].iter().zip(&cols[1]))
                        .all(|(s, (y, e))| *e > 0.0 && (s - y / e).abs() <= 1e-6 + 1e-4 * (y / e).abs());
                let first = if smr_like { 3 } else { 2 };
                (0, 1, (first..width).map(|i| (i, format!("z{}", i - first + 1))).collect())
            }
        };
        let n = rows.len();
        let z = (0..n).map(|r| covs.iter().map(|(c, _)| cols[*c][r]).collect()).collect();
        let names = covs.into_iter().map(|(_, n)| n).collect();
        Self::with_covariates(cols[iy].clone(), cols[ie].clone(), z, names)
    }

    /// Writes `y E SMR` columns with a header.
    pub fn serialize(&self) -> String {
        let mut out = String::from("y E SMR");
        for name in &self.covariate_names {
            out.push(' ');
            out.push_str(name);
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&format!("{} {} {}", self.y[i], self.e[i], self.y[i] / self.e[i]));
            for v in &self.z[i] {
                out.push_str(&format!(" {v}"));
            }
            out.push('\n');
        }
        out
    }
}
