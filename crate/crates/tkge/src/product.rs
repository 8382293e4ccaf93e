//! Products of constant-curvature components.
//!
//! A product manifold is described by a signature such as
//! `P20@-0.17,S10@0.29,E10@0`: a comma-separated list of components, each a
//! kind letter (`P` hyperbolic, `E` Euclidean, `S` spherical), a dimension,
//! `@`, and a curvature. The kind letter must agree with the curvature sign
//! (`P` < 0, `E` = 0, `S` > 0).
//!
//! Points of the product are flat `total_dim` vectors; components own
//! consecutive coordinate ranges in declaration order. The squared product
//! distance is the sum of squared component distances accumulated left to
//! right, which the determinism contract relies on.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{self, Curvature};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentSpec {
    pub dim: usize,
    pub curvature: Curvature,
}

impl ComponentSpec {
    pub fn new(dim: usize, curvature: Curvature) -> Result<Self> {
        if dim == 0 {
            return Err(Error::SignatureParse(
                "component dimension must be positive".into(),
            ));
        }
        Ok(ComponentSpec { dim, curvature })
    }

    pub fn kind(&self) -> char {
        let k = self.curvature.get();
        if k < 0.0 {
            'P'
        } else if k > 0.0 {
            'S'
        } else {
            'E'
        }
    }
}

impl fmt::Display for ComponentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}@{}", self.kind(), self.dim, self.curvature)
    }
}

/// Ordered list of components plus precomputed coordinate offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductSignature {
    components: Vec<ComponentSpec>,
    offsets: Vec<usize>,
    total_dim: usize,
}

impl ProductSignature {
    pub fn new(components: Vec<ComponentSpec>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::SignatureParse("signature has no components".into()));
        }
        let mut offsets = Vec::with_capacity(components.len());
        let mut total = 0usize;
        for c in &components {
            offsets.push(total);
            total = total
                .checked_add(c.dim)
                .ok_or_else(|| Error::SignatureParse("total dimension overflows".into()))?;
        }
        Ok(ProductSignature {
            components,
            offsets,
            total_dim: total,
        })
    }

    pub fn components(&self) -> &[ComponentSpec] {
        &self.components
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    /// Coordinate range of component `i` in a flat point.
    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        let start = self.offsets[i];
        start..start + self.components[i].dim
    }

    /// Split a flat vector into per-component slices.
    pub fn split<'a, S>(
        &'a self,
        flat: &'a [S],
    ) -> impl Iterator<Item = (ComponentSpec, &'a [S])> + 'a {
        assert_eq!(flat.len(), self.total_dim, "point has wrong dimension");
        self.components
            .iter()
            .zip(&self.offsets)
            .map(move |(c, &off)| (*c, &flat[off..off + c.dim]))
    }

    /// Sum of squared component distances, accumulated left to right.
    pub fn distance_sq<S: Scalar>(&self, x: &[S], y: &[S]) -> Result<S> {
        assert_eq!(x.len(), self.total_dim);
        assert_eq!(y.len(), self.total_dim);
        let mut acc: Option<S> = None;
        for (i, c) in self.components.iter().enumerate() {
            let r = self.range(i);
            let d = geometry::distance(&x[r.clone()], &y[r], c.curvature)?;
            let sq = d * d;
            acc = Some(match acc {
                None => sq,
                Some(a) => a + sq,
            });
        }
        Ok(acc.expect("signature has at least one component"))
    }

    /// Component-wise exponential map at the origin.
    pub fn exp0<S: Scalar>(&self, v: &[S]) -> Vec<S> {
        assert_eq!(v.len(), self.total_dim);
        let mut out = Vec::with_capacity(self.total_dim);
        for (c, part) in self.split(v) {
            out.extend(geometry::exp0(part, c.curvature));
        }
        out
    }

    /// Component-wise logarithmic map at the origin.
    pub fn log0<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.total_dim);
        let mut out = Vec::with_capacity(self.total_dim);
        for (c, part) in self.split(x) {
            out.extend(geometry::log0(part, c.curvature));
        }
        out
    }

    /// Clamp every hyperbolic component into its domain. Returns how many
    /// components were rescaled.
    pub fn clamp(&self, x: &mut [f64]) -> usize {
        assert_eq!(x.len(), self.total_dim);
        let mut n = 0;
        for (i, c) in self.components.iter().enumerate() {
            if geometry::clamp_to_domain(&mut x[self.range(i)], c.curvature) {
                n += 1;
            }
        }
        n
    }

    /// Validate that every component of `x` lies in its domain.
    pub fn validate(&self, x: &[f64]) -> Result<()> {
        for (c, part) in self.split(x) {
            geometry::validate_point(part, c.curvature)?;
        }
        Ok(())
    }
}

impl fmt::Display for ProductSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.components.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for ProductSignature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::SignatureParse("empty signature".into()));
        }
        let mut components = Vec::new();
        for (i, tok) in s.split(',').enumerate() {
            let tok = tok.trim();
            let err = |msg: String| Error::SignatureParse(format!("component {}: {msg}", i + 1));
            let mut chars = tok.chars();
            let kind = chars
                .next()
                .ok_or_else(|| err("empty component".into()))?;
            let rest: &str = &tok[kind.len_utf8()..];
            let (dim_str, k_str) = rest
                .split_once('@')
                .ok_or_else(|| err(format!("missing '@' in {tok:?}")))?;
            let dim: usize = dim_str
                .parse()
                .map_err(|_| err(format!("bad dimension {dim_str:?}")))?;
            if dim == 0 {
                return Err(err("dimension must be positive".into()));
            }
            let k: f64 = k_str
                .parse()
                .map_err(|_| err(format!("bad curvature {k_str:?}")))?;
            let curvature = Curvature::new(k)
                .map_err(|_| err(format!("curvature must be finite, got {k_str:?}")))?;
            let ok = match kind {
                'P' => k < 0.0,
                'E' => k == 0.0,
                'S' => k > 0.0,
                other => return Err(err(format!("unknown component kind {other:?}"))),
            };
            if !ok {
                return Err(err(format!(
                    "kind {kind} does not match curvature {k} (P needs K < 0, E needs K = 0, S needs K > 0)"
                )));
            }
            components.push(ComponentSpec { dim, curvature });
        }
        ProductSignature::new(components)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display_roundtrip() {
        let s: ProductSignature = "P20@-0.17,S10@0.29,E10@0".parse().unwrap();
        assert_eq!(s.components().len(), 3);
        assert_eq!(s.total_dim(), 40);
        assert_eq!(s.to_string(), "P20@-0.17,S10@0.29,E10@0");
        let again: ProductSignature = s.to_string().parse().unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn parse_rejects_malformed_signatures() {
        for bad in [
            "",
            "P0@-1",
            "P10",
            "P10@",
            "P10@abc",
            "Q10@-1",
            "P10@1",   // P needs negative curvature
            "E10@0.5", // E needs zero
            "S10@-2",  // S needs positive
            "P10@-1,,E5@0",
            "P10@inf",
            "P10@nan",
        ] {
            assert!(bad.parse::<ProductSignature>().is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn split_concat_roundtrip() {
        let s: ProductSignature = "P2@-1,E3@0,S2@0.5".parse().unwrap();
        let flat: Vec<f64> = (0..7).map(|i| i as f64 / 10.0).collect();
        let mut rebuilt = Vec::new();
        for (_, part) in s.split(&flat) {
            rebuilt.extend_from_slice(part);
        }
        assert_eq!(rebuilt, flat);
    }

    #[test]
    fn distance_sq_is_left_to_right_sum_of_squares() {
        let s: ProductSignature = "P2@-1,E2@0,S2@0.3".parse().unwrap();
        let x = [0.1, 0.2, 1.0, -1.0, 0.4, 0.0];
        let y = [-0.3, 0.05, 0.5, 2.0, -0.2, 0.6];
        let total = s.distance_sq(&x, &y).unwrap();
        let mut manual = 0.0;
        for (i, c) in s.components().iter().enumerate() {
            let r = s.range(i);
            let d = geometry::distance(&x[r.clone()], &y[r], c.curvature).unwrap();
            manual = if i == 0 { d * d } else { manual + d * d };
        }
        assert_eq!(total, manual);
    }

    #[test]
    fn exp0_log0_roundtrip_per_component() {
        let s: ProductSignature = "P3@-0.7,E2@0,S3@1.2".parse().unwrap();
        let v = [0.3, -0.1, 0.2, 1.5, -2.0, 0.2, 0.1, -0.3];
        let x = s.exp0(&v);
        let back = s.log0(&x);
        for i in 0..v.len() {
            assert!((back[i] - v[i]).abs() < 1e-10, "coordinate {i}");
        }
    }
}
