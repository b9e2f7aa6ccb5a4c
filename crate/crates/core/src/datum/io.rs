use serde::{Deserialize, Serialize};

use super::{
    linear_catalog, nonlinear_catalog, BoxDomain, DatumError, Exponent, LinearDatum, NonlinearDatum, PolynomialMap,
};
use crate::linalg;

/// An exponent as written in JSON: a number or an `"a/b"` string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExponentRepr {
    Number(f64),
    Text(String),
}

impl ExponentRepr {
    pub fn from_exponent(e: &Exponent) -> Self {
        match e.ratio() {
            Some(_) => ExponentRepr::Text(e.to_string()),
            None => ExponentRepr::Number(e.value()),
        }
    }

    pub fn to_exponent(&self) -> Result<Exponent, DatumError> {
        match self {
            ExponentRepr::Number(v) => Ok(Exponent::float(*v)),
            ExponentRepr::Text(s) => Exponent::parse(s),
        }
    }
}

/// On-disk datum description.
///
/// Either `catalog` names a built-in datum (with `eps` for nonlinear
/// entries), or `maps` holds row-major matrices, or `polynomial_maps`
/// with `domain` describes a smooth datum.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatumFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub maps: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exponents: Vec<ExponentRepr>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub polynomial_maps: Vec<PolynomialMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<BoxDomain>,
}

impl DatumFile {
    pub fn from_linear(d: &LinearDatum) -> Self {
        Self {
            n: Some(d.n()),
            maps: d.maps().iter().map(linalg::to_rows).collect(),
            exponents: d.exponents().iter().map(ExponentRepr::from_exponent).collect(),
            ..Default::default()
        }
    }

    pub fn catalog(name: &str, eps: Option<f64>) -> Self {
        Self {
            catalog: Some(name.to_string()),
            eps,
            ..Default::default()
        }
    }

    fn exponents(&self) -> Result<Vec<Exponent>, DatumError> {
        self.exponents.iter().map(|e| e.to_exponent()).collect()
    }

    pub fn is_nonlinear(&self) -> bool {
        !self.polynomial_maps.is_empty()
            || self
                .catalog
                .as_deref()
                .map(|c| nonlinear_catalog(c, 0.0).is_ok())
                .unwrap_or(false)
    }

    pub fn to_linear(&self) -> Result<LinearDatum, DatumError> {
        if let Some(name) = &self.catalog {
            return linear_catalog(name);
        }
        let n = self.n.ok_or(DatumError::ZeroDimension)?;
        let maps = self
            .maps
            .iter()
            .enumerate()
            .map(|(j, rows)| {
                linalg::from_rows(rows, n).ok_or_else(|| DatumError::ShapeMismatch(j + 1, "ragged rows".into()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        LinearDatum::new(n, maps, self.exponents()?)
    }

    /// A smooth datum; linear descriptions become linear maps on `domain`
    /// (default `[-1, 1]^n`).
    pub fn to_nonlinear(&self) -> Result<NonlinearDatum, DatumError> {
        if let Some(name) = &self.catalog {
            if let Ok(d) = nonlinear_catalog(name, self.eps.unwrap_or(0.1)) {
                return Ok(d);
            }
            let lin = linear_catalog(name)?;
            let dom = self.domain.clone().unwrap_or_else(|| BoxDomain::cube(lin.n(), 1.0));
            return NonlinearDatum::from_linear(name.clone(), &lin, dom);
        }
        if self.polynomial_maps.is_empty() {
            let lin = self.to_linear()?;
            let dom = self.domain.clone().unwrap_or_else(|| BoxDomain::cube(lin.n(), 1.0));
            return NonlinearDatum::from_linear("file", &lin, dom);
        }
        let n = self.n.ok_or(DatumError::ZeroDimension)?;
        let dom = self
            .domain
            .clone()
            .ok_or_else(|| DatumError::InvalidDomain("polynomial datum needs a domain".into()))?;
        NonlinearDatum::new("file", n, self.polynomial_maps.clone(), self.exponents()?, dom, None)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("datum serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, DatumError> {
        serde_json::from_str(s).map_err(|e| DatumError::Json(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn bit_exact_round_trip() {
        let d = LinearDatum::new(
            2,
            vec![
                DMatrix::from_row_slice(1, 2, &[0.1 + 0.2, std::f64::consts::PI]),
                DMatrix::from_row_slice(1, 2, &[1e-300, -7.25]),
            ],
            vec![Exponent::rational(2, 3).unwrap(), Exponent::float(0.3333333333333333)],
        )
        .unwrap();
        let json = DatumFile::from_linear(&d).to_json();
        let back = DatumFile::from_json(&json).unwrap().to_linear().unwrap();
        for (a, b) in d.maps().iter().zip(back.maps()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(d.exponents(), back.exponents());
    }

    #[test]
    fn catalog_reference_resolves() {
        let f = DatumFile::from_json(r#"{"catalog": "young-2-3"}"#).unwrap();
        assert_eq!(f.to_linear().unwrap().m(), 3);
        let g = DatumFile::from_json(r#"{"catalog": "perturbed-lw-eps", "eps": 0.2}"#).unwrap();
        assert!(g.is_nonlinear());
        assert_eq!(g.to_nonlinear().unwrap().m(), 2);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(DatumFile::from_json(r#"{"mapz": []}"#).is_err());
    }
}
