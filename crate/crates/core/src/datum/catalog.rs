use nalgebra::DMatrix;

use super::{BoxDomain, DatumError, Exponent, LinearDatum, Monomial, NonlinearDatum, PolynomialMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatalogKind {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub kind: CatalogKind,
    pub description: &'static str,
}

pub fn catalog_entries() -> Vec<CatalogEntry> {
    use CatalogKind::*;
    vec![
        CatalogEntry {
            name: "holder-1d",
            kind: Linear,
            description: "R -> R twice, p = (1/2, 1/2)",
        },
        CatalogEntry {
            name: "holder-2d",
            kind: Linear,
            description: "identity on R^2 twice, p = (1/2, 1/2)",
        },
        CatalogEntry {
            name: "loomis-whitney-2d",
            kind: Linear,
            description: "coordinate projections of R^2, p = (1, 1)",
        },
        CatalogEntry {
            name: "loomis-whitney-3d",
            kind: Linear,
            description: "coordinate-plane projections of R^3, p = 1/2",
        },
        CatalogEntry {
            name: "young-2-3",
            kind: Linear,
            description: "(x, y) -> x, y, x - y on R^2, p = 2/3",
        },
        CatalogEntry {
            name: "perturbed-lw-eps",
            kind: Nonlinear,
            description: "B_1 = x + eps y^2, B_2 = y on [-1, 1]^2, p = (1, 1)",
        },
        CatalogEntry {
            name: "bulged-lw-eps",
            kind: Nonlinear,
            description: "B_1 = x - eps x^3 / 3, B_2 = y on [-1, 1]^2, p = (1, 1)",
        },
        CatalogEntry {
            name: "bent-holder-eps",
            kind: Nonlinear,
            description: "B_1 = x, B_2 = x + eps x^2 on [-1, 1], p = (1/2, 1/2)",
        },
        CatalogEntry {
            name: "shear-lw-3d-eps",
            kind: Nonlinear,
            description: "loomis-whitney-3d with quadratic shears of size eps on [-1, 1]^3",
        },
    ]
}

fn row(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v)
}

fn half() -> Exponent {
    Exponent::rational(1, 2).expect("valid")
}

pub fn linear_catalog(name: &str) -> Result<LinearDatum, DatumError> {
    let one = Exponent::rational(1, 1).expect("valid");
    match name {
        "holder-1d" => LinearDatum::new(1, vec![row(&[1.0]), row(&[1.0])], vec![half(), half()]),
        "holder-2d" => LinearDatum::new(
            2,
            vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2)],
            vec![half(), half()],
        ),
        "loomis-whitney-2d" => LinearDatum::new(2, vec![row(&[1.0, 0.0]), row(&[0.0, 1.0])], vec![one, one]),
        "loomis-whitney-3d" => LinearDatum::new(
            3,
            vec![
                DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
                DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
                DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            ],
            vec![half(); 3],
        ),
        "young-2-3" => LinearDatum::new(
            2,
            vec![row(&[1.0, 0.0]), row(&[0.0, 1.0]), row(&[1.0, -1.0])],
            vec![Exponent::rational(2, 3).expect("valid"); 3],
        ),
        other => Err(DatumError::UnknownCatalog(other.to_string())),
    }
}

fn mono(coeff: f64, powers: &[u32]) -> Monomial {
    Monomial {
        coeff,
        powers: powers.to_vec(),
    }
}

pub fn nonlinear_catalog(name: &str, eps: f64) -> Result<NonlinearDatum, DatumError> {
    let one = Exponent::rational(1, 1).expect("valid");
    match name {
        "perturbed-lw-eps" => NonlinearDatum::new(
            name,
            2,
            vec![
                PolynomialMap {
                    in_dim: 2,
                    components: vec![vec![mono(1.0, &[1, 0]), mono(eps, &[0, 2])]],
                },
                PolynomialMap {
                    in_dim: 2,
                    components: vec![vec![mono(1.0, &[0, 1])]],
                },
            ],
            vec![one, one],
            BoxDomain::cube(2, 1.0),
            None,
        ),
        "bulged-lw-eps" => NonlinearDatum::new(
            name,
            2,
            vec![
                PolynomialMap {
                    in_dim: 2,
                    components: vec![vec![mono(1.0, &[1, 0]), mono(-eps / 3.0, &[3, 0])]],
                },
                PolynomialMap {
                    in_dim: 2,
                    components: vec![vec![mono(1.0, &[0, 1])]],
                },
            ],
            vec![one, one],
            BoxDomain::cube(2, 1.0),
            None,
        ),
        "bent-holder-eps" => NonlinearDatum::new(
            name,
            1,
            vec![
                PolynomialMap {
                    in_dim: 1,
                    components: vec![vec![mono(1.0, &[1])]],
                },
                PolynomialMap {
                    in_dim: 1,
                    components: vec![vec![mono(1.0, &[1]), mono(eps, &[2])]],
                },
            ],
            vec![half(), half()],
            BoxDomain::cube(1, 1.0),
            None,
        ),
        "shear-lw-3d-eps" => NonlinearDatum::new(
            name,
            3,
            vec![
                PolynomialMap {
                    in_dim: 3,
                    components: vec![
                        vec![mono(1.0, &[0, 1, 0]), mono(eps, &[2, 0, 0])],
                        vec![mono(1.0, &[0, 0, 1])],
                    ],
                },
                PolynomialMap {
                    in_dim: 3,
                    components: vec![
                        vec![mono(1.0, &[1, 0, 0])],
                        vec![mono(1.0, &[0, 0, 1]), mono(eps, &[0, 2, 0])],
                    ],
                },
                PolynomialMap {
                    in_dim: 3,
                    components: vec![
                        vec![mono(1.0, &[1, 0, 0]), mono(eps, &[0, 0, 2])],
                        vec![mono(1.0, &[0, 1, 0])],
                    ],
                },
            ],
            vec![half(); 3],
            BoxDomain::cube(3, 1.0),
            None,
        ),
        other => Err(DatumError::UnknownCatalog(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_entry_builds_and_scales() {
        for e in catalog_entries() {
            match e.kind {
                CatalogKind::Linear => {
                    let d = linear_catalog(e.name).unwrap();
                    assert!(d.check_scaling().holds, "{}", e.name);
                }
                CatalogKind::Nonlinear => {
                    let d = nonlinear_catalog(e.name, 0.1).unwrap();
                    let l = d.linearization(&vec![0.2; d.n()]).unwrap();
                    assert!(l.check_scaling().holds, "{}", e.name);
                }
            }
        }
    }

    #[test]
    fn perturbed_lw_linearises_to_unit_determinant() {
        let d = nonlinear_catalog("perturbed-lw-eps", 0.1).unwrap();
        let l = d.linearization(&[0.3, 0.5]).unwrap();
        assert_eq!(l.map(0)[(0, 1)], 0.1 * 2.0 * 0.5);
        assert_eq!(d.eval(0, &[0.3, 0.5]), vec![0.3 + 0.1 * 0.25]);
    }

    #[test]
    fn unknown_names_rejected() {
        assert!(matches!(linear_catalog("nope"), Err(DatumError::UnknownCatalog(_))));
    }
}
