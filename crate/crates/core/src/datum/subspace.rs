use nalgebra::DMatrix;
use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DatumError, LinearDatum, ScalingReport, SCALING_TOL};
use crate::linalg;

/// Result of testing `dim V <= sum_j p_j dim(L_j V)` on one subspace.
#[derive(Debug, Clone)]
pub struct SubspaceReport {
    /// Orthonormal basis of `V` as columns.
    pub basis: DMatrix<f64>,
    pub dim_v: usize,
    pub image_dims: Vec<usize>,
    pub weighted_image_dim: f64,
    pub satisfied: bool,
    /// Equality with `0 < dim V < n`.
    pub critical: bool,
}

pub fn check_subspace(datum: &LinearDatum, basis: &DMatrix<f64>) -> Result<SubspaceReport, DatumError> {
    let n = datum.n();
    if basis.nrows() != n {
        return Err(DatumError::BasisShape {
            expected: n,
            found: basis.nrows(),
        });
    }
    let k = basis.ncols();
    if k > 0 && linalg::rank(basis) != k {
        return Err(DatumError::DependentBasis);
    }
    let q = linalg::column_space(basis);
    let mut image_dims = Vec::with_capacity(datum.m());
    for (j, l) in datum.maps().iter().enumerate() {
        let by_rank = if k == 0 {
            0
        } else {
            linalg::rank_relative_to(&(l * &q), linalg::op_norm(l))
        };
        let ker = linalg::null_space(l);
        let inter = linalg::subspace_intersection(&q, &ker).ncols();
        if by_rank + inter != k {
            return Err(DatumError::InconsistentImageDimension(j + 1));
        }
        image_dims.push(by_rank);
    }
    let weighted: f64 = image_dims.iter().enumerate().map(|(j, &d)| datum.p(j) * d as f64).sum();
    let (satisfied, equal) = match datum.rational_exponents() {
        Some(ps) => {
            let w: Ratio<i64> = ps
                .iter()
                .zip(&image_dims)
                .map(|(p, &d)| p * Ratio::from_integer(d as i64))
                .sum();
            let dv = Ratio::from_integer(k as i64);
            (dv <= w, dv == w)
        }
        None => (
            k as f64 <= weighted + SCALING_TOL,
            (k as f64 - weighted).abs() <= SCALING_TOL,
        ),
    };
    Ok(SubspaceReport {
        basis: q,
        dim_v: k,
        image_dims,
        weighted_image_dim: weighted,
        satisfied,
        critical: equal && k > 0 && k < n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeSource {
    WholeSpace,
    KernelLattice,
    Coordinate,
    Random,
}

#[derive(Debug, Clone)]
pub struct ProbeWitness {
    pub source: ProbeSource,
    pub report: SubspaceReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Infeasible,
    FeasibleProbable,
}

#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub scaling: ScalingReport,
    pub verdict: Verdict,
    /// Subspaces violating the dimension condition.
    pub witnesses: Vec<ProbeWitness>,
    /// Distinct proper critical subspaces encountered.
    pub criticals: Vec<ProbeWitness>,
    pub subspaces_tested: usize,
}

const LATTICE_CAP: usize = 512;
const COORDINATE_MAX_DIM: usize = 12;
const SUBSPACE_TOL: f64 = 1e-9;

fn is_proper(q: &DMatrix<f64>, n: usize) -> bool {
    q.ncols() > 0 && q.ncols() < n
}

fn push_unique(list: &mut Vec<DMatrix<f64>>, q: DMatrix<f64>) -> bool {
    if list.iter().any(|o| linalg::same_subspace(o, &q, SUBSPACE_TOL)) {
        return false;
    }
    list.push(q);
    true
}

/// Lattice generated by the kernels of the maps under sum and intersection.
fn kernel_lattice(datum: &LinearDatum) -> Vec<DMatrix<f64>> {
    let n = datum.n();
    let mut lattice: Vec<DMatrix<f64>> = Vec::new();
    for l in datum.maps() {
        let k = linalg::null_space(l);
        if is_proper(&k, n) {
            push_unique(&mut lattice, k);
        }
    }
    let mut changed = true;
    while changed && lattice.len() < LATTICE_CAP {
        changed = false;
        let len = lattice.len();
        'outer: for i in 0..len {
            for j in (i + 1)..len {
                let s = linalg::subspace_sum(&lattice[i], &lattice[j]);
                let t = linalg::subspace_intersection(&lattice[i], &lattice[j]);
                for q in [s, t] {
                    if is_proper(&q, n) && push_unique(&mut lattice, q) {
                        changed = true;
                        if lattice.len() >= LATTICE_CAP {
                            break 'outer;
                        }
                    }
                }
            }
        }
    }
    lattice
}

fn coordinate_subspaces(n: usize) -> Vec<DMatrix<f64>> {
    if n > COORDINATE_MAX_DIM {
        return Vec::new();
    }
    let mut out = Vec::new();
    for mask in 1u32..((1u32 << n) - 1) {
        let cols: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let mut q = DMatrix::zeros(n, cols.len());
        for (c, &i) in cols.iter().enumerate() {
            q[(i, c)] = 1.0;
        }
        out.push(q);
    }
    out
}

/// Probe the dimension condition on structured and random subspaces.
///
/// Random subspaces are drawn round by round (one of each dimension per
/// round), so a larger `random_rounds` tests a superset of a smaller one.
pub fn feasibility_probe(
    datum: &LinearDatum,
    random_rounds: usize,
    seed: u64,
) -> Result<FeasibilityReport, DatumError> {
    let n = datum.n();
    let scaling = datum.check_scaling();
    let mut witnesses = Vec::new();
    let mut criticals: Vec<ProbeWitness> = Vec::new();
    let mut tested = 0usize;

    let mut record = |source: ProbeSource, q: &DMatrix<f64>| -> Result<(), DatumError> {
        let report = check_subspace(datum, q)?;
        tested += 1;
        if !report.satisfied {
            witnesses.push(ProbeWitness {
                source,
                report: report.clone(),
            });
        }
        if report.critical
            && !criticals
                .iter()
                .any(|c| linalg::same_subspace(&c.report.basis, &report.basis, SUBSPACE_TOL))
        {
            criticals.push(ProbeWitness { source, report });
        }
        Ok(())
    };

    record(ProbeSource::WholeSpace, &DMatrix::identity(n, n))?;
    for q in kernel_lattice(datum) {
        record(ProbeSource::KernelLattice, &q)?;
    }
    for q in coordinate_subspaces(n) {
        record(ProbeSource::Coordinate, &q)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random_rounds {
        for d in 1..n {
            let g = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
            if linalg::rank(&g) == d {
                record(ProbeSource::Random, &g)?;
            }
        }
    }

    let verdict = if scaling.holds && witnesses.is_empty() {
        Verdict::FeasibleProbable
    } else {
        Verdict::Infeasible
    };
    Ok(FeasibilityReport {
        scaling,
        verdict,
        witnesses,
        criticals,
        subspaces_tested: tested,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datum::linear_catalog;

    #[test]
    fn axes_are_critical_for_loomis_whitney() {
        let d = linear_catalog("loomis-whitney-2d").unwrap();
        let y = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let r = check_subspace(&d, &y).unwrap();
        assert_eq!(r.dim_v, 1);
        assert_eq!(r.weighted_image_dim, 1.0);
        assert!(r.satisfied && r.critical);
    }

    #[test]
    fn dependent_basis_rejected() {
        let d = linear_catalog("loomis-whitney-2d").unwrap();
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(check_subspace(&d, &b), Err(DatumError::DependentBasis)));
    }

    #[test]
    fn probe_finds_both_axes() {
        let d = linear_catalog("loomis-whitney-2d").unwrap();
        let r = feasibility_probe(&d, 50, 3).unwrap();
        assert_eq!(r.verdict, Verdict::FeasibleProbable);
        assert_eq!(r.criticals.len(), 2);
    }

    #[test]
    fn probe_flags_failed_scaling() {
        let d = LinearDatum::from_floats(
            2,
            vec![
                DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
                DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            ],
            &[0.5, 0.5],
        )
        .unwrap();
        let r = feasibility_probe(&d, 5, 1).unwrap();
        assert_eq!(r.verdict, Verdict::Infeasible);
        assert!(!r.scaling.holds);
    }

    #[test]
    fn probe_flags_kernel_witness() {
        let d = LinearDatum::from_floats(
            2,
            vec![
                DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
                DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            ],
            &[1.0, 1.0],
        )
        .unwrap();
        let r = feasibility_probe(&d, 0, 0).unwrap();
        assert_eq!(r.verdict, Verdict::FeasibleProbable);
        let d2 = LinearDatum::from_floats(
            2,
            vec![
                DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
                DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            ],
            &[0.5, 1.0],
        )
        .unwrap();
        let r2 = feasibility_probe(&d2, 0, 0).unwrap();
        assert_eq!(r2.verdict, Verdict::Infeasible);
        assert!(r2.witnesses.iter().any(|w| w.report.dim_v == 1));
    }
}
