use super::{RateModel, RegimeChain};
use crate::quadrature::adaptive_simpson;

/// Unconditional jump matrix `p̂_ij = ∫ p_ij(y) dF(y|i)` and whether it is
/// irreducible.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedMatrix {
    pub matrix: Vec<Vec<f64>>,
    pub irreducible: bool,
}

const REACH_TOL: f64 = 1e-12;

pub fn embedded_matrix(chain: &RegimeChain) -> EmbeddedMatrix {
    let k = chain.states();
    let matrix: Vec<Vec<f64>> = match chain.rates() {
        RateModel::Frozen => vec![vec![1.0]],
        // age-free jump probabilities integrate against a unit mass
        RateModel::Constant(_) | RateModel::Scaled { .. } => (0..k)
            .map(|i| (0..k).map(|j| chain.p(i, j, 0.0)).collect())
            .collect(),
        RateModel::Tabulated(_) => (0..k)
            .map(|i| {
                let top = truncation_age(chain, i);
                (0..k)
                    .map(|j| {
                        if i == j {
                            return 0.0;
                        }
                        adaptive_simpson(
                            |y| chain.p(i, j, y) * chain.hazard(i, y) * (-chain.lambda_cum(i, y)).exp(),
                            0.0,
                            top,
                            1e-10,
                            1e-14,
                        )
                        .unwrap_or(f64::NAN)
                    })
                    .collect()
            })
            .collect(),
    };
    let irreducible = is_irreducible(&matrix);
    EmbeddedMatrix { matrix, irreducible }
}

fn truncation_age(chain: &RegimeChain, i: usize) -> f64 {
    let mut y = 1.0;
    while chain.lambda_cum(i, y) < 40.0 && y < 1e6 {
        y *= 2.0;
    }
    y
}

/// Every state reaches every other through positive entries.
pub(crate) fn is_irreducible(m: &[Vec<f64>]) -> bool {
    let k = m.len();
    let mut reach: Vec<Vec<bool>> = (0..k)
        .map(|i| (0..k).map(|j| i == j || m[i][j] > REACH_TOL).collect())
        .collect();
    for via in 0..k {
        for i in 0..k {
            if reach[i][via] {
                let row = reach[via].clone();
                for (r, hit) in reach[i].iter_mut().zip(row) {
                    *r |= hit;
                }
            }
        }
    }
    reach.iter().all(|row| row.iter().all(|&b| b))
}
