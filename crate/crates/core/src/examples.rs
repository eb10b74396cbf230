//! The worked networks used throughout the docs, tests and CLI defaults.

use crate::model::NetworkSpec;
use crate::num::{q, q_ratio, Matrix, Q};

fn rates(rows: &[&[i64]]) -> Matrix<Q> {
    Matrix::from_rows(rows.iter().map(|r| r.iter().map(|&v| q(v)).collect()).collect())
}

/// Two classes, three unit-staffed stations, two nonbasic activities.
pub fn two_by_three() -> NetworkSpec {
    NetworkSpec::first_order(
        vec![q(8), q(4)],
        rates(&[&[3, 10, 1], &[1, 4, 2]]),
        vec![q(1), q(1), q(1)],
    )
}

/// 2×2 network whose single cycle points out of the null domain.
pub fn outward_cycle() -> NetworkSpec {
    NetworkSpec::first_order(vec![q(13), q(3)], rates(&[&[8, 10], &[3, 6]]), vec![q(1), q(1)])
}

/// 2×2 network whose single cycle points into the null domain.
pub fn inward_cycle() -> NetworkSpec {
    NetworkSpec::first_order(
        vec![q_ratio(15, 2), q(2)],
        rates(&[&[4, 7], &[2, 4]]),
        vec![q(1), q(1)],
    )
}

/// 2×2 network with the cycle running the other way round.
pub fn reversed_cycle() -> NetworkSpec {
    NetworkSpec::first_order(
        vec![q_ratio(7, 2), q_ratio(23, 2)],
        rates(&[&[3, 7], &[6, 11]]),
        vec![q(1), q(1)],
    )
}
