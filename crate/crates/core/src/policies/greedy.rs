use rand_chacha::ChaCha8Rng;

use crate::engine::{Occupancy, Policy, PolicyError};
use crate::model::ScaledInstance;

/// Moves queued customers into idle servers along `order` until no listed
/// activity has both a waiting customer and a free server.
pub fn fill_greedily(occ: &mut Occupancy, order: &[(usize, usize)]) {
    for &(i, j) in order {
        let k = occ.y[i].min(occ.z[j]);
        if k > 0 {
            occ.y[i] -= k;
            occ.z[j] -= k;
            occ.psi[(i, j)] += k;
        }
    }
}

/// Work-conserving nonpreemptive baseline: an arrival takes the first free
/// server it can use, a freed server takes the first waiting customer it
/// can serve, both in a fixed activity order.
#[derive(Clone, Debug, PartialEq)]
pub struct GreedyPolicy {
    order: Vec<(usize, usize)>,
}

impl GreedyPolicy {
    /// All activities in (class, station) order.
    pub fn new(inst: &ScaledInstance) -> Self {
        let mut order = Vec::new();
        for i in 0..inst.class_count() {
            for j in 0..inst.station_count() {
                if inst.mu_n[(i, j)] > 0.0 {
                    order.push((i, j));
                }
            }
        }
        GreedyPolicy { order }
    }

    pub fn with_order(order: Vec<(usize, usize)>) -> Self {
        GreedyPolicy { order }
    }
}

impl Policy for GreedyPolicy {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn initialize(&mut self, occ: &mut Occupancy) -> Result<(), PolicyError> {
        fill_greedily(occ, &self.order);
        Ok(())
    }

    fn on_arrival(&mut self, occ: &mut Occupancy, class: usize, _: f64, _: &mut ChaCha8Rng) -> Result<(), PolicyError> {
        if let Some(&(i, j)) = self.order.iter().find(|&&(i, j)| i == class && occ.z[j] > 0) {
            occ.start_service(i, j);
        }
        Ok(())
    }

    fn on_completion(&mut self, occ: &mut Occupancy, _: usize, station: usize, _: f64) -> Result<(), PolicyError> {
        if let Some(&(i, j)) = self.order.iter().find(|&&(i, j)| j == station && occ.y[i] > 0) {
            occ.start_service(i, j);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::Matrix;

    #[test]
    fn fill_respects_order_and_capacity() {
        let mut occ = Occupancy::unassigned(vec![5, 2], &[3, 3]);
        fill_greedily(&mut occ, &[(0, 0), (1, 1), (0, 1)]);
        assert_eq!(occ.psi, Matrix::from_rows(vec![vec![3, 1], vec![0, 2]]));
        assert_eq!(occ.y, vec![1, 0]);
        assert_eq!(occ.z, vec![0, 0]);
    }

    #[test]
    fn fill_skips_unlisted_activities() {
        let mut occ = Occupancy::unassigned(vec![0, 4], &[3, 1]);
        fill_greedily(&mut occ, &[(1, 1)]);
        assert_eq!(occ.y, vec![0, 3]);
        assert_eq!(occ.z, vec![3, 0]);
    }
}
