//! Small Euclidean helpers shared by the generic modules.

use crate::Scalar;

pub fn dist<T: Scalar>(a: [T; 2], b: [T; 2]) -> T {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn dist_f64(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Length of the closed walk depot -> order... -> depot.
pub fn route_length<T: Scalar>(order: &[usize], points: &[[T; 2]], depot: [T; 2]) -> T {
    let mut total = T::zero();
    let mut at = depot;
    for &i in order {
        total = total + dist(at, points[i]);
        at = points[i];
    }
    total + dist(at, depot)
}
