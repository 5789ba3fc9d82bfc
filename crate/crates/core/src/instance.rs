//! Instances, the JSON format, random generation, grid perturbation and the
//! map back to original coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{dist, dist_f64};
use crate::solution::{Solution, Tour};
use crate::Scalar;

/// Customers, depot and vehicle capacity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Instance<T: Scalar = f64> {
    pub depot: [T; 2],
    pub points: Vec<[T; 2]>,
    pub capacity: usize,
}

impl<T: Scalar> Instance<T> {
    pub fn new(depot: [T; 2], points: Vec<[T; 2]>, capacity: usize) -> Result<Self> {
        let inst = Instance {
            depot,
            points,
            capacity,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::parse("points", "n < 1"));
        }
        if self.capacity < 1 {
            return Err(Error::parse("capacity", "k < 1"));
        }
        let finite = |p: &[T; 2]| p[0].is_finite() && p[1].is_finite();
        if !finite(&self.depot) {
            return Err(Error::parse("depot", "non-finite coordinate"));
        }
        if let Some(i) = self.points.iter().position(|p| !finite(p)) {
            return Err(Error::parse(
                "points",
                format!("non-finite coordinate at index {i}"),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("instances always serialize")
    }

    /// Distance from customer `i` to the depot.
    pub fn depot_distance(&self, i: usize) -> T {
        dist(self.points[i], self.depot)
    }
}

fn coord_pair<T: Scalar>(v: &Value, field: &str) -> Result<[T; 2]> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == 2)
        .ok_or_else(|| Error::parse(field, "expected [x, y]"))?;
    let mut out = [T::zero(); 2];
    for (slot, c) in out.iter_mut().zip(arr) {
        let x = c
            .as_f64()
            .ok_or_else(|| Error::parse(field, "coordinate is not a number"))?;
        *slot = T::from_f64_lossy(x);
    }
    Ok(out)
}

/// Parses the instance JSON format; point indices follow file order.
pub fn parse_instance<T: Scalar>(text: &str) -> Result<Instance<T>> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| Error::parse("<document>", e.to_string()))?;
    let obj = root
        .as_object()
        .ok_or_else(|| Error::parse("<document>", "expected an object"))?;
    let depot = coord_pair(
        obj.get("depot")
            .ok_or_else(|| Error::parse("depot", "missing"))?,
        "depot",
    )?;
    let raw_points = obj
        .get("points")
        .ok_or_else(|| Error::parse("points", "missing"))?
        .as_array()
        .ok_or_else(|| Error::parse("points", "expected an array"))?;
    let points = raw_points
        .iter()
        .enumerate()
        .map(|(i, p)| coord_pair(p, &format!("points[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    let capacity = obj
        .get("capacity")
        .ok_or_else(|| Error::parse("capacity", "missing"))?
        .as_i64()
        .ok_or_else(|| Error::parse("capacity", "expected an integer"))?;
    if capacity < 1 {
        return Err(Error::parse("capacity", "k < 1"));
    }
    Instance::new(depot, points, capacity as usize)
}

/// Point distribution for [`generate_instance`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Uniform,
    Clustered,
}

impl std::str::FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Distribution::Uniform),
            "clustered" => Ok(Distribution::Clustered),
            other => Err(Error::Parameter(format!("unknown distribution `{other}`"))),
        }
    }
}

/// Deterministic random instance in the unit square. The depot is drawn
/// uniformly; clustered customers sit within 0.05 of one of ceil(sqrt n)
/// uniform centers.
pub fn generate_instance<T: Scalar>(
    n: usize,
    k: usize,
    dist: Distribution,
    seed: u64,
) -> Result<Instance<T>> {
    if n < 1 {
        return Err(Error::Parameter("n < 1".into()));
    }
    if k < 1 {
        return Err(Error::Parameter("k < 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = |rng: &mut ChaCha8Rng| [rng.gen::<f64>(), rng.gen::<f64>()];
    let depot = unit(&mut rng);
    let raw: Vec<[f64; 2]> = match dist {
        Distribution::Uniform => (0..n).map(|_| unit(&mut rng)).collect(),
        Distribution::Clustered => {
            let centers: Vec<[f64; 2]> = (0..(n as f64).sqrt().ceil() as usize)
                .map(|_| unit(&mut rng))
                .collect();
            (0..n)
                .map(|_| {
                    let c = centers[rng.gen_range(0..centers.len())];
                    let dx = rng.gen_range(-0.05..=0.05);
                    let dy = rng.gen_range(-0.05..=0.05);
                    [(c[0] + dx).clamp(0.0, 1.0), (c[1] + dy).clamp(0.0, 1.0)]
                })
                .collect()
        }
    };
    let cast = |p: [f64; 2]| [T::from_f64_lossy(p[0]), T::from_f64_lossy(p[1])];
    Instance::new(cast(depot), raw.into_iter().map(cast).collect(), k)
}

/// Integer-grid copy of an instance plus the data to map back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbedInstance {
    pub points: Vec<[i64; 2]>,
    pub depot: [i64; 2],
    pub capacity: usize,
    /// Side of the bounding square, a power of two.
    pub side: u64,
    /// Grid units per original unit.
    pub scale: f64,
    /// Original coordinates of grid position (0, 0).
    pub offset: [f64; 2],
    /// Maximum pairwise distance among customers and depot in the input.
    pub d: f64,
    pub epsilon: f64,
}

impl PerturbedInstance {
    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn point_f64(&self, i: usize) -> [f64; 2] {
        [self.points[i][0] as f64, self.points[i][1] as f64]
    }

    pub fn depot_f64(&self) -> [f64; 2] {
        [self.depot[0] as f64, self.depot[1] as f64]
    }

    /// The grid instance as an ordinary instance (grid metric).
    pub fn as_instance(&self) -> Instance<f64> {
        Instance {
            depot: self.depot_f64(),
            points: (0..self.n()).map(|i| self.point_f64(i)).collect(),
            capacity: self.capacity,
        }
    }

    /// Grid coordinate to original coordinate.
    pub fn to_original(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.offset[0] + p[0] / self.scale,
            self.offset[1] + p[1] / self.scale,
        ]
    }
}

/// Snaps every location to the center of its cell in a grid of pitch
/// `d eps / n` and scales by `4n/(eps d)`, so centers land on `4i + 2`.
///
/// The grid is anchored so that the depot sits exactly on a cell center;
/// only customers move. Ties on cell boundaries go to the lower cell.
pub fn perturb<T: Scalar>(inst: &Instance<T>, epsilon: f64) -> Result<PerturbedInstance> {
    inst.validate()?;
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Parameter(format!(
            "epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    let to64 = |p: [T; 2]| [p[0].to_f64_lossy(), p[1].to_f64_lossy()];
    let depot = to64(inst.depot);
    let pts: Vec<[f64; 2]> = inst.points.iter().map(|&p| to64(p)).collect();
    let n = pts.len();

    let mut d: f64 = 0.0;
    let all: Vec<[f64; 2]> = std::iter::once(depot).chain(pts.iter().copied()).collect();
    for (i, a) in all.iter().enumerate() {
        for b in &all[i + 1..] {
            d = d.max(dist_f64(*a, *b));
        }
    }
    if d == 0.0 {
        return Ok(PerturbedInstance {
            points: vec![[2, 2]; n],
            depot: [2, 2],
            capacity: inst.capacity,
            side: 4,
            scale: 1.0,
            offset: [depot[0] - 2.0, depot[1] - 2.0],
            d,
            epsilon,
        });
    }

    let pitch = d * epsilon / n as f64;
    let anchor = [depot[0] - pitch / 2.0, depot[1] - pitch / 2.0];
    let cell = |p: [f64; 2]| -> [i64; 2] {
        let mut c = [0i64; 2];
        for a in 0..2 {
            let v = (p[a] - anchor[a]) / pitch;
            // Lower cell on exact boundaries.
            c[a] = v.ceil() as i64 - 1;
        }
        c
    };
    let depot_cell = cell(depot);
    let cells: Vec<[i64; 2]> = pts.iter().map(|&p| cell(p)).collect();
    let min = |a: usize| {
        cells
            .iter()
            .map(|c| c[a])
            .chain([depot_cell[a]])
            .min()
            .unwrap()
    };
    let shift = [min(0), min(1)];
    let grid = |c: [i64; 2]| [4 * (c[0] - shift[0]) + 2, 4 * (c[1] - shift[1]) + 2];

    let points: Vec<[i64; 2]> = cells.iter().map(|&c| grid(c)).collect();
    let depot_g = grid(depot_cell);
    let max_coord = points
        .iter()
        .flatten()
        .chain(depot_g.iter())
        .copied()
        .max()
        .unwrap();
    let side = ((max_coord + 1) as u64).next_power_of_two().max(4);

    let scale = 4.0 * n as f64 / (epsilon * d);
    // Grid coordinate g maps back to anchor + (g/4 + shift) * pitch; depot_g maps to the depot.
    let offset = [
        depot[0] - depot_g[0] as f64 / scale,
        depot[1] - depot_g[1] as f64 / scale,
    ];
    Ok(PerturbedInstance {
        points,
        depot: depot_g,
        capacity: inst.capacity,
        side,
        scale,
        offset,
        d,
        epsilon,
    })
}

/// Re-expresses a grid solution over the original points. Tour structure is
/// kept; grid waypoints are dropped because they have no meaning off the grid.
pub fn lift_solution(pinst: &PerturbedInstance, sol: &Solution) -> Result<Solution> {
    let n = pinst.n();
    let mut tours = Vec::with_capacity(sol.tours.len());
    for (t, tour) in sol.tours.iter().enumerate() {
        if let Some(&bad) = tour.customers.iter().find(|&&i| i >= n) {
            return Err(Error::Index(format!(
                "tour {t} references customer {bad} but n = {n}"
            )));
        }
        tours.push(Tour::new(tour.customers.clone()));
    }
    Ok(Solution { tours })
}
