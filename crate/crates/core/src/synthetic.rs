//! Cheap two-objective black box over a 6-D mixed space, used to exercise
//! the optimizer and the executor without training networks.

use crate::space::{DimensionSpec, Scale, SearchSpace, Value};
use crate::trial::ObjectiveVector;
use crate::space::Configuration;
use crate::error::Result;

const SPHERE_SHIFT: [f64; 6] = [0.3, 0.7, 0.2, 0.6, 0.4, 1.0 / 3.0];
const RASTRIGIN_SHIFT: [f64; 6] = [0.6, 0.4, 0.5, 0.3, 0.7, 2.0 / 3.0];

pub fn synthetic_space() -> SearchSpace {
    SearchSpace::new(vec![
        DimensionSpec::float("x0", -5.0, 5.0, Scale::Linear),
        DimensionSpec::float("x1", -5.0, 5.0, Scale::Linear),
        DimensionSpec::integer("n0", 0, 20),
        DimensionSpec::integer("n1", 1, 32),
        DimensionSpec::float("rate", 1e-4, 1.0, Scale::Log),
        DimensionSpec::categorical("kind", ["a", "b", "c", "d"].iter().map(|&s| Value::from(s)).collect()),
    ])
    .expect("synthetic space is valid")
}

/// Objective 1 is a negated shifted sphere, objective 2 a negated shifted
/// Rastrigin with a shallow cosine term, both in encoded coordinates.
pub fn synthetic_objectives(space: &SearchSpace, config: &Configuration) -> Result<ObjectiveVector> {
    let u = space.encode(config)?;
    let sphere: f64 = u.iter().zip(SPHERE_SHIFT).map(|(v, s)| (v - s).powi(2)).sum();
    let rastrigin: f64 = u
        .iter()
        .zip(RASTRIGIN_SHIFT)
        .map(|(v, s)| {
            let d = v - s;
            d * d + 0.1 * (1.0 - (6.0 * std::f64::consts::PI * d).cos())
        })
        .sum();
    Ok(ObjectiveVector::new(-sphere, -rastrigin))
}

/// Hypervolume reference point, a few times the nadir of the true Pareto
/// front. Objective vectors that do not dominate it contribute nothing.
pub const SYNTHETIC_REFERENCE: [f64; 2] = [-2.0, -2.0];
