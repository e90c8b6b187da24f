//! Fixed network structure: the resource/route incidence matrix and capacities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("incidence matrix has no rows")]
    NoResources,
    #[error("incidence matrix has no columns")]
    NoRoutes,
    #[error("row {row} has {len} entries, expected {expected}")]
    RaggedRow { row: usize, len: usize, expected: usize },
    #[error("capacity vector has {len} entries, expected {expected}")]
    CapacityLength { len: usize, expected: usize },
    #[error("route {route} uses no resource")]
    EmptyRoute { route: usize },
    #[error("capacity of resource {resource} is {value}, must be finite and positive")]
    NonpositiveCapacity { resource: usize, value: f64 },
    #[error("incidence entry ({resource}, {route}) is {value}, must be 0 or 1")]
    NonBinaryEntry { resource: usize, route: usize, value: f64 },
    #[error("vector has length {got}, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
}

/// Raw, unvalidated network description as read from a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTopology {
    /// `incidence[j][i]` is 1 when resource `j` is used by route `i`.
    pub incidence: Vec<Vec<f64>>,
    pub capacities: Vec<f64>,
}

/// Validated network: every route uses at least one resource and every
/// capacity is positive. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    num_routes: usize,
    num_resources: usize,
    /// Row-major J x I incidence.
    incidence: Vec<bool>,
    capacities: Vec<f64>,
}

impl NetworkTopology {
    pub fn validate(raw: &RawTopology) -> Result<Self, TopologyError> {
        let num_resources = raw.incidence.len();
        if num_resources == 0 {
            return Err(TopologyError::NoResources);
        }
        let num_routes = raw.incidence[0].len();
        if num_routes == 0 {
            return Err(TopologyError::NoRoutes);
        }
        if raw.capacities.len() != num_resources {
            return Err(TopologyError::CapacityLength {
                len: raw.capacities.len(),
                expected: num_resources,
            });
        }
        let mut incidence = Vec::with_capacity(num_resources * num_routes);
        for (j, row) in raw.incidence.iter().enumerate() {
            if row.len() != num_routes {
                return Err(TopologyError::RaggedRow { row: j, len: row.len(), expected: num_routes });
            }
            for (i, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    incidence.push(false);
                } else if a == 1.0 {
                    incidence.push(true);
                } else {
                    return Err(TopologyError::NonBinaryEntry { resource: j, route: i, value: a });
                }
            }
        }
        for (j, &c) in raw.capacities.iter().enumerate() {
            if !(c.is_finite() && c > 0.0) {
                return Err(TopologyError::NonpositiveCapacity { resource: j, value: c });
            }
        }
        for i in 0..num_routes {
            if !(0..num_resources).any(|j| incidence[j * num_routes + i]) {
                return Err(TopologyError::EmptyRoute { route: i });
            }
        }
        Ok(Self { num_routes, num_resources, incidence, capacities: raw.capacities.clone() })
    }

    pub fn from_rows(rows: &[&[u8]], capacities: &[f64]) -> Result<Self, TopologyError> {
        Self::validate(&RawTopology {
            incidence: rows.iter().map(|r| r.iter().map(|&a| a as f64).collect()).collect(),
            capacities: capacities.to_vec(),
        })
    }

    /// Single resource of capacity `c` carrying a single route.
    pub fn single(c: f64) -> Result<Self, TopologyError> {
        Self::from_rows(&[&[1]], &[c])
    }

    /// Two resources, route 0 uses both, route `k` uses resource `k-1` only.
    pub fn linear(capacities: [f64; 2]) -> Result<Self, TopologyError> {
        Self::from_rows(&[&[1, 1, 0], &[1, 0, 1]], &capacities)
    }

    pub fn num_routes(&self) -> usize {
        self.num_routes
    }

    pub fn num_resources(&self) -> usize {
        self.num_resources
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    #[inline]
    pub fn uses(&self, resource: usize, route: usize) -> bool {
        self.incidence[resource * self.num_routes + route]
    }

    /// Resources used by `route`.
    pub fn route_resources(&self, route: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_resources).filter(move |&j| self.uses(j, route))
    }

    /// Routes using `resource`.
    pub fn resource_routes(&self, resource: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_routes).filter(move |&i| self.uses(resource, i))
    }

    /// Computes `A x` for a route-indexed vector `x`.
    pub fn resource_load(&self, x: &[f64]) -> Result<Vec<f64>, TopologyError> {
        if x.len() != self.num_routes {
            return Err(TopologyError::DimensionMismatch { got: x.len(), expected: self.num_routes });
        }
        Ok(self.apply(x))
    }

    /// `A x` without the length check.
    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.num_resources)
            .map(|j| self.resource_routes(j).map(|i| x[i]).sum())
            .collect()
    }

    /// Computes `A^T p` for a resource-indexed vector `p`.
    pub(crate) fn apply_transpose(&self, p: &[f64]) -> Vec<f64> {
        (0..self.num_routes)
            .map(|i| self.route_resources(i).map(|j| p[j]).sum())
            .collect()
    }

    pub fn to_raw(&self) -> RawTopology {
        RawTopology {
            incidence: (0..self.num_resources)
                .map(|j| (0..self.num_routes).map(|i| if self.uses(j, i) { 1.0 } else { 0.0 }).collect())
                .collect(),
            capacities: self.capacities.clone(),
        }
    }

    /// Largest capacity, `||C||` in the max norm.
    pub fn max_capacity(&self) -> f64 {
        self.capacities.iter().cloned().fold(0.0, f64::max)
    }
}
