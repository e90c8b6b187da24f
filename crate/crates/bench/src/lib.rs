//! Workloads shared by the benchmarks.

use flowshare::{NetworkTopology, Scenario};

/// Linear network with `n` unit-capacity links: route 0 crosses all of
/// them, route `j + 1` uses link `j` only.
pub fn linear_network(n: usize) -> NetworkTopology {
    let rows: Vec<Vec<u8>> = (0..n).map(|j| (0..=n).map(|i| (i == 0 || i == j + 1) as u8).collect()).collect();
    let refs: Vec<&[u8]> = rows.iter().map(|r| r.as_slice()).collect();
    NetworkTopology::from_rows(&refs, &vec![1.0; n]).expect("valid linear network")
}

/// Two-link linear network at load 0.7 per link, Poisson arrivals,
/// exponential and hyperexponential sizes.
pub fn mixed_scenario() -> Scenario {
    Scenario::from_json(
        r#"{
  "topology": { "incidence": [[1, 1, 0], [1, 0, 1]], "capacities": [1.0, 1.0] },
  "policy": { "alpha": 2.0 },
  "traffic": [
    { "interarrival": { "type": "exponential", "rate": 0.3 }, "size": { "type": "exponential", "rate": 1.0 } },
    { "interarrival": { "type": "exponential", "rate": 0.4 },
      "size": { "type": "hyper_exponential", "weights": [0.5, 0.5], "rates": [1.0, 2.0] } },
    { "interarrival": { "type": "exponential", "rate": 0.4 }, "size": { "type": "exponential", "rate": 1.0 } }
  ],
  "initial": { "z0": [1.0, 1.0, 1.0] },
  "experiment": { "horizon": 2.0, "dt": 0.01, "seed": 1 }
}"#,
    )
    .expect("valid scenario")
}
