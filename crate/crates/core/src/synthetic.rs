//! Seeded synthetic inputs for tests, benchmarks and the `bench` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::backbone::LayerFeatureSet;
use crate::error::Result;
use crate::graph::InteractionGraph;

/// Block-structured bipartite graph generator.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedClusters {
    pub num_users: usize,
    pub num_items: usize,
    pub clusters: usize,
    /// Edge probability between a user and an item of its own cluster.
    pub p_in: f64,
    /// Edge probability across clusters.
    pub p_out: f64,
    /// Per-user activity multiplier is drawn uniformly from
    /// `[1 - spread, 1 + spread]` and scales both probabilities.
    pub activity_spread: f64,
}

impl PlantedClusters {
    pub fn user_cluster(&self, u: usize) -> usize {
        u * self.clusters / self.num_users
    }

    pub fn item_cluster(&self, i: usize) -> usize {
        i * self.clusters / self.num_items
    }

    /// Samples a graph. Every user gets at least one in-cluster item.
    pub fn generate(&self, seed: u64) -> Result<InteractionGraph> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for u in 0..self.num_users {
            let cu = self.user_cluster(u);
            let before = edges.len();
            let activity = 1.0 + self.activity_spread * (2.0 * rng.random::<f64>() - 1.0);
            for i in 0..self.num_items {
                let p = if self.item_cluster(i) == cu { self.p_in } else { self.p_out };
                if rng.random::<f64>() < p * activity {
                    edges.push((u as u32, i as u32));
                }
            }
            if edges.len() == before {
                let own: Vec<usize> = (0..self.num_items)
                    .filter(|&i| self.item_cluster(i) == cu)
                    .collect();
                edges.push((u as u32, own[rng.random_range(0..own.len())] as u32));
            }
        }
        InteractionGraph::from_edges(self.num_users, self.num_items, edges)
    }
}

/// Feature set with i.i.d. standard normal entries.
pub fn gaussian_features(entities: usize, layers: usize, dim: usize, seed: u64) -> Result<LayerFeatureSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..entities * layers * dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    LayerFeatureSet::new(entities, layers, dim, data)
}
