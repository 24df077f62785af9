//! Network graphs, probing paths and the path–link routing matrix.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path as FsPath;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{PlatoError, Result};
use crate::linalg::Matrix;
use crate::rng;

/// Cap on probing paths for non-tree graphs.
pub const MAX_GENERAL_PATHS: usize = 512;

const CAPACITY_CHOICES_MBPS: [f64; 3] = [100.0, 400.0, 1000.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: usize,
    pub a: usize,
    pub b: usize,
    pub capacity_mbps: f64,
}

/// An undirected (by default) network `G = (V, L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    node_count: usize,
    links: Vec<Link>,
    directed: bool,
    adjacency: Vec<Vec<(usize, usize)>>,
}

/// On-disk topology schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyFile {
    pub nodes: usize,
    pub links: Vec<Link>,
}

impl Network {
    /// Validates and builds an undirected network.
    pub fn new(node_count: usize, links: Vec<Link>) -> Result<Self> {
        Self::with_directedness(node_count, links, false)
    }

    pub fn with_directedness(node_count: usize, links: Vec<Link>, directed: bool) -> Result<Self> {
        if node_count == 0 {
            return Err(PlatoError::Validation("network has no nodes".into()));
        }
        let mut seen = BTreeSet::new();
        for l in &links {
            if !seen.insert(l.id) {
                return Err(PlatoError::Validation(format!("duplicate link id {}", l.id)));
            }
            if l.a >= node_count || l.b >= node_count {
                return Err(PlatoError::Validation(format!(
                    "link {} endpoint out of range (nodes = {node_count})",
                    l.id
                )));
            }
            if l.a == l.b {
                return Err(PlatoError::Validation(format!("link {} is a self-loop", l.id)));
            }
            if !(l.capacity_mbps > 0.0 && l.capacity_mbps.is_finite()) {
                return Err(PlatoError::Validation(format!(
                    "link {} capacity must be positive",
                    l.id
                )));
            }
        }
        if let Some((pos, id)) = seen.iter().enumerate().find(|(i, id)| *i != **id) {
            return Err(PlatoError::Validation(format!(
                "link ids must be contiguous from 0; position {pos} holds id {id}"
            )));
        }
        let mut links = links;
        links.sort_by_key(|l| l.id);

        let mut adjacency = vec![Vec::new(); node_count];
        for l in &links {
            adjacency[l.a].push((l.b, l.id));
            if !directed {
                adjacency[l.b].push((l.a, l.id));
            }
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        let net = Self {
            node_count,
            links,
            directed,
            adjacency,
        };
        let components = net.components();
        if components.len() > 1 {
            let listed: Vec<String> = components
                .iter()
                .skip(1)
                .map(|c| format!("{c:?}"))
                .collect();
            return Err(PlatoError::Validation(format!(
                "graph is disconnected; unreachable component(s) from node 0: {}",
                listed.join(", ")
            )));
        }
        Ok(net)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Sorted `(neighbor, link_id)` pairs.
    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn is_tree(&self) -> bool {
        !self.directed && self.links.len() + 1 == self.node_count
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.node_count).filter(|&v| self.degree(v) == 1).collect()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.capacity_mbps).collect()
    }

    /// Node-by-node 0/1 adjacency matrix.
    pub fn adjacency_matrix(&self) -> Matrix {
        let mut a = Matrix::zeros(self.node_count, self.node_count);
        for l in &self.links {
            a[(l.a, l.b)] = 1.0;
            if !self.directed {
                a[(l.b, l.a)] = 1.0;
            }
        }
        a
    }

    /// Connected components (weakly connected for directed graphs), node 0's first.
    fn components(&self) -> Vec<Vec<usize>> {
        let mut undirected = vec![Vec::new(); self.node_count];
        for l in &self.links {
            undirected[l.a].push(l.b);
            undirected[l.b].push(l.a);
        }
        let mut comp = vec![usize::MAX; self.node_count];
        let mut out = Vec::new();
        for start in 0..self.node_count {
            if comp[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![start];
            comp[start] = id;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for &w in &undirected[v] {
                    if comp[w] == usize::MAX {
                        comp[w] = id;
                        members.push(w);
                        queue.push_back(w);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    /// Stable content hash used in dataset headers.
    pub fn topology_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(&self.to_file()).expect("topology serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_file(&self) -> TopologyFile {
        TopologyFile {
            nodes: self.node_count,
            links: self.links.clone(),
        }
    }

    pub fn from_file(file: TopologyFile) -> Result<Self> {
        Self::new(file.nodes, file.links)
    }
}

/// Uniformly random labeled tree via a Prüfer sequence.
pub fn generate_random_tree(node_count: usize, seed: u64) -> Result<Network> {
    if node_count < 2 {
        return Err(PlatoError::InvalidArgument(format!(
            "a tree needs at least 2 nodes, got {node_count}"
        )));
    }
    let mut rng = rng::stream(seed, "tree", 0);
    let pruefer: Vec<usize> = (0..node_count - 2)
        .map(|_| rng.random_range(0..node_count))
        .collect();
    let mut degree = vec![1usize; node_count];
    for &v in &pruefer {
        degree[v] += 1;
    }
    let mut leaves: BTreeSet<usize> = (0..node_count).filter(|&v| degree[v] == 1).collect();
    let mut edges = Vec::with_capacity(node_count - 1);
    for &v in &pruefer {
        let leaf = *leaves.iter().next().expect("a leaf always exists");
        leaves.remove(&leaf);
        edges.push((leaf.min(v), leaf.max(v)));
        degree[v] -= 1;
        if degree[v] == 1 {
            leaves.insert(v);
        }
    }
    let rest: Vec<usize> = leaves.into_iter().collect();
    edges.push((rest[0], rest[1]));
    edges.sort_unstable();

    let links = edges
        .into_iter()
        .enumerate()
        .map(|(id, (a, b))| Link {
            id,
            a,
            b,
            capacity_mbps: CAPACITY_CHOICES_MBPS[rng.random_range(0..CAPACITY_CHOICES_MBPS.len())],
        })
        .collect();
    Network::new(node_count, links)
}

pub fn load_topology(path: impl AsRef<FsPath>) -> Result<Network> {
    let text = std::fs::read_to_string(path)?;
    parse_topology(&text)
}

pub fn parse_topology(text: &str) -> Result<Network> {
    let file: TopologyFile =
        serde_json::from_str(text).map_err(|e| PlatoError::Format(e.to_string()))?;
    Network::from_file(file)
}

pub fn save_topology(net: &Network, path: impl AsRef<FsPath>) -> Result<()> {
    let json = serde_json::to_string_pretty(&net.to_file())?;
    std::fs::write(path, json)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbePath {
    pub src: usize,
    pub dst: usize,
    /// Node sequence from `src` to `dst`.
    pub nodes: Vec<usize>,
    /// Link ids in traversal order.
    pub links: Vec<usize>,
}

/// The set of probing paths `P`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSet {
    paths: Vec<ProbePath>,
}

impl PathSet {
    pub fn new(paths: Vec<ProbePath>) -> Result<Self> {
        let mut pairs = BTreeSet::new();
        for (i, p) in paths.iter().enumerate() {
            if p.links.is_empty() {
                return Err(PlatoError::Validation(format!("path {i} is empty")));
            }
            if p.src == p.dst {
                return Err(PlatoError::Validation(format!("path {i} has src == dst")));
            }
            if p.nodes.len() != p.links.len() + 1 {
                return Err(PlatoError::Validation(format!(
                    "path {i} node/link counts disagree"
                )));
            }
            if !pairs.insert((p.src, p.dst)) {
                return Err(PlatoError::Validation(format!(
                    "duplicate pair ({}, {})",
                    p.src, p.dst
                )));
            }
        }
        Ok(Self { paths })
    }

    pub fn paths(&self) -> &[ProbePath] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.paths.iter().map(|p| (p.src, p.dst)).collect()
    }

    /// Checks each path against the links of `net`.
    pub fn validate_against(&self, net: &Network) -> Result<()> {
        for (i, p) in self.paths.iter().enumerate() {
            for (k, &lid) in p.links.iter().enumerate() {
                let link = net.links().get(lid).ok_or_else(|| {
                    PlatoError::Validation(format!("path {i} uses unknown link {lid}"))
                })?;
                let (u, v) = (p.nodes[k], p.nodes[k + 1]);
                let ok = (link.a == u && link.b == v) || (!net.is_directed() && link.a == v && link.b == u);
                if !ok {
                    return Err(PlatoError::Validation(format!(
                        "path {i} hop {k} does not follow link {lid}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn bfs_distances(net: &Network, from: usize, reverse: bool) -> Vec<usize> {
    let mut dist = vec![usize::MAX; net.node_count()];
    dist[from] = 0;
    let mut queue = VecDeque::from([from]);
    // Reverse traversal only differs for directed graphs.
    let mut incoming = Vec::new();
    if reverse && net.is_directed() {
        incoming = vec![Vec::new(); net.node_count()];
        for l in net.links() {
            incoming[l.b].push(l.a);
        }
    }
    while let Some(v) = queue.pop_front() {
        let next: Vec<usize> = if reverse && net.is_directed() {
            incoming[v].clone()
        } else {
            net.neighbors(v).iter().map(|&(w, _)| w).collect()
        };
        for w in next {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Shortest path per pair with the lexicographically smallest node sequence.
pub fn enumerate_paths(net: &Network, pairs: &[(usize, usize)]) -> Result<PathSet> {
    let mut cache: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut paths = Vec::with_capacity(pairs.len());
    for &(src, dst) in pairs {
        if src >= net.node_count() || dst >= net.node_count() {
            return Err(PlatoError::InvalidArgument(format!(
                "pair ({src}, {dst}) out of range"
            )));
        }
        let to_dst = cache
            .entry(dst)
            .or_insert_with(|| bfs_distances(net, dst, true));
        if to_dst[src] == usize::MAX {
            return Err(PlatoError::Unreachable { src, dst });
        }
        let mut nodes = vec![src];
        let mut links = Vec::new();
        let mut cur = src;
        while cur != dst {
            // Neighbors are sorted by (node, link id), so the first hit is the
            // smallest next node over its smallest parallel link.
            let &(next, lid) = net
                .neighbors(cur)
                .iter()
                .find(|&&(w, _)| to_dst[w] + 1 == to_dst[cur])
                .expect("bfs layering guarantees a predecessor");
            nodes.push(next);
            links.push(lid);
            cur = next;
        }
        paths.push(ProbePath {
            src,
            dst,
            nodes,
            links,
        });
    }
    PathSet::new(paths)
}

/// Default probing pairs: all leaf–leaf pairs on trees, otherwise all node
/// pairs capped at [`MAX_GENERAL_PATHS`] by a seeded subsample.
pub fn default_probe_pairs(net: &Network, seed: u64) -> Vec<(usize, usize)> {
    let nodes: Vec<usize> = if net.is_tree() {
        net.leaves()
    } else {
        (0..net.node_count()).collect()
    };
    let mut pairs = Vec::new();
    for (i, &a) in nodes.iter().enumerate() {
        for &b in &nodes[i + 1..] {
            pairs.push((a, b));
        }
    }
    if !net.is_tree() && pairs.len() > MAX_GENERAL_PATHS {
        let mut rng = rng::stream(seed, "probe-pairs", 0);
        pairs.shuffle(&mut rng);
        pairs.truncate(MAX_GENERAL_PATHS);
        pairs.sort_unstable();
    }
    pairs
}

/// Binary path × link incidence matrix `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingMatrix {
    entries: Matrix,
    path_index: Vec<(usize, usize)>,
    link_index: Vec<usize>,
}

impl RoutingMatrix {
    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn path_count(&self) -> usize {
        self.entries.rows()
    }

    pub fn link_count(&self) -> usize {
        self.entries.cols()
    }

    /// `(src, dst)` of each row.
    pub fn path_index(&self) -> &[(usize, usize)] {
        &self.path_index
    }

    /// Link id of each column.
    pub fn link_index(&self) -> &[usize] {
        &self.link_index
    }

    pub fn links_on_path(&self, row: usize) -> Vec<usize> {
        self.entries
            .row(row)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn row_sums(&self) -> Vec<usize> {
        (0..self.path_count())
            .map(|i| self.entries.row(i).iter().filter(|&&v| v != 0.0).count())
            .collect()
    }

    /// Numerical rank from the eigenvalues of `RᵀR`.
    pub fn rank(&self) -> usize {
        let gram = self.entries.t_matmul(&self.entries);
        let eig = crate::theorylab::symmetric_eigenvalues(&gram).expect("gram is symmetric");
        let tol = 1e-9 * eig.first().copied().unwrap_or(0.0).max(1.0);
        eig.iter().filter(|&&v| v > tol).count()
    }
}

pub fn build_routing_matrix(net: &Network, paths: &PathSet) -> Result<RoutingMatrix> {
    paths.validate_against(net)?;
    let mut entries = Matrix::zeros(paths.len(), net.link_count());
    for (i, p) in paths.paths().iter().enumerate() {
        for &lid in &p.links {
            entries[(i, lid)] = 1.0;
        }
    }
    Ok(RoutingMatrix {
        entries,
        path_index: paths.pairs(),
        link_index: (0..net.link_count()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(id: usize, a: usize, b: usize) -> Link {
        Link {
            id,
            a,
            b,
            capacity_mbps: 100.0,
        }
    }

    pub(crate) fn chain3() -> Network {
        Network::new(3, vec![link(0, 0, 1), link(1, 1, 2)]).unwrap()
    }

    #[test]
    fn two_node_tree_is_single_link() {
        for seed in 0..5 {
            let t = generate_random_tree(2, seed).unwrap();
            assert_eq!(t.link_count(), 1);
            assert_eq!((t.links()[0].a, t.links()[0].b), (0, 1));
        }
    }

    #[test]
    fn tree_generation_rejects_tiny() {
        assert!(matches!(
            generate_random_tree(1, 0),
            Err(PlatoError::InvalidArgument(_))
        ));
    }

    #[test]
    fn nineteen_node_tree_is_deterministic() {
        let a = generate_random_tree(19, 7).unwrap();
        let b = generate_random_tree(19, 7).unwrap();
        assert_eq!(a.link_count(), 18);
        assert!(a.is_tree());
        assert_eq!(
            serde_json::to_vec(&a.to_file()).unwrap(),
            serde_json::to_vec(&b.to_file()).unwrap()
        );
    }

    #[test]
    fn chain_path_and_routing() {
        let net = chain3();
        let ps = enumerate_paths(&net, &[(0, 2)]).unwrap();
        assert_eq!(ps.paths()[0].links, vec![0, 1]);
        let r = build_routing_matrix(&net, &ps).unwrap();
        assert_eq!(r.entries(), &Matrix::from_rows(&[vec![1.0, 1.0]]));
    }

    #[test]
    fn star_leaf_pairs() {
        // center 0, leaves 1, 2, 3
        let net = Network::new(4, vec![link(0, 0, 1), link(1, 0, 2), link(2, 0, 3)]).unwrap();
        let ps = enumerate_paths(&net, &default_probe_pairs(&net, 0)).unwrap();
        assert_eq!(ps.len(), 3);
        let p12 = &ps.paths()[0];
        assert_eq!((p12.src, p12.dst), (1, 2));
        assert_eq!(p12.links, vec![0, 1]);
        let r = build_routing_matrix(&net, &ps).unwrap();
        assert!(r.row_sums().iter().all(|&s| s == 2));
    }

    #[test]
    fn lexicographic_tie_break_on_cycle() {
        // square 0-1-3, 0-2-3: two shortest paths 0->3, pick via node 1
        let net = Network::new(
            4,
            vec![link(0, 0, 2), link(1, 0, 1), link(2, 1, 3), link(3, 2, 3)],
        )
        .unwrap();
        let ps = enumerate_paths(&net, &[(0, 3)]).unwrap();
        assert_eq!(ps.paths()[0].nodes, vec![0, 1, 3]);
        assert_eq!(ps.paths()[0].links, vec![1, 2]);
    }

    #[test]
    fn unreachable_pair_is_named() {
        let net = Network::with_directedness(3, vec![link(0, 0, 1), link(1, 1, 2)], true).unwrap();
        let err = enumerate_paths(&net, &[(2, 0)]).unwrap_err();
        assert!(matches!(err, PlatoError::Unreachable { src: 2, dst: 0 }));
    }

    #[test]
    fn validation_errors() {
        assert!(Network::new(3, vec![link(0, 0, 1), link(0, 1, 2)]).is_err());
        assert!(Network::new(3, vec![link(0, 0, 0)]).is_err());
        assert!(Network::new(2, vec![link(0, 0, 5)]).is_err());
        let err = Network::new(4, vec![link(0, 0, 1), link(1, 2, 3)]).unwrap_err();
        assert!(err.to_string().contains("[2, 3]"), "{err}");
        assert!(Network::new(3, vec![link(1, 0, 1), link(2, 1, 2)]).is_err());
    }

    #[test]
    fn parse_chain_topology() {
        let net = parse_topology(
            r#"{"nodes":3,"links":[{"id":0,"a":0,"b":1,"capacity_mbps":10.0},{"id":1,"a":1,"b":2,"capacity_mbps":10.0}]}"#,
        )
        .unwrap();
        assert_eq!(net.node_count(), 3);
        assert!(matches!(parse_topology("{nope"), Err(PlatoError::Format(_))));
    }

    #[test]
    fn general_graph_pairs_are_capped() {
        // 40-node ring: 780 pairs > 512
        let links = (0..40).map(|i| link(i, i, (i + 1) % 40)).collect();
        let net = Network::new(40, links).unwrap();
        let pairs = default_probe_pairs(&net, 3);
        assert_eq!(pairs.len(), MAX_GENERAL_PATHS);
        assert_eq!(pairs, default_probe_pairs(&net, 3));
    }
}
