//! An agent walking a corridor graph toward a goal.
//!
//! Each step moves 1 unit (probability 0.8) or 2 units (0.2) along the
//! current heading, stopping early on reaching a node. At a node the agent
//! keeps its heading with probability 0.5 when the corridor continues
//! straight; otherwise it turns into a perpendicular corridor, preferring
//! those that reduce the Manhattan distance to the goal. It only reverses at
//! dead ends.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::RngState;
use crate::sim::{Episode, Labels, Process};

pub const LONG_STEP_PROB: f64 = 0.2;
pub const KEEP_HEADING_PROB: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heading {
    East,
    North,
    West,
    South,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::East, Heading::North, Heading::West, Heading::South];

    pub fn delta(self) -> [i64; 2] {
        match self {
            Heading::East => [1, 0],
            Heading::North => [0, 1],
            Heading::West => [-1, 0],
            Heading::South => [0, -1],
        }
    }

    pub fn reverse(self) -> Heading {
        match self {
            Heading::East => Heading::West,
            Heading::North => Heading::South,
            Heading::West => Heading::East,
            Heading::South => Heading::North,
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn of(d: [i64; 2]) -> Option<Heading> {
        match (d[0].signum(), d[1].signum(), d[0] != 0 && d[1] != 0) {
            (_, _, true) => None,
            (1, 0, _) => Some(Heading::East),
            (-1, 0, _) => Some(Heading::West),
            (0, 1, _) => Some(Heading::North),
            (0, -1, _) => Some(Heading::South),
            _ => None,
        }
    }
}

/// A decision taken on arriving at a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MazeEvent {
    /// Index of the sample at which the agent stood on the node.
    pub step: usize,
    pub node: [i64; 2],
    /// Number of non-reversing corridors leaving the node.
    pub options: usize,
    pub continued: bool,
}

/// Corridor graph on an integer lattice. Every edge is an axis-aligned
/// segment between two nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MazeSpec {
    pub nodes: Vec<[i64; 2]>,
    pub edges: Vec<[usize; 2]>,
    pub start: usize,
    pub goal: usize,
    pub spacing: i64,
}

/// Per node, the neighbour reached along each heading.
struct Adjacency(Vec<[Option<usize>; 4]>);

impl MazeSpec {
    /// `n × n` grid of corridors `spacing` apart, from `(0, 0)` to the far corner.
    pub fn lattice(n: usize, spacing: i64) -> Self {
        let idx = |i: usize, j: usize| j * n + i;
        let mut nodes = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                nodes.push([i as i64 * spacing, j as i64 * spacing]);
            }
        }
        let mut edges = Vec::new();
        for j in 0..n {
            for i in 0..n {
                if i + 1 < n {
                    edges.push([idx(i, j), idx(i + 1, j)]);
                }
                if j + 1 < n {
                    edges.push([idx(i, j), idx(i, j + 1)]);
                }
            }
        }
        MazeSpec {
            nodes,
            edges,
            start: 0,
            goal: n * n - 1,
            spacing,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adjacency().map(|_| ())
    }

    fn adjacency(&self) -> Result<Adjacency> {
        let n = self.nodes.len();
        let bad = |msg: String| Err(Error::Config(format!("maze: {msg}")));
        if self.start >= n || self.goal >= n {
            return bad("start or goal is not a node".into());
        }
        if self.start == self.goal {
            return bad("start and goal coincide".into());
        }
        let mut seen = HashMap::new();
        for (i, p) in self.nodes.iter().enumerate() {
            if seen.insert(*p, i).is_some() {
                return bad(format!("duplicate node {p:?}"));
            }
        }
        let mut adj = vec![[None; 4]; n];
        for &[a, b] in &self.edges {
            if a >= n || b >= n {
                return bad(format!("edge ({a}, {b}) refers to a missing node"));
            }
            let (pa, pb) = (self.nodes[a], self.nodes[b]);
            let Some(h) = Heading::of([pb[0] - pa[0], pb[1] - pa[1]]) else {
                return bad(format!("edge {pa:?}-{pb:?} is not axis-aligned"));
            };
            if adj[a][h.index()].is_some() || adj[b][h.reverse().index()].is_some() {
                return bad(format!("two corridors leave the same node along {h:?}"));
            }
            for p in &self.nodes {
                let inside = if pa[0] == pb[0] {
                    p[0] == pa[0] && p[1] > pa[1].min(pb[1]) && p[1] < pa[1].max(pb[1])
                } else {
                    p[1] == pa[1] && p[0] > pa[0].min(pb[0]) && p[0] < pa[0].max(pb[0])
                };
                if inside {
                    return bad(format!("node {p:?} lies inside corridor {pa:?}-{pb:?}"));
                }
            }
            adj[a][h.index()] = Some(b);
            adj[b][h.reverse().index()] = Some(a);
        }
        for (i, a) in adj.iter().enumerate() {
            let degree = a.iter().flatten().count();
            if degree == 0 || (degree < 2 && i != self.start && i != self.goal) {
                return bad(format!("node {:?} has degree {degree}", self.nodes[i]));
            }
        }
        let mut reached = vec![false; n];
        let mut queue = VecDeque::from([self.start]);
        reached[self.start] = true;
        while let Some(i) = queue.pop_front() {
            for j in adj[i].iter().flatten() {
                if !reached[*j] {
                    reached[*j] = true;
                    queue.push_back(*j);
                }
            }
        }
        if reached.iter().any(|r| !r) {
            return bad("corridor graph is disconnected".into());
        }
        Ok(Adjacency(adj))
    }

    fn available(&self, adj: &Adjacency, node: usize) -> Vec<Heading> {
        Heading::ALL
            .into_iter()
            .filter(|h| adj.0[node][h.index()].is_some())
            .collect()
    }
}

fn manhattan(a: [i64; 2], b: [i64; 2]) -> i64 {
    (a[0] - b[0]).abs() + (a[1] - b[1]).abs()
}

fn pick_toward_goal(
    rng: &mut RngState,
    options: &[Heading],
    pos: [i64; 2],
    goal: [i64; 2],
) -> Heading {
    let here = manhattan(pos, goal);
    let closer: Vec<Heading> = options
        .iter()
        .copied()
        .filter(|h| {
            let d = h.delta();
            manhattan([pos[0] + d[0], pos[1] + d[1]], goal) < here
        })
        .collect();
    let pool = if closer.is_empty() { options } else { &closer };
    pool[rng.index(pool.len())]
}

fn decide(
    rng: &mut RngState,
    spec: &MazeSpec,
    adj: &Adjacency,
    node: usize,
    heading: Option<Heading>,
) -> (Heading, usize, bool) {
    let pos = spec.nodes[node];
    let goal = spec.nodes[spec.goal];
    let avail = spec.available(adj, node);
    let Some(h) = heading else {
        return (pick_toward_goal(rng, &avail, pos, goal), avail.len(), false);
    };
    let forward: Vec<Heading> = avail.iter().copied().filter(|&a| a != h.reverse()).collect();
    if forward.is_empty() {
        return (h.reverse(), 0, false);
    }
    let straight = forward.contains(&h);
    let perpendicular: Vec<Heading> = forward.iter().copied().filter(|&a| a != h).collect();
    if straight && (perpendicular.is_empty() || rng.uniform01() < KEEP_HEADING_PROB) {
        return (h, forward.len(), true);
    }
    (pick_toward_goal(rng, &perpendicular, pos, goal), forward.len(), false)
}

/// Heading chosen at `node` when arriving with `heading` (`None` at the
/// start). Returns the new heading and whether it equals the old one.
pub fn choose_heading(
    rng: &mut RngState,
    spec: &MazeSpec,
    node: usize,
    heading: Option<Heading>,
) -> Result<(Heading, bool)> {
    let adj = spec.adjacency()?;
    if node >= spec.nodes.len() {
        return Err(Error::Config(format!("maze: no node {node}")));
    }
    let (h, _, continued) = decide(rng, spec, &adj, node, heading);
    Ok((h, continued))
}

/// Runs one episode of at most `max_steps` positions (including the start).
pub fn simulate_maze_episode(rng: &mut RngState, spec: &MazeSpec, max_steps: usize) -> Result<Episode> {
    let adj = spec.adjacency()?;
    if max_steps == 0 {
        return Err(Error::Config("an episode needs at least one step".into()));
    }
    let mut pos = spec.nodes[spec.start];
    let mut heading: Option<Heading> = None;
    let mut at_node = Some(spec.start);
    let mut target = spec.start;
    let mut samples = vec![vec![pos[0] as f64, pos[1] as f64]];
    let mut events = Vec::new();
    let mut reached = false;
    while samples.len() < max_steps {
        if let Some(node) = at_node {
            let (h, options, continued) = decide(rng, spec, &adj, node, heading);
            if heading.is_some() {
                events.push(MazeEvent {
                    step: samples.len() - 1,
                    node: spec.nodes[node],
                    options,
                    continued,
                });
            }
            heading = Some(h);
            target = adj.0[node][h.index()].expect("decided heading has a corridor");
            at_node = None;
        }
        let h = heading.expect("heading set on leaving a node");
        let stride = if rng.uniform01() < LONG_STEP_PROB { 2 } else { 1 };
        let remaining = manhattan(pos, spec.nodes[target]);
        let d = h.delta();
        let len = stride.min(remaining);
        pos = [pos[0] + d[0] * len, pos[1] + d[1] * len];
        samples.push(vec![pos[0] as f64, pos[1] as f64]);
        if len == remaining {
            at_node = Some(target);
            if target == spec.goal {
                reached = true;
                break;
            }
        }
    }
    let mut ep = Episode::new(Process::Maze, samples);
    ep.labels = Labels {
        events: Some(events),
        reached_goal: Some(reached),
        ..Labels::default()
    };
    Ok(ep)
}
