//! A small directed graph with cycle queries, shared by the wait-for graph
//! and the conflict graph.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiGraph<N: Ord> {
    nodes: BTreeSet<N>,
    edges: BTreeSet<(N, N)>,
}

impl<N: Ord> Default for DiGraph<N> {
    fn default() -> Self {
        DiGraph {
            nodes: BTreeSet::new(),
            edges: BTreeSet::new(),
        }
    }
}

impl<N: Ord + Clone> DiGraph<N> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, n: N) {
        self.nodes.insert(n);
    }

    pub fn add_edge(&mut self, from: N, to: N) {
        self.nodes.insert(from.clone());
        self.nodes.insert(to.clone());
        self.edges.insert((from, to));
    }

    pub fn nodes(&self) -> &BTreeSet<N> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(N, N)> {
        &self.edges
    }

    pub fn has_edge(&self, from: &N, to: &N) -> bool {
        self.edges.contains(&(from.clone(), to.clone()))
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    fn adjacency(&self) -> (Vec<N>, Vec<Vec<usize>>) {
        let order: Vec<N> = self.nodes.iter().cloned().collect();
        let index: BTreeMap<&N, usize> = order.iter().enumerate().map(|(i, n)| (n, i)).collect();
        let mut adj = vec![Vec::new(); order.len()];
        for (a, b) in &self.edges {
            adj[index[a]].push(index[b]);
        }
        (order, adj)
    }

    /// Some cycle as a node sequence `[n0, n1, .., nk]` with an edge from
    /// `nk` back to `n0`, or `None` when the graph is acyclic.
    pub fn find_cycle(&self) -> Option<Vec<N>> {
        let (order, adj) = self.adjacency();
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut color = vec![0u8; order.len()];
        let mut parent = vec![usize::MAX; order.len()];
        for root in 0..order.len() {
            if color[root] != 0 {
                continue;
            }
            let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
            color[root] = 1;
            while let Some(&mut (v, ref mut next)) = stack.last_mut() {
                if let Some(&w) = adj[v].get(*next) {
                    *next += 1;
                    match color[w] {
                        0 => {
                            color[w] = 1;
                            parent[w] = v;
                            stack.push((w, 0));
                        }
                        1 => {
                            let mut cycle = vec![order[v].clone()];
                            let mut cur = v;
                            while cur != w {
                                cur = parent[cur];
                                cycle.push(order[cur].clone());
                            }
                            cycle.reverse();
                            return Some(cycle);
                        }
                        _ => {}
                    }
                } else {
                    color[v] = 2;
                    stack.pop();
                }
            }
        }
        None
    }

    pub fn is_acyclic(&self) -> bool {
        self.find_cycle().is_none()
    }

    /// Strongly connected components that contain at least one cycle
    /// (more than one node, or a self-loop), each as a sorted node set.
    pub fn cyclic_components(&self) -> Vec<BTreeSet<N>> {
        let (order, adj) = self.adjacency();
        let n = order.len();
        // Iterative Tarjan.
        let mut index = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut on_stack = vec![false; n];
        let mut stack = Vec::new();
        let mut next_index = 0;
        let mut out = Vec::new();
        for root in 0..n {
            if index[root] != usize::MAX {
                continue;
            }
            let mut call: Vec<(usize, usize)> = vec![(root, 0)];
            index[root] = next_index;
            low[root] = next_index;
            next_index += 1;
            stack.push(root);
            on_stack[root] = true;
            while let Some(&mut (v, ref mut i)) = call.last_mut() {
                if let Some(&w) = adj[v].get(*i) {
                    *i += 1;
                    if index[w] == usize::MAX {
                        index[w] = next_index;
                        low[w] = next_index;
                        next_index += 1;
                        stack.push(w);
                        on_stack[w] = true;
                        call.push((w, 0));
                    } else if on_stack[w] {
                        low[v] = low[v].min(index[w]);
                    }
                } else {
                    call.pop();
                    if let Some(&(u, _)) = call.last() {
                        low[u] = low[u].min(low[v]);
                    }
                    if low[v] == index[v] {
                        let mut comp = BTreeSet::new();
                        loop {
                            let w = stack.pop().expect("tarjan stack underflow");
                            on_stack[w] = false;
                            comp.insert(order[w].clone());
                            if w == v {
                                break;
                            }
                        }
                        let self_loop = adj[v].contains(&v);
                        if comp.len() > 1 || self_loop {
                            out.push(comp);
                        }
                    }
                }
            }
        }
        out.sort();
        out
    }
}
