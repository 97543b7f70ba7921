//! Primal network simplex for uncapacitated min-cost flow with floating
//! point supplies. Spanning tree stored with parent/thread/successor
//! arrays; entering arcs found by block search.
//!
//! Arcs `0..node_num` are artificial arcs to an extra root node and are
//! never priced. Real arcs may be appended between runs, which keeps the
//! current basis and warm-starts the next run.

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;
const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;
const DIR_UP: i8 = 1;
const DIR_DOWN: i8 = -1;

pub(crate) struct NetworkSimplex {
    node_num: usize,
    tol: f64,

    source: Vec<usize>,
    target: Vec<usize>,
    cost: Vec<f64>,
    flow: Vec<f64>,
    state: Vec<i8>,

    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    pred_dir: Vec<i8>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    dirty_revs: Vec<usize>,

    next_arc: usize,
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,
    pivots: u64,
}

impl NetworkSimplex {
    /// `supply[u] > 0` for sources, `< 0` for sinks. `max_cost` must bound
    /// the cost of every arc that will ever be added.
    pub fn new(supply: &[f64], max_cost: f64) -> Self {
        let n = supply.len();
        let root = n;
        let art_cost = (max_cost.max(0.0) + 1.0) * (n as f64 + 1.0);
        let mut s = NetworkSimplex {
            node_num: n,
            tol: 1e-13 * art_cost,
            source: Vec::with_capacity(n),
            target: Vec::with_capacity(n),
            cost: Vec::with_capacity(n),
            flow: Vec::with_capacity(n),
            state: Vec::with_capacity(n),
            pi: vec![0.0; n + 1],
            parent: vec![NONE; n + 1],
            pred: vec![NONE; n + 1],
            pred_dir: vec![0; n + 1],
            thread: vec![0; n + 1],
            rev_thread: vec![0; n + 1],
            succ_num: vec![0; n + 1],
            last_succ: vec![0; n + 1],
            dirty_revs: Vec::new(),
            next_arc: n,
            in_arc: NONE,
            join: NONE,
            u_in: NONE,
            v_in: NONE,
            u_out: NONE,
            delta: 0.0,
            pivots: 0,
        };
        s.thread[root] = 0;
        s.rev_thread[0] = root;
        s.succ_num[root] = n + 1;
        s.last_succ[root] = if n == 0 { root } else { root - 1 };
        for (u, &b) in supply.iter().enumerate() {
            s.parent[u] = root;
            s.pred[u] = u;
            s.thread[u] = u + 1;
            s.rev_thread[u + 1] = u;
            s.succ_num[u] = 1;
            s.last_succ[u] = u;
            s.state.push(STATE_TREE);
            if b >= 0.0 {
                s.pred_dir[u] = DIR_UP;
                s.pi[u] = 0.0;
                s.source.push(u);
                s.target.push(root);
                s.flow.push(b);
                s.cost.push(0.0);
            } else {
                s.pred_dir[u] = DIR_DOWN;
                s.pi[u] = art_cost;
                s.source.push(root);
                s.target.push(u);
                s.flow.push(-b);
                s.cost.push(art_cost);
            }
        }
        s
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    pub fn add_arc(&mut self, s: usize, t: usize, cost: f64) -> usize {
        self.source.push(s);
        self.target.push(t);
        self.cost.push(cost);
        self.flow.push(0.0);
        self.state.push(STATE_LOWER);
        self.source.len() - 1
    }

    pub fn real_arc_count(&self) -> usize {
        self.source.len() - self.node_num
    }

    /// Iterator over real arcs `(source, target, flow)`.
    pub fn real_flows(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (self.node_num..self.source.len()).map(|a| (self.source[a], self.target[a], self.flow[a]))
    }

    /// Largest flow left on an artificial arc.
    pub fn artificial_flow(&self) -> f64 {
        self.flow[..self.node_num].iter().fold(0.0, |m, &f| m.max(f))
    }

    /// Node potentials; reduced cost of arc `(s, t)` is `c + pi[s] - pi[t]`.
    pub fn potentials(&self) -> &[f64] {
        &self.pi[..self.node_num]
    }

    pub fn pivots(&self) -> u64 {
        self.pivots
    }

    /// Pivots until no real arc has reduced cost below `-tolerance()`.
    pub fn run(&mut self, max_pivots: u64) -> Result<()> {
        let search = self.source.len() - self.node_num;
        if search == 0 {
            return Ok(());
        }
        let block = ((search as f64).sqrt().ceil() as usize).max(10);
        if self.next_arc < self.node_num || self.next_arc >= self.source.len() {
            self.next_arc = self.node_num;
        }
        let start = self.pivots;
        while self.find_entering_arc(block) {
            if self.pivots - start >= max_pivots {
                return Err(Error::Convergence(format!(
                    "network simplex exceeded {max_pivots} pivots"
                )));
            }
            self.find_join_node();
            self.find_leaving_arc();
            self.change_flow();
            self.update_tree_structure();
            self.update_potential();
            self.pivots += 1;
        }
        Ok(())
    }

    #[inline]
    fn reduced(&self, e: usize) -> f64 {
        self.cost[e] + self.pi[self.source[e]] - self.pi[self.target[e]]
    }

    fn find_entering_arc(&mut self, block: usize) -> bool {
        let first = self.node_num;
        let end = self.source.len();
        let mut min = -self.tol;
        let mut best = NONE;
        let mut cnt = block;
        let mut e = self.next_arc;
        for _ in 0..end - first {
            if self.state[e] == STATE_LOWER {
                let c = self.reduced(e);
                if c < min {
                    min = c;
                    best = e;
                }
            }
            e += 1;
            if e == end {
                e = first;
            }
            cnt -= 1;
            if cnt == 0 {
                if best != NONE {
                    break;
                }
                cnt = block;
            }
        }
        if best == NONE {
            return false;
        }
        self.next_arc = e;
        self.in_arc = best;
        true
    }

    fn find_join_node(&mut self) {
        let mut u = self.source[self.in_arc];
        let mut v = self.target[self.in_arc];
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    fn find_leaving_arc(&mut self) {
        // Entering arcs are always at their lower bound.
        let first = self.source[self.in_arc];
        let second = self.target[self.in_arc];
        let mut delta = f64::INFINITY;
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            if self.pred_dir[u] == DIR_UP {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    self.u_out = u;
                    result = 1;
                }
            }
            u = self.parent[u];
        }
        u = second;
        while u != self.join {
            if self.pred_dir[u] == DIR_DOWN {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    self.u_out = u;
                    result = 2;
                }
            }
            u = self.parent[u];
        }
        debug_assert!(result != 0, "uncapacitated cycle must be bounded by the artificial arcs");
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        self.delta = delta;
    }

    fn change_flow(&mut self) {
        let val = self.delta;
        if val > 0.0 {
            self.flow[self.in_arc] += val;
            let mut u = self.source[self.in_arc];
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] -= f64::from(self.pred_dir[u]) * val;
                u = self.parent[u];
            }
            u = self.target[self.in_arc];
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] += f64::from(self.pred_dir[u]) * val;
                u = self.parent[u];
            }
        }
        self.state[self.in_arc] = STATE_TREE;
        let out = self.pred[self.u_out];
        self.flow[out] = 0.0;
        self.state[out] = STATE_LOWER;
    }

    fn update_tree_structure(&mut self) {
        let u_in = self.u_in;
        let v_in = self.v_in;
        let u_out = self.u_out;
        let join = self.join;
        let in_arc = self.in_arc;

        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.source[in_arc] { DIR_UP } else { DIR_DOWN };

            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue =
                if old_rev_thread == v_in { self.thread[old_last_succ] } else { self.thread[v_in] };

            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);

                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;

                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }

            for i in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[i];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }

            let mut tmp_sc = 0usize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc = tmp_sc + self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.source[in_arc] { DIR_UP } else { DIR_DOWN };
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }

        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }

        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let u_in = self.u_in;
        let sigma = self.pi[self.v_in]
            - self.pi[u_in]
            - f64::from(self.pred_dir[u_in]) * self.cost[self.in_arc];
        let end = self.thread[self.last_succ[u_in]];
        let mut u = u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    /// Verifies the tree arrays against a from-scratch traversal. Test aid.
    #[cfg(test)]
    pub fn check_tree(&self) -> std::result::Result<(), String> {
        let total = self.node_num + 1;
        // thread visits every node once, starting at the root
        let mut seen = vec![false; total];
        let mut u = self.node_num;
        for _ in 0..total {
            if seen[u] {
                return Err(format!("thread revisits {u}"));
            }
            seen[u] = true;
            if self.rev_thread[self.thread[u]] != u {
                return Err(format!("rev_thread mismatch at {u}"));
            }
            u = self.thread[u];
        }
        if u != self.node_num {
            return Err("thread is not a single cycle".into());
        }
        for v in 0..self.node_num {
            let p = self.parent[v];
            let e = self.pred[v];
            let ok = match self.pred_dir[v] {
                DIR_UP => self.source[e] == v && self.target[e] == p,
                DIR_DOWN => self.source[e] == p && self.target[e] == v,
                _ => false,
            };
            if !ok || self.state[e] != STATE_TREE {
                return Err(format!("pred arc of {v} inconsistent"));
            }
            if self.reduced(e).abs() > 1e-9 + 1e4 * self.tol {
                return Err(format!("tree arc {e} has reduced cost {}", self.reduced(e)));
            }
        }
        // subtree sizes and last successors from thread order
        for v in 0..total {
            let mut count = 1;
            let mut w = self.thread[v];
            let mut last = v;
            while w != self.node_num && self.is_ancestor(v, w) {
                count += 1;
                last = w;
                w = self.thread[w];
            }
            if count != self.succ_num[v] {
                return Err(format!("succ_num of {v}: {} vs {count}", self.succ_num[v]));
            }
            if last != self.last_succ[v] {
                return Err(format!("last_succ of {v}: {} vs {last}", self.last_succ[v]));
            }
        }
        Ok(())
    }

    #[cfg(test)]
    fn is_ancestor(&self, a: usize, mut w: usize) -> bool {
        while w != NONE {
            if w == a {
                return true;
            }
            w = self.parent[w];
        }
        false
    }
}
