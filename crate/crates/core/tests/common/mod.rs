//! Test oracles that share no code with the library.
#![allow(dead_code)]

/// Exact optimal transport cost between two weighted point sets on the line
/// with cost |x − y|, solved as a min-cost flow by successive shortest paths.
/// The result is certified: Bellman–Ford potentials on the final residual
/// graph give a feasible dual whose value must match the primal cost.
pub fn transport_lp(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let (na, nb) = (a.len(), b.len());
    let sa: f64 = a.iter().map(|p| p.1).sum();
    let sb: f64 = b.iter().map(|p| p.1).sum();
    // nodes: 0 source, 1..=na supply, na+1..=na+nb demand, na+nb+1 sink
    let n = na + nb + 2;
    let (src, snk) = (0, n - 1);
    let mut g = Graph::new(n);
    for (i, &(_, w)) in a.iter().enumerate() {
        g.add(src, 1 + i, w / sa, 0.0);
    }
    for (j, &(_, w)) in b.iter().enumerate() {
        g.add(1 + na + j, snk, w / sb, 0.0);
    }
    for (i, &(x, _)) in a.iter().enumerate() {
        for (j, &(y, _)) in b.iter().enumerate() {
            g.add(1 + i, 1 + na + j, f64::INFINITY, (x - y).abs());
        }
    }
    let mut shipped = 0.0;
    let mut cost = 0.0;
    while shipped < 1.0 - 1e-14 {
        let (dist, pred) = g.bellman_ford(Some(src));
        if !dist[snk].is_finite() {
            break;
        }
        let mut push = f64::INFINITY;
        let mut v = snk;
        while v != src {
            let e = pred[v].unwrap();
            push = push.min(g.cap[e]);
            v = g.from[e];
        }
        push = push.min(1.0 - shipped);
        let mut v = snk;
        while v != src {
            let e = pred[v].unwrap();
            g.cap[e] -= push;
            g.cap[e ^ 1] += push;
            cost += push * g.cost[e];
            v = g.from[e];
        }
        shipped += push;
    }
    assert!(
        (shipped - 1.0).abs() < 1e-12,
        "transport incomplete: {shipped}"
    );

    // Dual certificate: f_i = −π(a_i), g_j = π(b_j) with π the residual
    // shortest-path potentials from a virtual root.
    let (pi, _) = g.bellman_ford(None);
    let mut dual = 0.0;
    for (i, &(x, w)) in a.iter().enumerate() {
        for (j, &(y, _)) in b.iter().enumerate() {
            let reduced = (x - y).abs() + pi[1 + i] - pi[1 + na + j];
            assert!(
                reduced >= -1e-12,
                "dual infeasible at ({i}, {j}): {reduced}"
            );
        }
        dual -= w / sa * pi[1 + i];
    }
    for (j, &(_, w)) in b.iter().enumerate() {
        dual += w / sb * pi[1 + na + j];
    }
    assert!(
        (dual - cost).abs() <= 1e-12 * (1.0 + cost.abs()),
        "duality gap: primal {cost}, dual {dual}"
    );
    cost
}

struct Graph {
    n: usize,
    from: Vec<usize>,
    to: Vec<usize>,
    cap: Vec<f64>,
    cost: Vec<f64>,
}

impl Graph {
    fn new(n: usize) -> Self {
        Graph {
            n,
            from: vec![],
            to: vec![],
            cap: vec![],
            cost: vec![],
        }
    }

    fn add(&mut self, u: usize, v: usize, cap: f64, cost: f64) {
        for (a, b, c, k) in [(u, v, cap, cost), (v, u, 0.0, -cost)] {
            self.from.push(a);
            self.to.push(b);
            self.cap.push(c);
            self.cost.push(k);
        }
    }

    /// Shortest distances over edges with residual capacity. With no source
    /// every node starts at 0.
    fn bellman_ford(&self, source: Option<usize>) -> (Vec<f64>, Vec<Option<usize>>) {
        let mut dist = vec![if source.is_some() { f64::INFINITY } else { 0.0 }; self.n];
        if let Some(s) = source {
            dist[s] = 0.0;
        }
        let mut pred = vec![None; self.n];
        for _ in 0..self.n {
            let mut changed = false;
            for e in 0..self.from.len() {
                if self.cap[e] <= 1e-15 || !dist[self.from[e]].is_finite() {
                    continue;
                }
                let nd = dist[self.from[e]] + self.cost[e];
                if nd < dist[self.to[e]] - 1e-15 {
                    dist[self.to[e]] = nd;
                    pred[self.to[e]] = Some(e);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        (dist, pred)
    }
}

/// Deterministic uniform draws for test inputs.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }
}
