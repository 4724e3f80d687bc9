use std::collections::VecDeque;

use mdl_core::graph::{check_small_degree_separation, generate_gnp, Graph, NodeId};
use mdl_core::rng::{substream, Substream};

/// Breadth-first distances from `s`.
fn distances(g: &Graph, s: NodeId) -> Vec<Option<usize>> {
    let mut dist = vec![None; g.n()];
    dist[s as usize] = Some(0);
    let mut queue = VecDeque::from([s]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u as usize].unwrap();
        for &w in g.neighbours(u) {
            if dist[w as usize].is_none() {
                dist[w as usize] = Some(d + 1);
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Every two distinct small nodes are at distance at least 3.
fn separated_by_bfs(g: &Graph, threshold: f64) -> bool {
    let small: Vec<NodeId> = (0..g.n() as NodeId)
        .filter(|&v| g.degree(v) as f64 <= threshold)
        .collect();
    small.iter().all(|&s| {
        let d = distances(g, s);
        small
            .iter()
            .filter(|&&t| t != s)
            .all(|&t| d[t as usize].is_none_or(|x| x >= 3))
    })
}

#[test]
fn separation_agrees_with_bfs_on_small_graphs() {
    let mut disagreements = 0;
    let mut seen = [0usize; 2];
    for (i, p) in [0.15, 0.3, 0.45, 0.6, 0.75].into_iter().enumerate() {
        for draw in 0..400u32 {
            let mut rng = substream(i as u64, Substream::Edges { attempt: draw });
            let g = generate_gnp(8, p, &mut rng).unwrap();
            for threshold in [0.0, 1.0, 2.0, 3.0, 4.5] {
                let fast = check_small_degree_separation(&g, threshold);
                let slow = separated_by_bfs(&g, threshold);
                seen[usize::from(slow)] += 1;
                disagreements += usize::from(fast != slow);
            }
        }
    }
    assert_eq!(disagreements, 0);
    // Both verdicts must actually occur for the comparison to mean anything.
    assert!(seen[0] > 100 && seen[1] > 100, "{seen:?}");
}

#[test]
fn separation_on_paths() {
    // Path 0-1-2-3-4: endpoints have degree 1.
    let path = Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
    assert!(check_small_degree_separation(&path, 1.0));
    assert!(separated_by_bfs(&path, 1.0));
    // Path 0-1-2: both endpoints share the middle node.
    let short = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
    assert!(!check_small_degree_separation(&short, 1.0));
    assert!(!separated_by_bfs(&short, 1.0));
}
